// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "mlva/tensor.hpp"

namespace mlva {

struct AdamWOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double weight_decay = 0.01;
  double eps = 1e-8;
};

/// First/second moment buffers, one pair per parameter, plus the step count.
template <typename Scalar>
struct AdamWState {
  std::vector<Matrix<Scalar>> first_moment;
  std::vector<Matrix<Scalar>> second_moment;
  std::int64_t step = 0;

  AdamWState() = default;

  explicit AdamWState(std::span<const Tensor<Scalar>> params) {
    first_moment.reserve(params.size());
    second_moment.reserve(params.size());
    for (const auto& p : params) {
      first_moment.push_back(Matrix<Scalar>::Zero(p.rows(), p.cols()));
      second_moment.push_back(Matrix<Scalar>::Zero(p.rows(), p.cols()));
    }
  }
};

/// One AdamW update with weight decay decoupled from the adaptive step:
///   p -= lr * wd * p
///   m = b1 m + (1 - b1) g,  v = b2 v + (1 - b2) g^2
///   p -= lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
template <typename Scalar>
void adamw_step(std::span<Tensor<Scalar>> params, std::span<const Matrix<Scalar>> grads,
                AdamWState<Scalar>& state, const AdamWOptions& opt = {}) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw DimensionError("adamw_step: " + std::to_string(params.size()) + " params, " +
                         std::to_string(grads.size()) + " grads, " +
                         std::to_string(state.first_moment.size()) + " moment buffers");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& p = params[k];
    const auto same = [&](const Matrix<Scalar>& m) {
      return m.rows() == p.rows() && m.cols() == p.cols();
    };
    if (!same(grads[k]) || !same(state.first_moment[k]) || !same(state.second_moment[k])) {
      throw DimensionError("adamw_step: shape mismatch for parameter " + std::to_string(k) + " " +
                           p.shape_str());
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const auto bc1 = static_cast<Scalar>(1.0 - std::pow(opt.beta1, t));
  const auto bc2 = static_cast<Scalar>(1.0 - std::pow(opt.beta2, t));
  const auto lr = static_cast<Scalar>(opt.lr);
  const auto b1 = static_cast<Scalar>(opt.beta1);
  const auto b2 = static_cast<Scalar>(opt.beta2);
  const auto decay = static_cast<Scalar>(1.0 - opt.lr * opt.weight_decay);
  const auto eps = static_cast<Scalar>(opt.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& value = params[k].mutable_value();
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    const auto& g = grads[k];
    value *= decay;
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseAbs2();
    value.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
  }
}

/// Uses each parameter's accumulated gradient (zeros where none was written).
template <typename Scalar>
void adamw_step(std::span<Tensor<Scalar>> params, AdamWState<Scalar>& state,
                const AdamWOptions& opt = {}) {
  std::vector<Matrix<Scalar>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.push_back(p.grad());
  adamw_step(params, std::span<const Matrix<Scalar>>(grads), state, opt);
}

}  // namespace mlva
