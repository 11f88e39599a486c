// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>

#include "mlva/tensor.hpp"

namespace mlva {

template <typename Scalar>
using LossFn = std::function<Tensor<Scalar>(Graph<Scalar>&)>;

/// Largest relative disagreement between the analytic gradient and central
/// differences, |a - n| / max(|a|, |n|, 1e-8), over every coordinate of
/// every parameter. `loss` must rebuild its graph from the current values.
template <typename Scalar>
double finite_diff_check(const LossFn<Scalar>& loss, std::span<Tensor<Scalar>> params,
                         double h = 1e-5) {
  if (!(h > 0)) throw ConfigError("finite_diff_check: step must be positive");
  auto evaluate = [&]() {
    Graph<Scalar> g;
    const double v = static_cast<double>(loss(g).item());
    if (!std::isfinite(v)) throw NumericalError("finite_diff_check: loss is not finite");
    return v;
  };
  for (auto& p : params) p.zero_grad();
  {
    Graph<Scalar> g;
    Tensor<Scalar> l = loss(g);
    if (!std::isfinite(static_cast<double>(l.item()))) {
      throw NumericalError("finite_diff_check: loss is not finite");
    }
    g.backward(l);
  }
  double worst = 0.0;
  for (auto& p : params) {
    const Matrix<Scalar> analytic = p.grad();
    auto& value = p.mutable_value();
    for (Index i = 0; i < value.size(); ++i) {
      Scalar& x = value.data()[i];
      const Scalar saved = x;
      x = static_cast<Scalar>(saved + h);
      const double up = evaluate();
      x = static_cast<Scalar>(saved - h);
      const double down = evaluate();
      x = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = static_cast<double>(analytic.data()[i]);
      const double err =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace mlva
