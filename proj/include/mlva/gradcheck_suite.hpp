// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mlva/alignment.hpp"
#include "mlva/dataset.hpp"
#include "mlva/encoders.hpp"
#include "mlva/model.hpp"

namespace mlva {

struct GradcheckResult {
  std::string name;
  double max_rel_error = 0.0;
  /// Largest |analytic gradient| over the output biases that softmax
  /// cross-entropy is invariant to; these are exactly zero in exact
  /// arithmetic, so they are checked against zero instead of by differences.
  double max_invariant_grad = 0.0;
  Index trials = 0;
  Index coordinates = 0;  // differenced coordinates per trial
};

struct GradcheckOptions {
  std::uint64_t seed = 0;
  Index trials = 3;
  double step = 1e-5;
  /// Multiplies the fan-in initialization of the toy model. Larger weights
  /// engage the head nonlinearities, which keeps directions that feed every
  /// logit equally from having gradients near the rounding floor of the
  /// differences.
  double init_scale = 2.0;
  AlignmentConfig align;  // lambdas of 0 are replaced by 1 so every term is checked
};

/// Hand-built 2-sample batch: short token sequences, a few frames, spans for
/// qa and moment samples.
std::vector<Sample> toy_batch(TaskKind task, std::uint64_t seed);
ModelDims toy_dims();

/// Fan-in initialization of toy_dims() in double, multiplied by `scale`.
ModelParams<double> toy_model(std::uint64_t seed, double scale);

/// Names of parameters whose gradient vanishes identically under softmax
/// cross-entropy (a shared offset on every logit).
bool is_shift_invariant_parameter(const std::string& name);

/// Central-difference checks in double precision of the full training loss
/// on toy batches of each task, with every applicable loss term active.
std::vector<GradcheckResult> run_gradcheck_suite(const GradcheckOptions& opt);

}  // namespace mlva
