// SPDX-License-Identifier: Apache-2.0
#include "mlva/gradcheck_suite.hpp"

#include <random>

#include "mlva/gradcheck.hpp"

namespace mlva {

ModelDims toy_dims() {
  ModelDims d;
  d.vocab_size = 12;
  d.embed_dim = 3;
  d.hidden = 4;
  d.static_dim = 3;
  d.motion_dim = 2;
  return d;
}

std::vector<Sample> toy_batch(TaskKind task, std::uint64_t seed) {
  const ModelDims d = toy_dims();
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  auto token = [&] { return static_cast<Token>(2 + rng() % static_cast<std::uint64_t>(d.vocab_size - 2)); };
  auto tokens = [&](std::size_t n) {
    TokenSeq t;
    for (std::size_t i = 0; i < n; ++i) t.push_back(token());
    return t;
  };
  std::vector<Sample> out;
  for (int k = 0; k < 2; ++k) {
    Sample s;
    s.id = "toy-" + std::to_string(k);
    s.static_dim = d.static_dim;
    s.motion_dim = d.motion_dim;
    s.task = task;
    s.frames = Matrix<float>(5, d.frame_dim());
    for (Index i = 0; i < s.frames.size(); ++i) s.frames.data()[i] = normal(rng);
    s.tokens = tokens(3);
    if (task == TaskKind::kQa) {
      QaAnnotation qa;
      qa.candidates = {tokens(1), tokens(2), tokens(1)};
      qa.correct_index = static_cast<Index>(rng() % 3);
      qa.span = Span{1 + k, 2 + k};
      s.qa = qa;
    } else if (task == TaskKind::kMoment) {
      s.moment = Span{k, 2 + k};
    }
    s.validate(d.vocab_size);
    out.push_back(std::move(s));
  }
  return out;
}

ModelParams<double> toy_model(std::uint64_t seed, double scale) {
  auto model = init_model<double>(toy_dims(), seed);
  for (auto& n : model.named()) n.tensor->mutable_value() *= scale;
  return model;
}

bool is_shift_invariant_parameter(const std::string& name) {
  return name == "qa.b_out" || name == "moment.start.b_out" || name == "moment.end.b_out";
}

std::vector<GradcheckResult> run_gradcheck_suite(const GradcheckOptions& opt) {
  if (opt.trials < 1) throw ConfigError("gradcheck: trials must be positive");
  AlignmentConfig align = opt.align;
  align.validate();
  if (align.lambda1 == 0) align.lambda1 = 1.0;
  if (align.lambda2 == 0) align.lambda2 = 1.0;

  std::vector<GradcheckResult> results;
  for (TaskKind task : {TaskKind::kQa, TaskKind::kMoment, TaskKind::kRetrieval}) {
    AlignmentConfig cfg = align;
    if (task == TaskKind::kRetrieval) cfg.lambda2 = 0.0;
    GradcheckResult r;
    r.name = std::string("training loss, ") + task_name(task);
    r.trials = opt.trials;
    for (Index t = 0; t < opt.trials; ++t) {
      const std::uint64_t seed = opt.seed + static_cast<std::uint64_t>(t);
      const auto samples = toy_batch(task, seed);
      std::vector<const Sample*> batch;
      for (const auto& s : samples) batch.push_back(&s);
      auto model = toy_model(seed, opt.init_scale);
      LossFn<double> loss = [&](Graph<double>& g) {
        return forward_losses(g, model, std::span<const Sample* const>(batch), task, cfg).total;
      };
      std::vector<Tensor<double>> checked;
      std::vector<Tensor<double>> invariant;
      for (auto& n : model.named()) {
        (is_shift_invariant_parameter(n.name) && task != TaskKind::kRetrieval ? invariant : checked)
            .push_back(*n.tensor);
      }
      r.coordinates = 0;
      for (const auto& p : checked) r.coordinates += p.size();
      r.max_rel_error = std::max(r.max_rel_error,
                                 finite_diff_check(loss, std::span<Tensor<double>>(checked), opt.step));
      // finite_diff_check left the gradients of this pass in every leaf.
      for (const auto& p : invariant) {
        r.max_invariant_grad = std::max(r.max_invariant_grad, static_cast<double>(p.grad().cwiseAbs().maxCoeff()));
      }
    }
    results.push_back(r);
  }
  return results;
}

}  // namespace mlva
