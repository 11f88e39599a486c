// SPDX-License-Identifier: Apache-2.0
#include "mlva/cli.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <optional>

#include "mlva/evaluate.hpp"
#include "mlva/gradcheck_suite.hpp"
#include "mlva/synthdata.hpp"
#include "mlva/trainer.hpp"

namespace mlva {
namespace {

namespace fs = std::filesystem;

constexpr const char* kTrainFile = "train.jsonl";
constexpr const char* kTestFile = "test.jsonl";

struct GenDataArgs {
  std::string spec;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> task;
  bool binary = false;
};

struct TrainArgs {
  std::string data;
  std::string config;
  std::string out;
  std::string resume;
  std::optional<double> lambda1, lambda2, alpha, lr, weight_decay, clip_norm;
  std::optional<std::uint64_t> seed;
  std::optional<long long> epochs, batch_size, hidden, embed_dim, checkpoint_every;
  std::optional<std::string> task;
};

struct EvalArgs {
  std::string data;
  std::string ckpt;
  std::string report;
  std::string split = "test";
};

struct HeatmapArgs {
  std::string data;
  std::string sample;
  std::string ckpt;
  std::string out;
};

struct GradcheckArgs {
  std::string config;
};

Dataset load_split(const fs::path& dir, const char* file, Index max_frames) {
  Dataset d = read_dataset(dir / file);
  for (auto& s : d.samples) cap_frames(s, max_frames);
  return d;
}

int gen_data(const GenDataArgs& a, std::ostream& out) {
  KeyValueConfig cfg = a.spec.empty() ? KeyValueConfig{} : KeyValueConfig::load(a.spec);
  if (a.seed) cfg.set("seed", std::to_string(*a.seed));
  if (a.task) cfg.set("task", *a.task);
  const CorpusSpec spec = CorpusSpec::from_config(cfg);
  const SyntheticCorpus corpus = generate_corpus(spec);
  fs::create_directories(a.out);
  const fs::path dir(a.out);
  write_dataset(corpus.train, dir / kTrainFile, a.binary ? "train.features" : "");
  write_dataset(corpus.test, dir / kTestFile, a.binary ? "test.features" : "");
  spec.to_config().save(dir / "corpus.config");
  out << "wrote " << corpus.train.samples.size() << " train and " << corpus.test.samples.size() << " test "
      << task_name(spec.task) << " samples to " << dir.string() << '\n';
  return kExitOk;
}

int train_cmd(const TrainArgs& a, std::ostream& out) {
  KeyValueConfig kv = a.config.empty() ? KeyValueConfig{} : KeyValueConfig::load(a.config);
  auto put = [&](const char* key, const auto& v) {
    if (!v) return;
    if constexpr (std::is_same_v<std::decay_t<decltype(*v)>, double>) {
      kv.set(key, format_double(*v));
    } else if constexpr (std::is_same_v<std::decay_t<decltype(*v)>, std::string>) {
      kv.set(key, *v);
    } else {
      kv.set(key, std::to_string(*v));
    }
  };
  put("lambda1", a.lambda1);
  put("lambda2", a.lambda2);
  put("alpha", a.alpha);
  put("lr", a.lr);
  put("weight_decay", a.weight_decay);
  put("clip_norm", a.clip_norm);
  put("seed", a.seed);
  put("epochs", a.epochs);
  put("batch_size", a.batch_size);
  put("hidden", a.hidden);
  put("embed_dim", a.embed_dim);
  put("checkpoint_every", a.checkpoint_every);
  put("task", a.task);

  // Dimensions and task default to what the dataset declares.
  const fs::path dir(a.data);
  Dataset header_probe = read_dataset(dir / kTrainFile);
  auto fill = [&](const char* key, const std::string& value) {
    if (!kv.contains(key)) {
      kv.set(key, value);
    } else if (*kv.get(key) != value) {
      throw ConfigError(std::string("config ") + key + " = " + *kv.get(key) + " disagrees with the dataset (" +
                        value + ")");
    }
  };
  fill("static_dim", std::to_string(header_probe.static_dim));
  fill("motion_dim", std::to_string(header_probe.motion_dim));
  fill("vocab_size", std::to_string(header_probe.vocab_size()));
  fill("task", task_name(header_probe.task));
  TrainConfig cfg = TrainConfig::from_config(kv);
  cfg.validate();
  for (auto& s : header_probe.samples) cap_frames(s, cfg.dims.max_frames);

  const fs::path ckpt_path(a.out);
  if (ckpt_path.has_parent_path()) fs::create_directories(ckpt_path.parent_path());
  cfg.to_config().save(ckpt_path.string() + ".config");
  std::ofstream log(ckpt_path.string() + ".log.jsonl", a.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError("cannot write " + ckpt_path.string() + ".log.jsonl");

  TrainHooks hooks;
  hooks.checkpoint_path = ckpt_path;
  hooks.on_epoch = [&](const EpochLog& e) {
    log << e.to_json() << '\n' << std::flush;
    out << e.to_json() << '\n';
  };
  TrainResult result;
  if (a.resume.empty()) {
    result = train(header_probe.samples, cfg, hooks);
  } else {
    Checkpoint start = load_checkpoint(a.resume);
    if (start.config.to_config().dump() != cfg.to_config().dump()) {
      // Only the epoch budget may change on resume.
      TrainConfig relaxed = start.config;
      relaxed.epochs = cfg.epochs;
      if (relaxed.to_config().dump() != cfg.to_config().dump()) {
        throw ConfigError("resumed checkpoint was trained with a different configuration");
      }
      start.config.epochs = cfg.epochs;
    }
    result = resume(header_probe.samples, std::move(start), hooks);
  }
  out << "checkpoint after " << result.checkpoint.epoch << " epochs written to " << ckpt_path.string() << '\n';
  return kExitOk;
}

int eval_cmd(const EvalArgs& a, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  if (a.split != "test" && a.split != "train") throw ConfigError("split must be test or train");
  const Dataset data = load_split(a.data, a.split == "test" ? kTestFile : kTrainFile, ckpt.config.dims.max_frames);
  if (data.task != ckpt.config.task) {
    throw ConfigError(std::string("dataset task ") + task_name(data.task) + " differs from checkpoint task " +
                      task_name(ckpt.config.task));
  }
  const MetricReport report = evaluate(data.samples, ckpt.model, data.task);
  const fs::path report_path(a.report);
  if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());
  report.save(report_path);
  KeyValueConfig resolved = ckpt.config.to_config();
  resolved.set("data", a.data);
  resolved.set("split", a.split);
  resolved.set("ckpt", a.ckpt);
  resolved.save(report_path.string() + ".config");
  out << report.to_config().dump();
  return kExitOk;
}

int heatmap_cmd(const HeatmapArgs& a, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const Sample* found = nullptr;
  std::optional<Dataset> test, train;
  test = load_split(a.data, kTestFile, ckpt.config.dims.max_frames);
  for (const auto& s : test->samples) if (s.id == a.sample) found = &s;
  if (!found) {
    train = load_split(a.data, kTrainFile, ckpt.config.dims.max_frames);
    for (const auto& s : train->samples) if (s.id == a.sample) found = &s;
  }
  if (!found) throw DataError("no sample with id '" + a.sample + "' in " + a.data);
  const Heatmap h = compute_heatmap(*found, ckpt.model, test->vocab);
  write_heatmap_csv(h, a.out);
  out << "wrote " << h.values.rows() << "x" << h.values.cols() << " heatmap to " << a.out << '\n';
  return kExitOk;
}

int gradcheck_cmd(const GradcheckArgs& a, std::ostream& out) {
  KeyValueConfig kv = a.config.empty() ? KeyValueConfig{} : KeyValueConfig::load(a.config);
  static const std::vector<std::string> known = {"seed", "trials", "step", "init_scale", "tolerance",
                                                 "alpha", "lambda1", "lambda2"};
  if (auto unknown = kv.unknown_keys(known); !unknown.empty()) {
    throw ConfigError("gradcheck config: unknown key '" + unknown.front() + "'");
  }
  GradcheckOptions opt;
  opt.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
  opt.trials = kv.get_int("trials", opt.trials);
  opt.step = kv.get_double("step", opt.step);
  opt.init_scale = kv.get_double("init_scale", opt.init_scale);
  opt.align.alpha = kv.get_double("alpha", opt.align.alpha);
  opt.align.lambda1 = kv.get_double("lambda1", opt.align.lambda1);
  opt.align.lambda2 = kv.get_double("lambda2", opt.align.lambda2);
  const double tolerance = kv.get_double("tolerance", 1e-4);
  bool ok = true;
  for (const auto& r : run_gradcheck_suite(opt)) {
    const bool pass = r.max_rel_error < tolerance && r.max_invariant_grad < 1e-12;
    ok = ok && pass;
    out << (pass ? "ok   " : "FAIL ") << r.name << ": max relative error " << r.max_rel_error << " over "
        << r.coordinates << " coordinates x " << r.trials << " trials, invariant-bias gradient "
        << r.max_invariant_grad << '\n';
  }
  if (!ok) throw NumericalError("gradient check exceeded tolerance " + format_double(tolerance));
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-level video-language alignment: data generation, training and evaluation", "mlva"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic corpus");
  gen_cmd->add_option("--spec", gen.spec, "Corpus spec (key=value file)")->check(CLI::ExistingFile);
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "Override the corpus seed");
  gen_cmd->add_option("--task", gen.task, "Override the corpus task (qa, retrieval, moment)");
  gen_cmd->add_flag("--binary-features", gen.binary, "Store frames in packed binary feature files");

  TrainArgs tr;
  auto* train_sub = app.add_subcommand("train", "Train a model");
  train_sub->add_option("--data", tr.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train_sub->add_option("--config", tr.config, "Training config (key=value file)")->check(CLI::ExistingFile);
  train_sub->add_option("--out", tr.out, "Checkpoint path")->required();
  train_sub->add_option("--resume", tr.resume, "Continue from this checkpoint")->check(CLI::ExistingFile);
  train_sub->add_option("--lambda1", tr.lambda1, "Global alignment weight");
  train_sub->add_option("--lambda2", tr.lambda2, "Segment alignment weight");
  train_sub->add_option("--alpha", tr.alpha, "Hinge margin");
  train_sub->add_option("--lr", tr.lr, "Learning rate");
  train_sub->add_option("--weight-decay", tr.weight_decay, "AdamW weight decay");
  train_sub->add_option("--clip-norm", tr.clip_norm, "Global gradient-norm clip (0 disables)");
  train_sub->add_option("--seed", tr.seed, "Seed for initialization and shuffling");
  train_sub->add_option("--epochs", tr.epochs, "Epoch count");
  train_sub->add_option("--batch-size", tr.batch_size, "Mini-batch size");
  train_sub->add_option("--hidden", tr.hidden, "Encoding width H");
  train_sub->add_option("--embed-dim", tr.embed_dim, "Token embedding width");
  train_sub->add_option("--checkpoint-every", tr.checkpoint_every, "Epochs between checkpoints");
  train_sub->add_option("--task", tr.task, "Task kind (defaults to the dataset's)");

  EvalArgs ev;
  auto* eval_sub = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_sub->add_option("--data", ev.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  eval_sub->add_option("--ckpt", ev.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval_sub->add_option("--report", ev.report, "Report output (key=value file)")->required();
  eval_sub->add_option("--split", ev.split, "test or train");

  HeatmapArgs hm;
  auto* heat_sub = app.add_subcommand("heatmap", "Export a language-by-frame similarity heatmap");
  heat_sub->add_option("--data", hm.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  heat_sub->add_option("--sample", hm.sample, "Sample id")->required();
  heat_sub->add_option("--ckpt", hm.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  heat_sub->add_option("--out", hm.out, "CSV output path")->required();

  GradcheckArgs gc;
  auto* grad_sub = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  grad_sub->add_option("--config", gc.config, "Options (key=value file)")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*gen_cmd) return gen_data(gen, out);
    if (*train_sub) return train_cmd(tr, out);
    if (*eval_sub) return eval_cmd(ev, out);
    if (*heat_sub) return heatmap_cmd(hm, out);
    if (*grad_sub) return gradcheck_cmd(gc, out);
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitDataOrConfig;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitDataOrConfig;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace mlva
