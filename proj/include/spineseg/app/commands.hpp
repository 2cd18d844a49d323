// Copyright 2026 The SpineSeg Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Subcommand implementations. Each returns a process exit code:
//   0 ok, 1 config/usage, 2 IO, 3 divergence, 4 gradcheck failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "spineseg/app/checkpoint.hpp"
#include "spineseg/app/config.hpp"
#include "spineseg/app/dataset.hpp"
#include "spineseg/app/trainer.hpp"
#include "spineseg/data/slice_export.hpp"
#include "spineseg/gradcheck.hpp"

namespace spineseg::app {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitIo = 2, kExitDivergence = 3, kExitGradcheck = 4 };

struct Console {
  std::ostream* out = &std::cout;
  std::ostream* err = &std::cerr;
};

struct GlobalOptions {
  std::optional<std::uint64_t> seed;
  std::string config;  // empty: built-in defaults
  std::string out = ".";
  int threads = 1;
};

/// Runs `fn` and maps library errors to exit codes.
template <typename Fn>
int guarded(Fn&& fn, const Console& con) {
  try {
    return fn();
  } catch (const DivergenceError& e) {
    *con.err << "error: " << e.what() << " (step " << e.step() << ")\n";
    return kExitDivergence;
  } catch (const IoError& e) {
    *con.err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const FormatError& e) {
    *con.err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const CheckFailedError& e) {
    *con.err << "error: " << e.what() << '\n';
    return kExitGradcheck;
  } catch (const std::exception& e) {
    *con.err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
}

inline RunConfig resolve_config(const GlobalOptions& g, RunConfig base = {}) {
  RunConfig cfg = g.config.empty() ? parse_config("", std::move(base))
                                   : parse_config([&] {
                                       const auto b = io::read_file(g.config);
                                       return std::string(b.begin(), b.end());
                                     }(), std::move(base));
  if (g.seed) set_seed(cfg, *g.seed);
  if (g.threads < 1) throw ConfigError("--threads must be at least 1");
  cfg.validate();
  return cfg;
}

inline void make_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  io::write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

// ---------------------------------------------------------------- synth

struct SynthOptions {
  std::size_t n = 12;
  std::optional<Extents3> dims;  // overrides data.dims
  std::uint64_t split = 0;
};

inline int cmd_synth(const GlobalOptions& g, const SynthOptions& o, const Console& con = {}) {
  return guarded(
      [&] {
        RunConfig cfg = resolve_config(g);
        if (o.dims) cfg.data.dims = *o.dims;
        const auto samples = synth_samples(cfg.phantom_spec(), cfg.seed, o.split, o.n);
        write_dataset(g.out, samples);
        *con.out << "wrote " << samples.size() << " samples to " << g.out << '\n';
        return kExitOk;
      },
      con);
}

// ---------------------------------------------------------------- train

struct TrainOptions {
  std::string resume;  // checkpoint to continue from
};

inline int cmd_train(const GlobalOptions& g, const TrainOptions& o, const Console& con = {}) {
  return guarded(
      [&] {
        RunConfig cfg = resolve_config(g);
        auto [train, test] = load_splits(cfg);
        Trainer trainer(cfg, std::move(train), std::move(test), g.threads);
        if (!o.resume.empty()) {
          const Checkpoint ck = read_checkpoint(o.resume);
          if (ck.config_text != to_text(trainer.config())) {
            *con.err << "warning: resuming with a configuration that differs from the checkpoint's\n";
          }
          trainer.resume(ck);
        }
        make_dir(g.out);
        write_text(std::filesystem::path(g.out) / "config.txt", to_text(trainer.config()));
        std::ofstream log(std::filesystem::path(g.out) / "train.log",
                          o.resume.empty() ? std::ios::trunc : std::ios::app);
        if (!log) throw IoError("cannot open the training log in '" + g.out + "'");
        trainer.run(&log, g.out);
        const EvalResult ev = trainer.evaluate_now();
        *con.out << "steps " << trainer.state().step << "  mIoU " << format_real(ev.mean_iou) << "  mDice "
                 << format_real(ev.mean_dice) << "  mAcc " << format_real(ev.mean_accuracy) << '\n';
        return kExitOk;
      },
      con);
}

// ---------------------------------------------------------------- eval

/// Model from a checkpoint. With a config file, the model is built from it
/// and the checkpoint must match its parameter shapes.
inline SegmentationModel load_model(const Checkpoint& ck, const std::string& config_path, RunConfig& cfg) {
  cfg = config_path.empty() ? parse_config(ck.config_text) : load_config(config_path);
  SegmentationModel model(cfg.model);
  restore_checkpoint(ck, model.params(), nullptr);
  return model;
}

struct EvalOptions {
  std::string checkpoint;
  std::string data;
  bool exclude_background = false;
};

inline std::string metrics_table(const std::vector<std::string>& names, const EvalResult& r) {
  std::string s = "sample\tmIoU\tmDice\tmAcc\n";
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto& m = r.per_sample[i];
    s += names[i] + '\t' + fmt17(m.mean_iou) + '\t' + fmt17(m.mean_dice) + '\t' + fmt17(m.mean_accuracy) + '\n';
  }
  s += "mean\t" + fmt17(r.mean_iou) + '\t' + fmt17(r.mean_dice) + '\t' + fmt17(r.mean_accuracy) + '\n';
  return s;
}

inline int cmd_eval(const GlobalOptions& g, const EvalOptions& o, const Console& con = {}) {
  return guarded(
      [&] {
        if (o.checkpoint.empty()) throw ArgumentError("eval needs --checkpoint");
        if (o.data.empty()) throw ArgumentError("eval needs --data");
        RunConfig cfg;
        SegmentationModel model = load_model(read_checkpoint(o.checkpoint), g.config, cfg);
        model.set_threads(g.threads);
        const auto samples = load_dataset(o.data);
        if (samples.empty()) throw ConfigError("no samples in '" + o.data + "'");
        for (const auto& s : samples) {
          cfg.model.validate_input(s.data.volume);
          s.data.labels.validate(cfg.model.num_classes);
        }
        MetricsOptions mo{cfg.include_background && !o.exclude_background};
        const EvalResult r = evaluate(model, samples, mo);
        std::vector<std::string> names;
        std::string text;
        for (std::size_t i = 0; i < samples.size(); ++i) {
          names.push_back(samples[i].name);
          text += "== " + samples[i].name + "\n" + metrics_text(r.per_sample[i]);
        }
        text += "== mean over samples\nmIoU " + format_real(r.mean_iou) + "\nmDice " + format_real(r.mean_dice) +
                "\nmAcc " + format_real(r.mean_accuracy) + "\n";
        make_dir(g.out);
        write_text(std::filesystem::path(g.out) / "metrics.tsv", metrics_table(names, r));
        write_text(std::filesystem::path(g.out) / "metrics.txt", text);
        *con.out << samples.size() << " samples  mIoU " << format_real(r.mean_iou) << "  mDice "
                 << format_real(r.mean_dice) << "  mAcc " << format_real(r.mean_accuracy) << '\n';
        return kExitOk;
      },
      con);
}

// ---------------------------------------------------------------- ablation

struct AblationRow {
  std::string variant;
  std::string dir;
  std::size_t params = 0;
  EvalResult metrics;
};

inline std::vector<std::pair<std::string, std::string>> ablation_variants() {
  return {{"Ours", "ours"},
          {"Remove multi-scale fusion", "no_multiscale"},
          {"Removing Adaptive Attention", "no_adaptive"},
          {"Baseline", "baseline"}};
}

inline RunConfig ablation_config(const RunConfig& cfg, std::size_t row) {
  RunConfig c = cfg;
  if (row == 1) c.model = ablate(cfg.model, AblationTarget::kMultiscale);
  if (row == 2) c.model = ablate(cfg.model, AblationTarget::kAdaptive);
  if (row == 3) c.model = ablate(cfg.model, AblationTarget::kBoth);
  return c;
}

inline std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::string s = "variant\tparams\tmIoU\tmDice\tmAcc\n";
  for (const auto& r : rows) {
    s += r.variant + '\t' + std::to_string(r.params) + '\t' + fmt17(r.metrics.mean_iou) + '\t' +
         fmt17(r.metrics.mean_dice) + '\t' + fmt17(r.metrics.mean_accuracy) + '\n';
  }
  return s;
}

/// Percent values, aligned like a paper table.
inline std::string ablation_report(const std::vector<AblationRow>& rows) {
  std::string s;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-30s %10s %8s %8s %8s\n", "Method", "params", "mIoU", "mDice", "mAcc");
  s += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-30s %10zu %8.2f %8.2f %8.2f\n", r.variant.c_str(), r.params,
                  100.0 * r.metrics.mean_iou, 100.0 * r.metrics.mean_dice, 100.0 * r.metrics.mean_accuracy);
    s += buf;
  }
  return s;
}

/// Trains and evaluates the four variants on identical data and schedule.
inline std::vector<AblationRow> run_ablation(const RunConfig& cfg, const std::filesystem::path& out, int threads,
                                             std::ostream* progress = nullptr) {
  auto [train, test] = load_splits(cfg);
  if (test.empty()) throw ConfigError("ablation needs a test split (data.test or data.synth_test)");
  std::vector<AblationRow> rows;
  const auto variants = ablation_variants();
  for (std::size_t i = 0; i < variants.size(); ++i) {
    const RunConfig vc = ablation_config(cfg, i);
    const auto dir = out / variants[i].second;
    make_dir(dir);
    write_text(dir / "config.txt", to_text(vc));
    std::ofstream log(dir / "train.log", std::ios::trunc);
    if (!log) throw IoError("cannot open '" + (dir / "train.log").string() + "'");
    Trainer trainer(vc, train, test, threads);
    trainer.run(&log, dir);
    AblationRow row{variants[i].first, variants[i].second, trainer.model().params().scalar_count(),
                    trainer.evaluate_now()};
    if (progress) {
      *progress << row.variant << ": mDice " << format_real(row.metrics.mean_dice) << '\n';
      progress->flush();
    }
    rows.push_back(std::move(row));
  }
  write_text(out / "ablation.tsv", ablation_table(rows));
  write_text(out / "ablation.txt", ablation_report(rows));
  return rows;
}

inline int cmd_ablation(const GlobalOptions& g, const Console& con = {}) {
  return guarded(
      [&] {
        const RunConfig cfg = resolve_config(g);
        make_dir(g.out);
        const auto rows = run_ablation(cfg, g.out, g.threads, con.err);
        *con.out << ablation_report(rows);
        return kExitOk;
      },
      con);
}

// ---------------------------------------------------------------- gradcheck

/// Built-in gradcheck model: one stage, two blocks, 8^3 input.
inline RunConfig tiny_config() {
  RunConfig c;
  c.model.embed_dim = 8;
  c.model.depths = {2};
  c.model.heads = {2};
  c.model.window = 2;
  c.model.num_classes = 3;
  c.gradcheck.dims = 8;
  return c;
}

struct GradcheckRun {
  GradcheckReport report;
  bool passed = false;
};

/// combined_loss(forward(x), y) on a seeded random input and label volume.
inline GradcheckRun run_gradcheck(const RunConfig& cfg, double fault = 1.0) {
  SegmentationModel model(cfg.model);
  model.inject_gradient_fault(fault);
  const std::size_t n = cfg.gradcheck.dims;
  Rng rng = derive_rng(cfg.seed, {0x6c0});
  Tensor x({cfg.model.in_channels, n, n, n});
  for (double& v : x.data()) v = normal(rng, 0.0, 1.0);
  LabelVolume y({n, n, n});
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<std::uint8_t>(uniform_index(rng, cfg.model.num_classes));

  auto value = [&](ParameterStore&) {
    return combined_loss_from_logits(model.forward(x), y, cfg.model.lambda, cfg.model.dice_mode).value.total;
  };
  auto gradient = [&](ParameterStore&) {
    auto r = combined_loss_from_logits(model.forward(x), y, cfg.model.lambda, cfg.model.dice_mode);
    model.backward(r.grad_logits);
  };
  GradcheckOptions opts;
  opts.probes = cfg.gradcheck.probes;
  opts.step = cfg.gradcheck.h;
  opts.stencil = cfg.gradcheck.stencil == 3 ? Stencil::kThreePoint : Stencil::kFivePoint;
  opts.abs_floor = cfg.gradcheck.floor;
  opts.seed = cfg.seed;
  GradcheckRun run;
  run.report = gradcheck(value, gradient, model.params(), opts);
  run.passed = run.report.max_rel_error < cfg.gradcheck.tolerance;
  return run;
}

struct GradcheckCmdOptions {
  double fault = 1.0;  // test hook: scales one gradient
};

inline int cmd_gradcheck(const GlobalOptions& g, const GradcheckCmdOptions& o = {}, const Console& con = {}) {
  return guarded(
      [&] {
        const RunConfig cfg = resolve_config(g, tiny_config());
        if (cfg.gradcheck.probes == 0) throw ConfigError("gradcheck: no probes");
        const GradcheckRun run = run_gradcheck(cfg, o.fault);
        *con.out << "tensor\tprobes\tmax_rel_error\tmax_abs_error\n";
        for (const auto& t : run.report.tensors) {
          *con.out << t.name << '\t' << t.probes << '\t' << fmt17(t.max_rel_error) << '\t' << fmt17(t.max_abs_error)
                   << '\n';
        }
        *con.out << "worst\t" << run.report.worst_tensor << '\t' << fmt17(run.report.max_rel_error) << '\n';
        if (!run.passed) {
          *con.err << "gradcheck failed: " << run.report.worst_tensor << " relative error "
                   << fmt17(run.report.max_rel_error) << " >= " << fmt17(cfg.gradcheck.tolerance) << '\n';
          return kExitGradcheck;
        }
        *con.out << "PASS\n";
        return kExitOk;
      },
      con);
}

// ---------------------------------------------------------------- infer

struct InferOptions {
  std::string checkpoint;
  std::string volume;
  std::string labels;  // optional truth for the exported slices
  bool export_slices = false;
};

inline int cmd_infer(const GlobalOptions& g, const InferOptions& o, const Console& con = {}) {
  return guarded(
      [&] {
        if (o.checkpoint.empty()) throw ArgumentError("infer needs --checkpoint");
        if (o.volume.empty()) throw ArgumentError("infer needs --volume");
        RunConfig cfg;
        SegmentationModel model = load_model(read_checkpoint(o.checkpoint), g.config, cfg);
        model.set_threads(g.threads);
        const Tensor vol = read_intensity(o.volume);
        cfg.model.validate_input(vol);
        const LabelVolume pred = argmax_labels(model.forward(vol));
        make_dir(g.out);
        const auto out = std::filesystem::path(g.out);
        write_volume(out / "prediction.lab.ssv", pred);
        *con.out << "wrote " << (out / "prediction.lab.ssv").string() << '\n';
        if (o.export_slices) {
          const LabelVolume truth = o.labels.empty() ? LabelVolume(pred.extents(), 0) : read_labels(o.labels);
          const Extents3 e = pred.extents();
          const std::size_t mids[3] = {e.h / 2, e.w / 2, e.d / 2};
          for (std::size_t axis = 0; axis < 3; ++axis) {
            for (const auto& f : export_slices(vol, truth, pred, axis, {mids[axis]}, out, "infer")) {
              *con.out << "wrote " << f.string() << '\n';
            }
          }
        }
        return kExitOk;
      },
      con);
}

}  // namespace spineseg::app
