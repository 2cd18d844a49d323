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

// Acceptance suite: one PASS/FAIL line per criterion.
//   acceptance [--work DIR] [--only 1,2,...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "spineseg/spineseg.hpp"

namespace {

using namespace spineseg;
using namespace spineseg::app;
namespace fs = std::filesystem;

const std::string kConfigDir = SPINESEG_CONFIG_DIR;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail = what;
    pass = pass && ok;
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string num(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.4g", v);
  return b;
}

std::vector<std::uint8_t> file_bytes(const fs::path& p) { return io::read_file(p); }

LabelVolume random_labels(Extents3 e, std::size_t k, Rng& rng) {
  LabelVolume l(e);
  for (std::size_t i = 0; i < l.size(); ++i) l[i] = static_cast<std::uint8_t>(uniform_index(rng, k));
  return l;
}

Extents3 random_extents(Rng& rng) { return {1 + uniform_index(rng, 4), 1 + uniform_index(rng, 4), 1 + uniform_index(rng, 4)}; }

Tensor random_tensor(Shape s, Rng& rng, double lo, double hi) {
  Tensor t(std::move(s));
  for (double& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

// ------------------------------------------------------------------ 1

Outcome gradient_correctness(const fs::path&) {
  Outcome o;
  const RunConfig cfg = load_config(kConfigDir + "/tiny.cfg");
  const auto t0 = std::chrono::steady_clock::now();
  const GradcheckRun run = run_gradcheck(cfg);
  const double secs = seconds_since(t0);
  std::size_t total_probes = 0;
  for (const auto& t : run.report.tensors) total_probes += t.probes;
  o.require(cfg.gradcheck.h == 1e-4, "step is not 1e-4");
  o.require(cfg.gradcheck.probes >= 5, "fewer than 5 probes requested");
  o.require(run.report.max_rel_error < 1e-5, "max rel. err " + num(run.report.max_rel_error) + " in " +
                                                   run.report.worst_tensor);
  o.require(secs < 120.0, "runtime " + num(secs) + " s");
  o.detail = o.pass ? "max rel. err " + num(run.report.max_rel_error) + " (" + run.report.worst_tensor + "), " +
                          std::to_string(total_probes) + " probes over " + std::to_string(run.report.tensors.size()) +
                          " tensors (" + std::to_string(cfg.gradcheck.probes) +
                          " per tensor, all coordinates when fewer), " + num(secs) + " s"
                    : o.detail;
  return o;
}

// ------------------------------------------------------------------ 2

struct Means {
  double iou = 0, dice = 0, acc = 0;
};

Means brute_force(const LabelVolume& pred, const LabelVolume& truth, std::size_t k) {
  Means m;
  int used = 0;
  for (std::size_t c = 0; c < k; ++c) {
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t v = 0; v < truth.size(); ++v) {
      tp += truth[v] == c && pred[v] == c;
      fp += truth[v] != c && pred[v] == c;
      fn += truth[v] == c && pred[v] != c;
    }
    if (tp + fn == 0) continue;
    ++used;
    m.iou += static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    m.dice += static_cast<double>(2 * tp) / static_cast<double>(2 * tp + fp + fn);
    m.acc += static_cast<double>(tp) / static_cast<double>(tp + fn);
  }
  if (used) {
    m.iou /= used;
    m.dice /= used;
    m.acc /= used;
  }
  return m;
}

Outcome metric_oracle(const fs::path&) {
  Outcome o;
  Rng rng = derive_rng(2, {});
  int mismatches = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t k = 2 + uniform_index(rng, 3);
    const Extents3 e = random_extents(rng);
    const LabelVolume t = random_labels(e, k, rng), p = random_labels(e, k, rng);
    const MetricsReport r = segmentation_metrics(p, t, k);
    const Means m = brute_force(p, t, k);
    mismatches += r.mean_iou != m.iou || r.mean_dice != m.dice || r.mean_accuracy != m.acc;
  }
  o.require(mismatches == 0, std::to_string(mismatches) + " of 1000 cases differ from the oracle");
  const LabelVolume truth({1, 1, 4}, std::vector<std::uint8_t>{0, 0, 1, 1});
  const LabelVolume pred({1, 1, 4}, std::vector<std::uint8_t>{0, 1, 1, 1});
  const MetricsReport r = segmentation_metrics(pred, truth, 2);
  o.require(std::abs(r.mean_iou - 0.5833) < 5e-5 && std::abs(r.mean_dice - 0.7333) < 5e-5 &&
                std::abs(r.mean_accuracy - 0.75) < 5e-5,
            "pinned case gave " + num(r.mean_iou) + " / " + num(r.mean_dice) + " / " + num(r.mean_accuracy));
  if (o.pass) {
    o.detail = "1000/1000 exact; pinned case " + format_real(r.mean_iou) + " / " + format_real(r.mean_dice) + " / " +
               format_real(r.mean_accuracy);
  }
  return o;
}

// ------------------------------------------------------------------ 3

Outcome loss_identity(const fs::path&) {
  Outcome o;
  Rng rng = derive_rng(3, {});
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t k = 2 + uniform_index(rng, 4);
    const Extents3 e = random_extents(rng);
    const ProbVolume p = ProbVolume::from_logits(random_tensor({k, e.h, e.w, e.d}, rng, -4.0, 4.0));
    const LabelVolume y = random_labels(e, k, rng);
    const double ce = cross_entropy(p, y), dice = dice_loss(p, y);
    for (double lambda : {0.0, 0.5, 1.0, 2.0}) {
      worst = std::max(worst, std::abs(combined_loss(p, y, lambda).total - (ce + lambda * dice)));
    }
  }
  o.require(worst <= 1e-12, "max deviation " + num(worst));
  if (o.pass) o.detail = "400 evaluations, max deviation " + num(worst);
  return o;
}

// ------------------------------------------------------------------ 4

Outcome attention_invariants(const fs::path&) {
  Outcome o;
  Rng rng = derive_rng(4, {});
  // Round trips on a grid of windows, both shifts.
  for (std::size_t window : {2u, 4u}) {
    for (std::size_t shift : {std::size_t{0}, window / 2}) {
      const Tensor x = random_tensor({5, 8, 4, 8}, rng, -1.0, 1.0);
      const WindowSpec spec{window, shift};
      o.require(window_reverse(window_partition(x, spec), spec, {8, 4, 8}) == x,
                "round trip differs for window " + std::to_string(window) + " shift " + std::to_string(shift));
    }
  }
  // Attention rows and gates in a full model forward (shifted and unshifted blocks).
  ModelConfig mc = load_config(kConfigDir + "/desk.cfg").model;
  SegmentationModel model(mc);
  model.forward(random_tensor({1, 16, 16, 16}, rng, -1.0, 1.0));
  double row_err = 0.0, gmin = 1.0, gmax = 0.0;
  for (std::size_t s = 0; s < mc.stages(); ++s) {
    for (std::size_t b = 0; b < mc.depths[s]; ++b) {
      const SwinBlock& blk = model.block(s, b);
      const Tensor& a = blk.attention();
      const std::size_t t = a.extent(3);
      for (std::size_t r = 0; r < a.size() / t; ++r) {
        double sum = 0.0;
        for (std::size_t j = 0; j < t; ++j) sum += a[r * t + j];
        row_err = std::max(row_err, std::abs(sum - 1.0));
      }
      for (double g : blk.gates().data()) {
        gmin = std::min(gmin, g);
        gmax = std::max(gmax, g);
      }
    }
  }
  o.require(row_err <= 1e-9, "row sum deviation " + num(row_err));
  o.require(gmin > 0.0 && gmax < 1.0, "gate outside (0,1): [" + num(gmin) + ", " + num(gmax) + "]");
  // Ablated block ignores gate parameters bit-exactly.
  ParameterStore st;
  Initializer init(4);
  SwinBlockConfig bc{8, 2, 32, {2, 1}, true};
  SwinBlock::register_params(st, init, "blk", bc);
  const Tensor x = random_tensor({8, 4, 4, 4}, rng, -2.0, 2.0);
  const Tensor before = swin_block(x, bc.window, st, "blk", 2, 32, true);
  for (const char* n : {"blk.gate.fc1.weight", "blk.gate.fc1.bias", "blk.gate.fc2.weight", "blk.gate.fc2.bias"}) {
    for (double& v : st.value(n).data()) v = uniform(rng, -100.0, 100.0);
  }
  o.require(swin_block(x, bc.window, st, "blk", 2, 32, true) == before, "ablated block output changed");
  if (o.pass) {
    o.detail = "row sum dev " + num(row_err) + ", gates in [" + num(gmin) + ", " + num(gmax) +
               "], round trips exact, ablated output bit-identical";
  }
  return o;
}

// ------------------------------------------------------------------ 5, 6

struct OverfitRun {
  double fg_mdice = 0.0;
  std::uint64_t steps = 0;
  double seconds = 0.0;
  double worst_weight_sum = 0.0;
  double worst_envelope = 0.0;  // largest excursion outside [min_i F_i, max_i F_i]
  std::size_t checked_steps = 0;
};

OverfitRun overfit(const fs::path& dir, bool check_fusion) {
  RunConfig cfg = load_config(kConfigDir + "/desk.cfg");
  cfg.include_background = false;
  auto [train, test] = load_splits(cfg);
  Trainer trainer(cfg, train, test);
  OverfitRun r;
  const auto t0 = std::chrono::steady_clock::now();
  std::function<void(Trainer&, const LossValue&)> hook;
  if (check_fusion) {
    hook = [&](Trainer& t, const LossValue&) {
      const ParameterStore& p = t.model().params();
      const FusionWeights fw{p.value("stem.logits")};
      const Tensor w = fw.weights();
      double s = 0.0;
      for (double v : w.data()) s += v;
      r.worst_weight_sum = std::max(r.worst_weight_sum, std::abs(s - 1.0));
      const auto feats = multiscale_extract(train[0].data.volume, cfg.model.fusion, p, "stem");
      const Tensor fused = adaptive_fuse(feats, fw);
      for (std::size_t v = 0; v < fused.size(); ++v) {
        double lo = feats[0][v], hi = feats[0][v];
        for (const auto& f : feats) {
          lo = std::min(lo, f[v]);
          hi = std::max(hi, f[v]);
        }
        r.worst_envelope = std::max({r.worst_envelope, lo - fused[v], fused[v] - hi});
      }
      ++r.checked_steps;
    };
  }
  std::ofstream log(dir / "train.log");
  trainer.run(&log, dir, hook);
  r.seconds = seconds_since(t0);
  r.steps = trainer.state().step;
  r.fg_mdice = trainer.evaluate_now().mean_dice;
  return r;
}

struct SharedOverfit {
  bool done = false;
  OverfitRun first, second;
  fs::path dir_a, dir_b;
};

SharedOverfit& overfit_runs(const fs::path& work) {
  static SharedOverfit s;
  if (!s.done) {
    s.dir_a = work / "overfit_a";
    s.dir_b = work / "overfit_b";
    for (const auto& d : {s.dir_a, s.dir_b}) {
      fs::remove_all(d);
      fs::create_directories(d);
    }
    s.first = overfit(s.dir_a, true);
    s.second = overfit(s.dir_b, false);
    s.done = true;
  }
  return s;
}

Outcome fusion_invariants(const fs::path& work) {
  Outcome o;
  const OverfitRun& r = overfit_runs(work).first;
  o.require(r.checked_steps == r.steps && r.steps > 0, "fusion not checked after every step");
  o.require(r.worst_weight_sum <= 1e-12, "weight sum deviation " + num(r.worst_weight_sum));
  o.require(r.worst_envelope <= 1e-12, "fused value outside envelope by " + num(r.worst_envelope));
  if (o.pass) {
    o.detail = std::to_string(r.checked_steps) + " steps, weight sum dev " + num(r.worst_weight_sum) +
               ", envelope excursion " + num(r.worst_envelope);
  }
  return o;
}

Outcome overfit_smoke(const fs::path& work) {
  Outcome o;
  const SharedOverfit& s = overfit_runs(work);
  o.require(s.first.steps <= 300, "ran " + std::to_string(s.first.steps) + " steps");
  o.require(s.first.fg_mdice >= 0.90, "foreground mDice " + num(s.first.fg_mdice));
  o.require(file_bytes(s.dir_a / kFinalCheckpoint) == file_bytes(s.dir_b / kFinalCheckpoint),
            "two runs gave different checkpoints");
  o.require(s.first.fg_mdice == s.second.fg_mdice, "two runs gave different mDice");
  o.require(s.second.seconds < 600.0, "runtime " + num(s.second.seconds) + " s");
  if (o.pass) {
    o.detail = "foreground mDice " + format_real(s.first.fg_mdice) + " after " + std::to_string(s.first.steps) +
               " steps, " + num(s.second.seconds) + " s, rerun bit-identical";
  }
  return o;
}

// ------------------------------------------------------------------ 7

Outcome ablation_shape(const fs::path& work) {
  Outcome o;
  const RunConfig cfg = load_config(kConfigDir + "/ablation.cfg");
  const fs::path dir = work / "ablation";
  fs::remove_all(dir);
  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = run_ablation(cfg, dir, 1, &std::cerr);
  const double secs = seconds_since(t0);
  std::cout << ablation_report(rows);

  const auto variants = ablation_variants();
  o.require(rows.size() == 4, "expected 4 rows");
  for (std::size_t i = 0; i < rows.size() && i < variants.size(); ++i) {
    o.require(rows[i].variant == variants[i].first, "row " + std::to_string(i) + " is " + rows[i].variant);
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].metrics.mean_dice > rows[best].metrics.mean_dice) best = i;
  }
  o.require(!rows.empty() && rows[0].metrics.mean_dice >= rows[best].metrics.mean_dice,
            "max mDice is " + rows[best].variant + " (" + format_real(rows[best].metrics.mean_dice) + " vs Ours " +
                format_real(rows[0].metrics.mean_dice) + ")");
  o.require(secs < 3600.0, "runtime " + num(secs) + " s");

  // Reproducibility: retrain the full model from the same seed.
  const fs::path again = work / "ablation_repeat";
  fs::remove_all(again);
  fs::create_directories(again);
  auto [train, test] = load_splits(cfg);
  Trainer trainer(ablation_config(cfg, 0), train, test);
  std::ofstream log(again / "train.log");
  trainer.run(&log, again);
  log.close();
  o.require(file_bytes(again / kFinalCheckpoint) == file_bytes(dir / variants[0].second / kFinalCheckpoint),
            "repeat run checkpoint differs");
  o.require(file_bytes(again / "train.log") == file_bytes(dir / variants[0].second / "train.log"),
            "repeat run log differs");
  o.require(trainer.evaluate_now().mean_dice == rows[0].metrics.mean_dice, "repeat run mDice differs");
  if (o.pass) {
    o.detail = "Ours mDice " + format_real(rows[0].metrics.mean_dice) + " is the maximum, " + num(secs) +
               " s single thread, repeat of Ours bit-identical";
  }
  return o;
}

// ------------------------------------------------------------------ 8

constexpr const char* kSmallRun =
    "seed = 8\nmodel.embed_dim = 8\nmodel.depths = 1\nmodel.heads = 2\nfusion.out_channels = 4\n"
    "data.dims = 8\ndata.vertebrae = 1\ndata.synth_train = 2\ntrain.steps = 10\ntrain.eval_interval = 5\n"
    "train.checkpoint_interval = 5\naugment.rotate_max_deg = 270\naugment.gamma_lo = 0.8\naugment.gamma_hi = 1.25\n";

Outcome persistence(const fs::path& work) {
  Outcome o;
  const fs::path dir = work / "persistence";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path cfg_path = dir / "run.cfg";
  std::ofstream(cfg_path) << kSmallRun;
  std::ostringstream sink;
  const Console quiet{&sink, &sink};
  auto train = [&](const std::string& out, const std::string& resume) {
    GlobalOptions g;
    g.config = cfg_path.string();
    g.out = (dir / out).string();
    return cmd_train(g, {resume}, quiet);
  };
  o.require(train("a", "") == 0 && train("b", "") == 0, "training failed: " + sink.str());
  o.require(file_bytes(dir / "a" / kFinalCheckpoint) == file_bytes(dir / "b" / kFinalCheckpoint) &&
                file_bytes(dir / "a" / checkpoint_name(5)) == file_bytes(dir / "b" / checkpoint_name(5)),
            "identical runs gave different checkpoints");
  o.require(train("resumed", (dir / "a" / checkpoint_name(5)).string()) == 0, "resume failed: " + sink.str());
  o.require(file_bytes(dir / "a" / kFinalCheckpoint) == file_bytes(dir / "resumed" / kFinalCheckpoint),
            "resumed run differs from the uninterrupted run");
  // Volume files.
  Rng rng = derive_rng(8, {});
  Tensor vol = random_tensor({1, 5, 6, 7}, rng, -1e10, 1e10);
  vol[0] = -0.0;
  vol[1] = 5e-324;
  LabelVolume lab = random_labels({5, 6, 7}, 4, rng);
  write_volume(dir / "v.ssv", vol);
  write_volume(dir / "l.ssv", lab);
  const Tensor vb = read_intensity(dir / "v.ssv");
  o.require(vb.shape() == vol.shape() && std::memcmp(vb.ptr(), vol.ptr(), vol.size() * sizeof(double)) == 0,
            "intensity round trip differs");
  o.require(read_labels(dir / "l.ssv") == lab, "label round trip differs");
  o.require(encode_volume(read_intensity(dir / "v.ssv")) == file_bytes(dir / "v.ssv"), "re-encoding differs");
  if (o.pass) o.detail = "identical checkpoints, resume from step 5 bit-exact, SSV1 round trips bit-exact";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "spineseg_acceptance";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string item;
      while (std::getline(ss, item, ',')) only.insert(std::stoi(item));
    } else {
      std::cerr << "usage: acceptance [--work DIR] [--only 1,2,...]\n";
      return 1;
    }
  }
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome(const fs::path&)>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"metric oracle equivalence", metric_oracle},
      {"loss identity", loss_identity},
      {"attention invariants", attention_invariants},
      {"fusion invariants", fusion_invariants},
      {"overfit smoke", overfit_smoke},
      {"ablation shape", ablation_shape},
      {"determinism and persistence", persistence},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.contains(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second(work);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << id << ". " << criteria[i].first << ": " << o.detail << std::endl;
  }
  return failed ? 1 : 0;
}
