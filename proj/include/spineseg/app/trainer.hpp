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

// Training loop. Update t (1-based) draws its samples from a per-epoch
// permutation seeded by (seed, epoch), so the data order depends only on the
// step count and resuming needs no RNG state.
//
// Log lines (tab-separated, %.17g):
//   train <t> <L> <CE> <Dice>     loss of update t, before the update is applied
//   eval  <t> <mIoU> <mDice> <mAcc>   after update t

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "spineseg/app/adam.hpp"
#include "spineseg/app/checkpoint.hpp"
#include "spineseg/app/config.hpp"
#include "spineseg/app/dataset.hpp"
#include "spineseg/data/augment.hpp"
#include "spineseg/metrics.hpp"
#include "spineseg/network.hpp"

namespace spineseg::app {

struct EvalResult {
  std::vector<MetricsReport> per_sample;
  double mean_iou = 0.0;
  double mean_dice = 0.0;
  double mean_accuracy = 0.0;
};

/// Per-sample metrics of argmax predictions; aggregates are per-sample means.
inline EvalResult evaluate(SegmentationModel& model, const std::vector<Sample>& samples, const MetricsOptions& opts) {
  EvalResult r;
  for (const auto& s : samples) {
    const LabelVolume pred = argmax_labels(model.forward(s.data.volume));
    r.per_sample.push_back(segmentation_metrics(pred, s.data.labels, model.config().num_classes, opts));
  }
  for (const auto& m : r.per_sample) {
    r.mean_iou += m.mean_iou;
    r.mean_dice += m.mean_dice;
    r.mean_accuracy += m.mean_accuracy;
  }
  if (!samples.empty()) {
    const double n = static_cast<double>(samples.size());
    r.mean_iou /= n;
    r.mean_dice /= n;
    r.mean_accuracy /= n;
  }
  return r;
}

inline std::string fmt17(double v) { return detail::fmt_real(v); }

inline std::string checkpoint_name(std::uint64_t step) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "checkpoint_step%06llu.ssck", static_cast<unsigned long long>(step));
  return buf;
}

inline constexpr const char* kFinalCheckpoint = "checkpoint.ssck";

class Trainer {
 public:
  Trainer(RunConfig cfg, std::vector<Sample> train, std::vector<Sample> test, int threads = 1)
      : cfg_(std::move(cfg)), train_(std::move(train)), test_(std::move(test)), model_(cfg_.model) {
    cfg_.validate();
    if (train_.empty()) throw ConfigError("no training samples");
    for (const auto* set : {&train_, &test_}) {
      for (const auto& s : *set) {
        cfg_.model.validate_input(s.data.volume);
        s.data.labels.validate(cfg_.model.num_classes);
      }
    }
    model_.set_threads(threads);
    state_ = make_train_state(model_.params());
  }

  const RunConfig& config() const noexcept { return cfg_; }
  SegmentationModel& model() noexcept { return model_; }
  const TrainState& state() const noexcept { return state_; }

  void resume(const Checkpoint& ck) { restore_checkpoint(ck, model_.params(), &state_); }

  /// Index into the training set of sample `b` of update `t` (1-based).
  std::size_t sample_index(std::uint64_t t, std::size_t b) const {
    const std::uint64_t j = (t - 1) * cfg_.train.batch + b;
    const std::uint64_t n = train_.size(), epoch = j / n;
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng = derive_rng(cfg_.seed, {0xe90c, epoch});
    std::shuffle(perm.begin(), perm.end(), rng);
    return perm[j % n];
  }

  /// Runs one update; returns the batch-mean loss measured before it.
  LossValue step() {
    const std::uint64_t t = state_.step + 1;
    const std::size_t batch = cfg_.train.batch;
    auto& params = model_.params();
    params.zero_grad();
    LossValue mean{};
    try {
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t idx = sample_index(t, b);
        LabeledVolume sample = train_[idx].data;
        if (augmenting()) {
          AugmentSpec spec = cfg_.augment;
          spec.seed = derive_rng(cfg_.seed, {0xa06, (t - 1) * batch + b})();
          sample = augment(sample, spec);
        }
        auto r = combined_loss_from_logits(model_.forward(sample.volume), sample.labels, cfg_.model.lambda,
                                           cfg_.model.dice_mode);
        if (!std::isfinite(r.value.total)) throw NumericError("non-finite loss");
        if (batch > 1) r.grad_logits *= 1.0 / static_cast<double>(batch);
        model_.backward(r.grad_logits);
        mean.total += r.value.total / static_cast<double>(batch);
        mean.ce += r.value.ce / static_cast<double>(batch);
        mean.dice += r.value.dice / static_cast<double>(batch);
      }
      for (const auto& e : params.entries()) {
        if (!e.grad.all_finite()) throw NumericError("non-finite gradient in " + e.name);
      }
    } catch (const NumericError& e) {
      throw DivergenceError(std::string("training diverged: ") + e.what(), t);
    }
    adam_step(params, state_, cfg_.train);
    return mean;
  }

  EvalResult evaluate_now() {
    return evaluate(model_, test_.empty() ? train_ : test_, MetricsOptions{cfg_.include_background});
  }

  /// Trains until `train.steps` updates have been applied. Log lines go to
  /// `log` (if any); checkpoints go to `out_dir` (if non-empty). `on_step`
  /// runs after every update.
  void run(std::ostream* log, const std::filesystem::path& out_dir,
           const std::function<void(Trainer&, const LossValue&)>& on_step = {}) {
    const auto& tc = cfg_.train;
    while (state_.step < tc.steps) {
      const LossValue loss = step();
      const std::uint64_t t = state_.step;
      if (log) *log << "train\t" << t << '\t' << fmt17(loss.total) << '\t' << fmt17(loss.ce) << '\t' << fmt17(loss.dice) << '\n';
      if (on_step) on_step(*this, loss);
      const bool last = t == tc.steps;
      if ((tc.eval_interval && t % tc.eval_interval == 0) || last) {
        const EvalResult ev = evaluate_now();
        state_.best_mdice = std::max(state_.best_mdice, ev.mean_dice);
        if (log) {
          *log << "eval\t" << t << '\t' << fmt17(ev.mean_iou) << '\t' << fmt17(ev.mean_dice) << '\t'
               << fmt17(ev.mean_accuracy) << '\n';
        }
      }
      if (log) log->flush();
      if (!out_dir.empty() && tc.checkpoint_interval && t % tc.checkpoint_interval == 0) {
        save_checkpoint(out_dir / checkpoint_name(t), cfg_, model_.params(), state_);
      }
    }
    if (!out_dir.empty()) save_checkpoint(out_dir / kFinalCheckpoint, cfg_, model_.params(), state_);
  }

 private:
  bool augmenting() const {
    const auto& a = cfg_.augment;
    return a.denoise || a.rotate_max_deg >= 90.0 || a.crop_fraction < 1.0 || a.gamma_lo != 1.0 || a.gamma_hi != 1.0;
  }

  RunConfig cfg_;
  std::vector<Sample> train_, test_;
  SegmentationModel model_;
  TrainState state_;
};

/// Training and test sets named by the config: directories if given,
/// otherwise phantoms synthesized from the seed (split 0 train, 1 test).
inline std::pair<std::vector<Sample>, std::vector<Sample>> load_splits(const RunConfig& cfg) {
  const PhantomSpec spec = cfg.phantom_spec();
  auto train = cfg.data.train.empty() ? synth_samples(spec, cfg.seed, 0, cfg.data.synth_train) : load_dataset(cfg.data.train);
  auto test = cfg.data.test.empty() ? synth_samples(spec, cfg.seed, 1, cfg.data.synth_test) : load_dataset(cfg.data.test);
  return {std::move(train), std::move(test)};
}

}  // namespace spineseg::app
