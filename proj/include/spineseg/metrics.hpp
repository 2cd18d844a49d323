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

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "spineseg/data/label_volume.hpp"

namespace spineseg {

struct MetricsOptions {
  bool include_background = true;  // class 0 takes part in the means when present
};

/// Overlap metrics from a K x K confusion matrix (rows: truth, cols: prediction).
struct MetricsReport {
  std::size_t num_classes = 0;
  std::vector<std::uint64_t> confusion;
  std::vector<double> per_class_iou;
  std::vector<double> per_class_dice;
  std::vector<double> per_class_recall;
  std::vector<bool> included;  // present in truth and selected by the options
  double mean_iou = 0.0;
  double mean_dice = 0.0;
  double mean_accuracy = 0.0;

  std::uint64_t count(std::size_t truth, std::size_t pred) const { return confusion[truth * num_classes + pred]; }
  std::uint64_t voxels() const {
    std::uint64_t n = 0;
    for (auto c : confusion) n += c;
    return n;
  }
};

/// Per class: IoU = TP/(TP+FP+FN), Dice = 2TP/(2TP+FP+FN), recall = TP/(TP+FN).
/// Means run over the included classes; an empty set yields 0.
inline MetricsReport metrics_from_confusion(std::vector<std::uint64_t> confusion, std::size_t k,
                                            const MetricsOptions& opts = {}) {
  MetricsReport r;
  r.num_classes = k;
  r.confusion = std::move(confusion);
  r.per_class_iou.assign(k, 0.0);
  r.per_class_dice.assign(k, 0.0);
  r.per_class_recall.assign(k, 0.0);
  r.included.assign(k, false);
  std::size_t used = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::uint64_t tp = r.count(c, c), fp = 0, fn = 0;
    for (std::size_t o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += r.count(o, c);
      fn += r.count(c, o);
    }
    const auto d = [](std::uint64_t num, std::uint64_t den) {
      return den ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
    };
    r.per_class_iou[c] = d(tp, tp + fp + fn);
    r.per_class_dice[c] = d(2 * tp, 2 * tp + fp + fn);
    r.per_class_recall[c] = d(tp, tp + fn);
    r.included[c] = (tp + fn > 0) && (opts.include_background || c != 0);
    if (r.included[c]) {
      r.mean_iou += r.per_class_iou[c];
      r.mean_dice += r.per_class_dice[c];
      r.mean_accuracy += r.per_class_recall[c];
      ++used;
    }
  }
  if (used) {
    r.mean_iou /= static_cast<double>(used);
    r.mean_dice /= static_cast<double>(used);
    r.mean_accuracy /= static_cast<double>(used);
  }
  return r;
}

inline MetricsReport segmentation_metrics(const LabelVolume& pred, const LabelVolume& truth, std::size_t k,
                                          const MetricsOptions& opts = {}) {
  if (!(pred.extents() == truth.extents())) throw ShapeError("segmentation_metrics: grids differ");
  pred.validate(k);
  truth.validate(k);
  std::vector<std::uint64_t> confusion(k * k, 0);
  for (std::size_t v = 0; v < truth.size(); ++v) ++confusion[truth[v] * k + pred[v]];
  return metrics_from_confusion(std::move(confusion), k, opts);
}

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

/// Human-readable multi-line report.
inline std::string metrics_text(const MetricsReport& r) {
  std::ostringstream os;
  os << "mIoU " << format_real(r.mean_iou) << "\nmDice " << format_real(r.mean_dice) << "\nmAcc "
     << format_real(r.mean_accuracy) << "\n";
  os << "class\tincluded\tIoU\tDice\trecall\n";
  for (std::size_t c = 0; c < r.num_classes; ++c) {
    os << c << '\t' << (r.included[c] ? "yes" : "no") << '\t' << format_real(r.per_class_iou[c]) << '\t'
       << format_real(r.per_class_dice[c]) << '\t' << format_real(r.per_class_recall[c]) << '\n';
  }
  os << "confusion (rows truth, cols prediction)\n";
  for (std::size_t t = 0; t < r.num_classes; ++t) {
    for (std::size_t p = 0; p < r.num_classes; ++p) os << (p ? "\t" : "") << r.count(t, p);
    os << '\n';
  }
  return os.str();
}

}  // namespace spineseg
