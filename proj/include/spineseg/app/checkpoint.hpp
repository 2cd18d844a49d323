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

// SSCK checkpoint:
//
//   "SSCK"  u32 version
//   u32 config length, config text (canonical, see to_text)
//   u32 tensor count, then per tensor:
//     u16 name length, name, u8 ndim, ndim x u32 extents, f64 LE payload
//
// Tensors are the model parameters in registration order, then the Adam
// moments (name + ".m1", name + ".m2"), then the training counters
// "train.step", "train.best_mdice" and "train.seed" (four 16-bit chunks,
// low first). All integers little-endian.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "spineseg/app/config.hpp"
#include "spineseg/core/parameter_store.hpp"
#include "spineseg/data/volume_io.hpp"

namespace spineseg::app {

inline constexpr char kCheckpointMagic[4] = {'S', 'S', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct TrainState {
  std::uint64_t step = 0;
  double best_mdice = 0.0;
  ParameterStore moments;  // ".m1"/".m2" per parameter, same order
};

struct Checkpoint {
  std::string config_text;
  std::vector<NamedTensor> tensors;

  const Tensor* find(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return &t.value;
    }
    return nullptr;
  }
};

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  io::put_u32(out, kCheckpointVersion);
  io::put_u32(out, static_cast<std::uint32_t>(ck.config_text.size()));
  out.insert(out.end(), ck.config_text.begin(), ck.config_text.end());
  io::put_u32(out, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    if (t.name.size() > std::numeric_limits<std::uint16_t>::max()) throw FormatError("tensor name too long", 0);
    out.push_back(static_cast<std::uint8_t>(t.name.size()));
    out.push_back(static_cast<std::uint8_t>(t.name.size() >> 8));
    out.insert(out.end(), t.name.begin(), t.name.end());
    out.push_back(static_cast<std::uint8_t>(t.value.rank()));
    for (std::size_t e : t.value.shape()) io::put_u32(out, static_cast<std::uint32_t>(e));
    for (double v : t.value.data()) io::put_f64(out, v);
  }
  return out;
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  io::Reader r(bytes);
  if (r.bytes(4, "magic") != std::string(kCheckpointMagic, 4)) throw FormatError("not an SSCK checkpoint", 0);
  const std::uint64_t version_at = r.offset();
  if (const auto v = r.u32("version"); v != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(v), version_at);
  }
  Checkpoint ck;
  ck.config_text = r.bytes(r.u32("config length"), "config text");
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.bytes(r.u16("name length"), "tensor name");
    const std::uint64_t ndim_at = r.offset();
    const std::size_t ndim = r.u8("ndim");
    if (ndim == 0 || ndim > kMaxRank) {
      throw FormatError("tensor '" + t.name + "': bad ndim " + std::to_string(ndim), ndim_at);
    }
    Shape shape(ndim);
    for (auto& e : shape) {
      const std::uint64_t at = r.offset();
      e = r.u32("extent");
      if (e == 0) throw FormatError("tensor '" + t.name + "': zero extent", at);
    }
    t.value = Tensor(shape);
    r.need(8 * t.value.size(), "tensor payload");
    for (double& v : t.value.data()) v = r.f64("tensor payload");
    ck.tensors.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after the last tensor", r.offset());
  return ck;
}

inline Tensor scalar_tensor(double v) {
  Tensor t({1});
  t[0] = v;
  return t;
}

/// Model parameters, optimizer moments and counters as one checkpoint.
inline Checkpoint make_checkpoint(const RunConfig& cfg, const ParameterStore& params, const TrainState& state) {
  Checkpoint ck{to_text(cfg), {}};
  for (const auto& e : params.entries()) ck.tensors.push_back({e.name, e.value});
  for (const auto& e : state.moments.entries()) ck.tensors.push_back({e.name, e.value});
  ck.tensors.push_back({"train.step", scalar_tensor(static_cast<double>(state.step))});
  ck.tensors.push_back({"train.best_mdice", scalar_tensor(state.best_mdice)});
  Tensor seed({4});
  for (std::size_t i = 0; i < 4; ++i) seed[i] = static_cast<double>((cfg.seed >> (16 * i)) & 0xffff);
  ck.tensors.push_back({"train.seed", seed});
  return ck;
}

/// Copies checkpoint tensors into `params` (and `state` if given). Every
/// missing tensor and every shape conflict is listed in one ConfigError.
inline void restore_checkpoint(const Checkpoint& ck, ParameterStore& params, TrainState* state) {
  std::vector<std::string> problems;
  auto load = [&](const std::string& name, Tensor& dst) {
    const Tensor* src = ck.find(name);
    if (!src) {
      problems.push_back(name + ": missing from checkpoint (expected " + shape_string(dst.shape()) + ")");
    } else if (src->shape() != dst.shape()) {
      problems.push_back(name + ": checkpoint " + shape_string(src->shape()) + " vs model " +
                         shape_string(dst.shape()));
    } else {
      dst = *src;
    }
  };
  for (auto& e : params.entries()) load(e.name, e.value);
  for (const auto& t : ck.tensors) {
    if (!t.name.starts_with("train.") && !t.name.ends_with(".m1") && !t.name.ends_with(".m2") &&
        !params.find(t.name)) {
      problems.push_back(t.name + ": not a parameter of this model");
    }
  }
  if (state) {
    for (auto& e : state->moments.entries()) load(e.name, e.value);
    Tensor step({1}), best({1});
    load("train.step", step);
    load("train.best_mdice", best);
    state->step = static_cast<std::uint64_t>(step[0]);
    state->best_mdice = best[0];
  }
  if (!problems.empty()) {
    std::string msg = "checkpoint does not match the model configuration:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
  }
}

inline void save_checkpoint(const std::filesystem::path& path, const RunConfig& cfg, const ParameterStore& params,
                            const TrainState& state) {
  io::write_file(path, encode_checkpoint(make_checkpoint(cfg, params, state)));
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_file(path)); }

}  // namespace spineseg::app
