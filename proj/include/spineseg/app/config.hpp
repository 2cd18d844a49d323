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

// Run configuration: flat `key = value` text with dotted keys.
//
//   # comment
//   model.embed_dim = 24
//   fusion.kernel_sizes = 1, 3, 5
//
// Unknown keys, repeated keys and malformed values are errors. `to_text`
// emits every key in a fixed order; parsing that text reproduces the config.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "spineseg/data/augment.hpp"
#include "spineseg/data/phantom.hpp"
#include "spineseg/data/volume_io.hpp"
#include "spineseg/gradcheck.hpp"
#include "spineseg/network.hpp"

namespace spineseg::app {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t steps = 300;
  std::size_t batch = 1;  // samples accumulated per update
  std::size_t eval_interval = 50;
  std::size_t checkpoint_interval = 0;  // 0: final checkpoint only
};

struct DataConfig {
  std::string train;  // dataset directory; empty: synthesize in memory
  std::string test;
  std::size_t synth_train = 1;
  std::size_t synth_test = 0;
  Extents3 dims{24, 24, 24};
  std::size_t vertebrae = 3;
  double noise_sigma = 0.05;
};

struct GradcheckConfig {
  std::size_t probes = 5;
  double h = 1e-4;
  std::size_t stencil = 5;
  double floor = 1e-6;
  double tolerance = 1e-5;
  std::size_t dims = 8;
};

struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model{};
  TrainConfig train{};
  DataConfig data{};
  AugmentSpec augment{};
  bool include_background = true;
  GradcheckConfig gradcheck{};

  void validate() const {
    model.validate();
    augment.validate();
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (!(train.lr >= 0.0)) fail("train.lr must be non-negative");
    if (!(train.beta1 >= 0.0 && train.beta1 < 1.0)) fail("train.beta1 must be in [0, 1)");
    if (!(train.beta2 >= 0.0 && train.beta2 < 1.0)) fail("train.beta2 must be in [0, 1)");
    if (!(train.eps > 0.0)) fail("train.eps must be positive");
    if (train.batch == 0) fail("train.batch must be positive");
    if (data.train.empty() && data.synth_train == 0) fail("data.synth_train must be positive without data.train");
    if (!(data.noise_sigma >= 0.0)) fail("data.noise_sigma must be non-negative");
    if (!(gradcheck.h > 0.0)) fail("gradcheck.h must be positive");
    if (gradcheck.stencil != 3 && gradcheck.stencil != 5) fail("gradcheck.stencil must be 3 or 5");
    if (!(gradcheck.floor > 0.0)) fail("gradcheck.floor must be positive");
    if (!(gradcheck.tolerance > 0.0)) fail("gradcheck.tolerance must be positive");
    if (gradcheck.dims == 0) fail("gradcheck.dims must be positive");
  }

  PhantomSpec phantom_spec() const { return {data.dims, data.vertebrae, data.noise_sigma}; }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string fmt_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError(key + ": integer out of range '" + v + "'");
  }
}

inline double parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (v.empty() || used != v.size() || !std::isfinite(d)) throw ConfigError(key + ": expected a real, got '" + v + "'");
  return d;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_u64(key, trim(item)));
  if (out.empty()) throw ConfigError(key + ": expected a comma-separated list");
  return out;
}

inline std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  const char* key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Member>
Field size_field(const char* key, Member member) {
  return {key, [key, member](RunConfig& c, const std::string& v) { member(c) = parse_u64(key, v); },
          [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }};
}

template <typename Member>
Field real_field(const char* key, Member member) {
  return {key, [key, member](RunConfig& c, const std::string& v) { member(c) = parse_real(key, v); },
          [member](const RunConfig& c) { return fmt_real(member(const_cast<RunConfig&>(c))); }};
}

template <typename Member>
Field bool_field(const char* key, Member member) {
  return {key, [key, member](RunConfig& c, const std::string& v) { member(c) = parse_bool(key, v); },
          [member](const RunConfig& c) { return std::string(member(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

template <typename Member>
Field list_field(const char* key, Member member) {
  return {key, [key, member](RunConfig& c, const std::string& v) { member(c) = parse_list(key, v); },
          [member](const RunConfig& c) { return join(member(const_cast<RunConfig&>(c))); }};
}

template <typename Member>
Field string_field(const char* key, Member member) {
  return {key, [member](RunConfig& c, const std::string& v) { member(c) = v; },
          [member](const RunConfig& c) { return member(const_cast<RunConfig&>(c)); }};
}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"seed", [](RunConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); },
                 [](const RunConfig& c) { return std::to_string(c.seed); }});
    f.push_back(size_field("model.in_channels", [](RunConfig& c) -> auto& { return c.model.in_channels; }));
    f.push_back(size_field("model.num_classes", [](RunConfig& c) -> auto& { return c.model.num_classes; }));
    f.push_back(size_field("model.patch_size", [](RunConfig& c) -> auto& { return c.model.patch_size; }));
    f.push_back(size_field("model.embed_dim", [](RunConfig& c) -> auto& { return c.model.embed_dim; }));
    f.push_back(list_field("model.depths", [](RunConfig& c) -> auto& { return c.model.depths; }));
    f.push_back(list_field("model.heads", [](RunConfig& c) -> auto& { return c.model.heads; }));
    f.push_back(size_field("model.window", [](RunConfig& c) -> auto& { return c.model.window; }));
    f.push_back(size_field("model.mlp_ratio", [](RunConfig& c) -> auto& { return c.model.mlp_ratio; }));
    f.push_back(bool_field("model.use_multiscale", [](RunConfig& c) -> auto& { return c.model.use_multiscale; }));
    f.push_back(bool_field("model.use_adaptive", [](RunConfig& c) -> auto& { return c.model.use_adaptive; }));
    f.push_back(list_field("fusion.kernel_sizes", [](RunConfig& c) -> auto& { return c.model.fusion.kernel_sizes; }));
    f.push_back(size_field("fusion.out_channels", [](RunConfig& c) -> auto& { return c.model.fusion.out_channels; }));
    f.push_back(real_field("loss.lambda", [](RunConfig& c) -> auto& { return c.model.lambda; }));
    f.push_back({"loss.dice_mode",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "per_class") {
                     c.model.dice_mode = DiceMode::kPerClass;
                   } else if (v == "global_binary") {
                     c.model.dice_mode = DiceMode::kGlobalBinary;
                   } else {
                     throw ConfigError("loss.dice_mode: expected per_class or global_binary, got '" + v + "'");
                   }
                 },
                 [](const RunConfig& c) {
                   return std::string(c.model.dice_mode == DiceMode::kPerClass ? "per_class" : "global_binary");
                 }});
    f.push_back(real_field("train.lr", [](RunConfig& c) -> auto& { return c.train.lr; }));
    f.push_back(real_field("train.beta1", [](RunConfig& c) -> auto& { return c.train.beta1; }));
    f.push_back(real_field("train.beta2", [](RunConfig& c) -> auto& { return c.train.beta2; }));
    f.push_back(real_field("train.eps", [](RunConfig& c) -> auto& { return c.train.eps; }));
    f.push_back(size_field("train.steps", [](RunConfig& c) -> auto& { return c.train.steps; }));
    f.push_back(size_field("train.batch", [](RunConfig& c) -> auto& { return c.train.batch; }));
    f.push_back(size_field("train.eval_interval", [](RunConfig& c) -> auto& { return c.train.eval_interval; }));
    f.push_back(size_field("train.checkpoint_interval", [](RunConfig& c) -> auto& { return c.train.checkpoint_interval; }));
    f.push_back(string_field("data.train", [](RunConfig& c) -> auto& { return c.data.train; }));
    f.push_back(string_field("data.test", [](RunConfig& c) -> auto& { return c.data.test; }));
    f.push_back(size_field("data.synth_train", [](RunConfig& c) -> auto& { return c.data.synth_train; }));
    f.push_back(size_field("data.synth_test", [](RunConfig& c) -> auto& { return c.data.synth_test; }));
    f.push_back({"data.dims",
                 [](RunConfig& c, const std::string& v) {
                   auto l = parse_list("data.dims", v);
                   if (l.size() == 1) l = {l[0], l[0], l[0]};
                   if (l.size() != 3) throw ConfigError("data.dims: expected 1 or 3 extents");
                   c.data.dims = {l[0], l[1], l[2]};
                 },
                 [](const RunConfig& c) { return join({c.data.dims.h, c.data.dims.w, c.data.dims.d}); }});
    f.push_back(size_field("data.vertebrae", [](RunConfig& c) -> auto& { return c.data.vertebrae; }));
    f.push_back(real_field("data.noise_sigma", [](RunConfig& c) -> auto& { return c.data.noise_sigma; }));
    f.push_back(real_field("augment.rotate_max_deg", [](RunConfig& c) -> auto& { return c.augment.rotate_max_deg; }));
    f.push_back(real_field("augment.crop_fraction", [](RunConfig& c) -> auto& { return c.augment.crop_fraction; }));
    f.push_back(real_field("augment.gamma_lo", [](RunConfig& c) -> auto& { return c.augment.gamma_lo; }));
    f.push_back(real_field("augment.gamma_hi", [](RunConfig& c) -> auto& { return c.augment.gamma_hi; }));
    f.push_back(bool_field("augment.denoise", [](RunConfig& c) -> auto& { return c.augment.denoise; }));
    f.push_back(bool_field("eval.include_background", [](RunConfig& c) -> auto& { return c.include_background; }));
    f.push_back(size_field("gradcheck.probes", [](RunConfig& c) -> auto& { return c.gradcheck.probes; }));
    f.push_back(real_field("gradcheck.h", [](RunConfig& c) -> auto& { return c.gradcheck.h; }));
    f.push_back(size_field("gradcheck.stencil", [](RunConfig& c) -> auto& { return c.gradcheck.stencil; }));
    f.push_back(real_field("gradcheck.floor", [](RunConfig& c) -> auto& { return c.gradcheck.floor; }));
    f.push_back(real_field("gradcheck.tolerance", [](RunConfig& c) -> auto& { return c.gradcheck.tolerance; }));
    f.push_back(size_field("gradcheck.dims", [](RunConfig& c) -> auto& { return c.gradcheck.dims; }));
    return f;
  }();
  return table;
}

}  // namespace detail

/// Applies `key = value` lines on top of `base`.
inline RunConfig parse_config(std::string_view text, RunConfig base = {}) {
  std::vector<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = detail::trim(std::string_view(body).substr(0, eq));
    const std::string value = detail::trim(std::string_view(body).substr(eq + 1));
    const detail::Field* field = nullptr;
    for (const auto& f : detail::fields()) {
      if (key == f.key) field = &f;
    }
    if (!field) throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    for (const auto& s : seen) {
      if (s == key) throw ConfigError("line " + std::to_string(line_no) + ": key '" + key + "' given twice");
    }
    seen.push_back(key);
    field->set(base, value);
  }
  base.model.fusion.in_channels = base.model.in_channels;
  base.model.seed = base.seed;
  return base;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return parse_config(std::string(bytes.begin(), bytes.end()));
}

/// Every key in table order; `parse_config(to_text(c))` reproduces `c`.
inline std::string to_text(const RunConfig& c) {
  std::string out;
  for (const auto& f : detail::fields()) out += std::string(f.key) + " = " + f.get(c) + "\n";
  return out;
}

/// Sets the seed everywhere it is mirrored.
inline void set_seed(RunConfig& c, std::uint64_t seed) {
  c.seed = seed;
  c.model.seed = seed;
}

}  // namespace spineseg::app
