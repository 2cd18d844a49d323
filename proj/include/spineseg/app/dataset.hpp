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

// On-disk datasets: a directory of SSV1 pairs plus a tab-separated manifest
//
//   sample	volume	labels
//   sample_0000	sample_0000.vol.ssv	sample_0000.lab.ssv

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "spineseg/data/phantom.hpp"
#include "spineseg/data/volume_io.hpp"

namespace spineseg::app {

inline constexpr const char* kManifestName = "manifest.tsv";

struct Sample {
  std::string name;
  LabeledVolume data;
};

/// Phantom seed for sample `index` of `split` (0 train, 1 test).
inline std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t split, std::uint64_t index) {
  Rng rng = derive_rng(seed, {0x5a3b1e, split, index});
  return rng();
}

inline std::string sample_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%04zu", index);
  return buf;
}

inline std::vector<Sample> synth_samples(const PhantomSpec& spec, std::uint64_t seed, std::uint64_t split,
                                         std::size_t n) {
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({sample_name(i), generate_phantom(spec, sample_seed(seed, split, i))});
  return out;
}

/// Writes each sample as an SSV1 pair plus the manifest.
inline void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  std::string manifest = "sample\tvolume\tlabels\n";
  for (const auto& s : samples) {
    const std::string vol = s.name + ".vol.ssv", lab = s.name + ".lab.ssv";
    write_volume(dir / vol, s.data.volume);
    write_volume(dir / lab, s.data.labels);
    manifest += s.name + "\t" + vol + "\t" + lab + "\n";
  }
  io::write_file(dir / kManifestName, std::vector<std::uint8_t>(manifest.begin(), manifest.end()));
}

inline std::vector<Sample> load_dataset(const std::filesystem::path& dir) {
  const auto bytes = io::read_file(dir / kManifestName);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::string line;
  std::vector<Sample> out;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    if (++line_no == 1 || line.empty()) continue;
    std::istringstream fields(line);
    std::string name, vol, lab;
    if (!std::getline(fields, name, '\t') || !std::getline(fields, vol, '\t') || !std::getline(fields, lab)) {
      throw FormatError((dir / kManifestName).string() + ": malformed line " + std::to_string(line_no), 0);
    }
    Sample s{name, {read_intensity(dir / vol), read_labels(dir / lab), {1.0, 1.0, 1.0}}};
    if (!(spatial_extents(s.data.volume) == s.data.labels.extents())) {
      throw ShapeError(name + ": volume and label grids differ");
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace spineseg::app
