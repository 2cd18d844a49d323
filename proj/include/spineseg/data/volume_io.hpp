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

// SSV1 volume files (little-endian):
//   "SSV1" | u8 dtype (0 = f64 intensity, 1 = u8 labels) | u8 ndim |
//   ndim x u32 extents | row-major payload

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <variant>
#include <vector>

#include "spineseg/core/tensor.hpp"
#include "spineseg/data/label_volume.hpp"

namespace spineseg {

inline constexpr char kVolumeMagic[4] = {'S', 'S', 'V', '1'};

enum class VolumeDtype : std::uint8_t { kFloat64 = 0, kLabelU8 = 1 };

namespace io {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_f64(std::vector<std::uint8_t>& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

/// Bounds-checked little-endian reader that reports byte offsets.
class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint64_t offset() const noexcept { return pos_; }
  std::uint64_t remaining() const noexcept { return bytes_.size() - pos_; }

  void need(std::uint64_t n, const char* what) const {
    if (remaining() < n) {
      throw FormatError(std::string("truncated file: expected ") + std::to_string(n) + " bytes of " + what +
                            ", found " + std::to_string(remaining()),
                        bytes_.size());
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  const std::uint8_t* cursor() const noexcept { return bytes_.data() + pos_; }
  void skip(std::size_t n) { pos_ += n; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::uint64_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

inline void put_header(std::vector<std::uint8_t>& out, VolumeDtype dtype, const Shape& shape) {
  out.insert(out.end(), kVolumeMagic, kVolumeMagic + 4);
  out.push_back(static_cast<std::uint8_t>(dtype));
  out.push_back(static_cast<std::uint8_t>(shape.size()));
  for (std::size_t e : shape) put_u32(out, static_cast<std::uint32_t>(e));
}

}  // namespace io

inline std::vector<std::uint8_t> encode_volume(const Tensor& vol) {
  std::vector<std::uint8_t> out;
  out.reserve(6 + 4 * vol.rank() + 8 * vol.size());
  io::put_header(out, VolumeDtype::kFloat64, vol.shape());
  for (double v : vol.values()) io::put_f64(out, v);
  return out;
}

inline std::vector<std::uint8_t> encode_volume(const LabelVolume& labels) {
  std::vector<std::uint8_t> out;
  const Extents3 e = labels.extents();
  io::put_header(out, VolumeDtype::kLabelU8, {e.h, e.w, e.d});
  out.insert(out.end(), labels.data().begin(), labels.data().end());
  return out;
}

using AnyVolume = std::variant<Tensor, LabelVolume>;

inline AnyVolume decode_volume(const std::vector<std::uint8_t>& bytes) {
  io::Reader r(bytes);
  const std::string magic = r.bytes(4, "magic");
  if (std::memcmp(magic.data(), kVolumeMagic, 4) != 0) throw FormatError("bad magic, expected SSV1", 0);
  const std::uint64_t dtype_at = r.offset();
  const std::uint8_t dtype = r.u8("dtype");
  if (dtype > 1) throw FormatError("unknown dtype code " + std::to_string(dtype), dtype_at);
  const std::uint64_t ndim_at = r.offset();
  const std::uint8_t ndim = r.u8("ndim");
  if (ndim == 0 || ndim > kMaxRank || (dtype == 1 && ndim != 3)) {
    throw FormatError("invalid ndim " + std::to_string(ndim), ndim_at);
  }
  Shape shape;
  for (std::uint8_t i = 0; i < ndim; ++i) {
    const std::uint64_t at = r.offset();
    const std::uint32_t e = r.u32("extent");
    if (e == 0) throw FormatError("zero extent", at);
    shape.push_back(e);
  }
  const std::uint64_t count = shape_volume(shape);
  const std::uint64_t width = dtype == 0 ? 8 : 1;
  const std::uint64_t payload_at = r.offset();
  if (r.remaining() < count * width) {
    throw FormatError("truncated payload: header declares " + std::to_string(count * width) + " bytes, file has " +
                          std::to_string(r.remaining()),
                      payload_at + r.remaining());
  }
  if (r.remaining() > count * width) {
    throw FormatError("payload longer than header declares", payload_at + count * width);
  }
  if (dtype == 0) {
    std::vector<double> data(count);
    for (auto& v : data) v = r.f64("payload");
    return Tensor(std::move(shape), std::move(data));
  }
  std::vector<std::uint8_t> data(r.cursor(), r.cursor() + count);
  return LabelVolume(Extents3{shape[0], shape[1], shape[2]}, std::move(data));
}

inline void write_volume(const std::filesystem::path& path, const Tensor& vol) { io::write_file(path, encode_volume(vol)); }
inline void write_volume(const std::filesystem::path& path, const LabelVolume& labels) {
  io::write_file(path, encode_volume(labels));
}

inline AnyVolume read_volume(const std::filesystem::path& path) { return decode_volume(io::read_file(path)); }

inline Tensor read_intensity(const std::filesystem::path& path) {
  auto v = read_volume(path);
  if (auto* t = std::get_if<Tensor>(&v)) return std::move(*t);
  throw FormatError("'" + path.string() + "' holds labels, expected an intensity volume", 4);
}

inline LabelVolume read_labels(const std::filesystem::path& path) {
  auto v = read_volume(path);
  if (auto* l = std::get_if<LabelVolume>(&v)) return std::move(*l);
  throw FormatError("'" + path.string() + "' holds intensities, expected a label volume", 4);
}

}  // namespace spineseg
