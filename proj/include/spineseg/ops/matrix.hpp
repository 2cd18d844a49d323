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

#include <Eigen/Core>

namespace spineseg::ops {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixView = Eigen::Map<RowMatrix, Eigen::Unaligned, Eigen::OuterStride<>>;
using ConstMatrixView = Eigen::Map<const RowMatrix, Eigen::Unaligned, Eigen::OuterStride<>>;

/// Row-major view over a raw buffer; `stride` is the distance between rows.
inline MatrixView view(double* p, std::size_t rows, std::size_t cols, std::size_t stride = 0) {
  const auto s = static_cast<Eigen::Index>(stride ? stride : cols);
  return MatrixView(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols),
                    Eigen::OuterStride<>(s));
}

inline ConstMatrixView view(const double* p, std::size_t rows, std::size_t cols, std::size_t stride = 0) {
  const auto s = static_cast<Eigen::Index>(stride ? stride : cols);
  return ConstMatrixView(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols),
                         Eigen::OuterStride<>(s));
}

}  // namespace spineseg::ops
