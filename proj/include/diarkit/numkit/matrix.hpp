// Copyright 2026  The diarkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include <Eigen/Dense>

#include "diarkit/errors.hpp"

namespace diarkit {

// Row-major so that one row is one sample / one segment.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// Per-segment speaker embeddings, one row per segment.
using EmbeddingMatrix = Matrix;

inline void require_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols,
                          const char* what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(rows) + "x" +
                     std::to_string(cols) + ", got " + std::to_string(m.rows()) + "x" +
                     std::to_string(m.cols()));
  }
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

// Divides each row by its L2 norm; rows with norm below eps are divided by eps.
inline Matrix l2_normalize_rows(const Matrix& x, double eps = 1e-12) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double n = std::max(x.row(i).norm(), eps);
    out.row(i) = x.row(i) / n;
  }
  return out;
}

// Gathers the listed rows of x into a new matrix.
template <typename IndexRange>
Matrix gather_rows(const Matrix& x, const IndexRange& idx) {
  Matrix out(static_cast<Eigen::Index>(std::size(idx)), x.cols());
  Eigen::Index r = 0;
  for (auto i : idx) out.row(r++) = x.row(static_cast<Eigen::Index>(i));
  return out;
}

}  // namespace diarkit
