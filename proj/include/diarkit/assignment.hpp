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

#include <cstddef>
#include <limits>
#include <vector>

#include "diarkit/numkit/matrix.hpp"

namespace diarkit {

// Maximum-weight one-to-one assignment between rows and columns of a
// (possibly rectangular) weight matrix, via the Hungarian method with
// potentials. Returns for every row the matched column, or -1 when the row
// is left unmatched (only possible when rows > cols).
inline std::vector<int> max_weight_assignment(const Matrix& weight) {
  const auto R = static_cast<std::size_t>(weight.rows());
  const auto C = static_cast<std::size_t>(weight.cols());
  std::vector<int> row_to_col(R, -1);
  if (R == 0 || C == 0) return row_to_col;

  // Work on an n x m cost matrix with n <= m (transpose if needed).
  const bool transposed = R > C;
  const std::size_t n = transposed ? C : R;
  const std::size_t m = transposed ? R : C;
  auto cost = [&](std::size_t i, std::size_t j) {
    return transposed ? -weight(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i))
                      : -weight(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  };

  const double inf = std::numeric_limits<double>::infinity();
  // 1-based arrays, index 0 is the virtual root.
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    if (transposed)
      row_to_col[j - 1] = static_cast<int>(p[j] - 1);
    else
      row_to_col[p[j] - 1] = static_cast<int>(j - 1);
  }
  return row_to_col;
}

}  // namespace diarkit
