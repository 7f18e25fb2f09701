// Copyright 2026 The fedsim Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fedsim/hungarian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fedsim/error.hpp"

namespace fedsim {

namespace {

// Rows <= cols. Classic shortest augmenting path with dual potentials; arrays
// are 1-based with column 0 as the virtual start.
std::vector<long> solve_wide(const Matrix& a) {
  const std::size_t n = a.rows, m = a.cols;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  std::vector<char> used(m + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
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
  std::vector<long> row_to_col(n, -1);
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] != 0) row_to_col[p[j] - 1] = static_cast<long>(j - 1);
  }
  return row_to_col;
}

}  // namespace

Assignment solve_assignment(const Matrix& cost) {
  for (double c : cost.values) {
    if (!std::isfinite(c)) {
      throw Error(ErrorKind::kAggregation, "assignment cost matrix contains a non-finite entry");
    }
  }
  Assignment out;
  if (cost.rows == 0) return out;
  if (cost.cols == 0) {
    out.row_to_col.assign(cost.rows, -1);
    return out;
  }
  if (cost.rows <= cost.cols) {
    out.row_to_col = solve_wide(cost);
  } else {
    Matrix t{cost.cols, cost.rows, std::vector<double>(cost.values.size())};
    for (std::size_t r = 0; r < cost.rows; ++r)
      for (std::size_t c = 0; c < cost.cols; ++c) t(c, r) = cost(r, c);
    const auto col_to_row = solve_wide(t);
    out.row_to_col.assign(cost.rows, -1);
    for (std::size_t c = 0; c < col_to_row.size(); ++c) {
      out.row_to_col[static_cast<std::size_t>(col_to_row[c])] = static_cast<long>(c);
    }
  }
  for (std::size_t r = 0; r < cost.rows; ++r) {
    if (out.row_to_col[r] >= 0) out.cost += cost(r, static_cast<std::size_t>(out.row_to_col[r]));
  }
  return out;
}

}  // namespace fedsim
