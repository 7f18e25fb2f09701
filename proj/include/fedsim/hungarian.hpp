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

#pragma once

#include <cstddef>
#include <vector>

#include "fedsim/nn.hpp"

namespace fedsim {

struct Assignment {
  /// Column assigned to each row, or -1 when the row is left unassigned
  /// (only possible when there are more rows than columns).
  std::vector<long> row_to_col;
  double cost = 0.0;
};

/// Minimum-cost assignment (Kuhn-Munkres with potentials, O(n^2 m)). Accepts
/// rectangular matrices; every row is assigned when rows <= cols. Throws on
/// non-finite costs.
Assignment solve_assignment(const Matrix& cost);

}  // namespace fedsim
