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
#include <span>
#include <vector>

#include "fedsim/nn.hpp"
#include "fedsim/serialize.hpp"

namespace fedsim {

/// Per-client reduction of one layer's distance matrix.
struct LayerDivergence {
  std::size_t layer = 0;
  std::vector<double> mean;  // per client, over units
  std::vector<double> max;   // per client, over units
};

struct DivergenceSnapshot {
  std::vector<LayerDivergence> layers;
};

/// Unit distances between each client and the server, for every weighted layer
/// selected by `mask` (all weighted layers when the mask is empty).
DivergenceSnapshot divergence_snapshot(const ModelArchitecture& arch, const WeightSet& server,
                                       std::span<const WeightSet> clients,
                                       const LayerMask& mask = {});

}  // namespace fedsim
