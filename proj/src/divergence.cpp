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

#include "fedsim/divergence.hpp"

#include <algorithm>

#include "fedsim/aggregators.hpp"

namespace fedsim {

DivergenceSnapshot divergence_snapshot(const ModelArchitecture& arch, const WeightSet& server,
                                       std::span<const WeightSet> clients,
                                       const LayerMask& mask) {
  DivergenceSnapshot snap;
  for (std::size_t l = 0; l < arch.layer_count(); ++l) {
    if (!arch.layer(l).has_weights()) continue;
    if (mask.size() != 0 && !mask.test(l)) continue;
    const DistanceMatrix dm = distance_matrix(arch, server, clients, l);
    LayerDivergence ld;
    ld.layer = l;
    ld.mean.assign(dm.clients, 0.0);
    ld.max.assign(dm.clients, 0.0);
    for (std::size_t k = 0; k < dm.clients; ++k) {
      double sum = 0.0;
      for (std::size_t d = 0; d < dm.units; ++d) {
        sum += dm.at(k, d);
        ld.max[k] = std::max(ld.max[k], dm.at(k, d));
      }
      ld.mean[k] = dm.units ? sum / static_cast<double>(dm.units) : 0.0;
    }
    snap.layers.push_back(std::move(ld));
  }
  return snap;
}

}  // namespace fedsim
