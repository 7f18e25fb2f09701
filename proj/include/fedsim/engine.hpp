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
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fedsim/aggregators.hpp"
#include "fedsim/dataset.hpp"
#include "fedsim/divergence.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/nn.hpp"
#include "fedsim/serialize.hpp"

namespace fedsim {

/// One simulated participant.
struct ClientState {
  std::string id;
  WindowedDataset train;
  WindowedDataset test;
  WeightSet weights;  // the model held locally between rounds

  double sample_count() const { return static_cast<double>(train.size()); }
};

struct CommLedger {
  std::vector<std::uint64_t> uplink;    // per round
  std::vector<std::uint64_t> downlink;  // per round
  std::uint64_t total_uplink = 0;
  std::uint64_t total_downlink = 0;

  void record(std::uint64_t up, std::uint64_t down);
};

struct EvalSummary {
  std::optional<double> global_f1;
  std::optional<double> global_accuracy;
  MeanStd personalization_f1;
  MeanStd personalization_accuracy;
  MeanStd generalization_f1;
  MeanStd generalization_accuracy;
  std::vector<double> client_personalization_f1;
  std::vector<double> client_generalization_f1;
};

struct RoundReport {
  std::size_t round = 0;
  EvalSummary eval;
  std::vector<std::size_t> units;        // per layer, after aggregation
  std::vector<std::size_t> units_added;  // per layer
  std::size_t substeps = 0;              // layer-wise sub-rounds
  std::uint64_t uplink_bytes = 0;
  std::uint64_t downlink_bytes = 0;
  std::uint64_t cumulative_uplink = 0;
  std::uint64_t cumulative_downlink = 0;
  DivergenceSnapshot divergence;  // uploaded client models vs their average
};

struct ServerState {
  ModelArchitecture arch;
  WeightSet weights;
  std::size_t round = 0;  // completed rounds
  bool has_global_model = true;
  std::vector<RoundReport> history;
  CommLedger ledger;
};

struct EngineConfig {
  TrainConfig train;
  std::uint64_t seed = 1;
  std::size_t parallel_clients = 1;
  FloatWidth wire_width = FloatWidth::k32;
  bool track_divergence = true;
};

struct RoundHooks {
  /// Called for each layer-wise sub-round with the client models right
  /// before and right after local retraining.
  std::function<void(const FreezeStep&, const std::vector<WeightSet>& before,
                     const std::vector<WeightSet>& after)>
      on_substep;
};

/// Server initialized with Glorot weights; every client starts from a copy.
ServerState make_server(const ModelArchitecture& arch, std::uint64_t seed);
void init_clients(const ServerState& server, std::vector<ClientState>& clients);

/// Model evaluation for the three views. `server` is null when there is no
/// global model.
EvalSummary evaluate_round(const ModelArchitecture& arch, const WeightSet* server,
                           const std::vector<WeightSet>& client_models,
                           const std::vector<const WindowedDataset*>& client_tests,
                           const WindowedDataset& global_test, std::size_t threads = 1);

/// One communication round: broadcast, local training, upload, aggregation and
/// evaluation. On any exception `server` and `clients` are left untouched.
/// Evaluation is skipped when `global_test` is null.
RoundReport run_round(ServerState& server, std::vector<ClientState>& clients,
                      const Aggregator& strategy, const EngineConfig& cfg,
                      const WindowedDataset* global_test, const RoundHooks& hooks = {});

}  // namespace fedsim
