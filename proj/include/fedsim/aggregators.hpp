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
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedsim/nn.hpp"
#include "fedsim/serialize.hpp"

namespace fedsim {

/// Euclidean distance between two unit vectors (incoming weights + bias).
double pairwise_distance(std::span<const double> a, std::span<const double> b);

/// Distances between every client's unit d and the server's unit d of one layer.
struct DistanceMatrix {
  std::size_t layer = 0;
  std::size_t clients = 0;
  std::size_t units = 0;
  std::vector<double> entries;  // clients x units, row-major
  std::vector<double> mean;     // per unit, over clients
  std::vector<double> std;      // per unit, population std over clients

  double at(std::size_t client, std::size_t unit) const { return entries[client * units + unit]; }
};

DistanceMatrix distance_matrix(const ModelArchitecture& arch, const WeightSet& server,
                               std::span<const WeightSet> clients, std::size_t layer);

enum class PenaltyKind { kNone, kLinear };

/// Round-indexed term added to the growth threshold.
struct PenaltyPolicy {
  PenaltyKind kind = PenaltyKind::kLinear;
  double coefficient = 0.0;

  /// Throws when the result is not finite or the coefficient is negative.
  double operator()(std::size_t round) const;
  static PenaltyPolicy none() { return {PenaltyKind::kNone, 0.0}; }
  static PenaltyPolicy linear(double c) { return {PenaltyKind::kLinear, c}; }
};

/// Coordinate-wise average weighted by sample count, summed in client order.
WeightSet fedavg(std::span<const WeightSet> clients, std::span<const double> sample_counts);

/// Averages the layers selected by `mask`; other layers are copied from `base`.
WeightSet fedavg_layers(const WeightSet& base, std::span<const WeightSet> clients,
                        std::span<const double> sample_counts, const LayerMask& mask);

/// One layer-wise sub-round: clients adopt the server's layers in `downlink`,
/// train with `frozen` fixed, and return the layers in `uplink`.
struct FreezeStep {
  std::size_t layer = 0;
  ModelArchitecture arch;  // frozen flags set for this sub-round
  LayerMask frozen;
  LayerMask downlink;
  LayerMask uplink;
  std::size_t units_added = 0;
};

struct AggregatorDirective {
  ModelArchitecture arch;
  WeightSet server_weights;
  bool has_global_model = true;
  /// Layers each client replaces with the server's at the next broadcast.
  LayerMask overwrite;
  /// Sub-rounds executed during aggregation, in order.
  std::vector<FreezeStep> freeze_plan;
  /// Each client's model after aggregation (same architecture as `arch`).
  std::vector<WeightSet> client_weights;
  /// Units appended per layer.
  std::vector<std::size_t> units_added;
};

/// Executes client retraining on behalf of an aggregator. Implementations must
/// leave the layers frozen in step.arch unchanged.
class LayerRetrainer {
 public:
  virtual ~LayerRetrainer() = default;
  virtual std::vector<WeightSet> retrain(const FreezeStep& step, std::vector<WeightSet> starts) = 0;
};

/// Returns its inputs unchanged; useful when no client data is available.
class NoRetrain final : public LayerRetrainer {
 public:
  std::vector<WeightSet> retrain(const FreezeStep&, std::vector<WeightSet> starts) override {
    return starts;
  }
};

struct AggregationInput {
  const ModelArchitecture& arch;
  const WeightSet& server;
  std::span<const WeightSet> clients;
  std::span<const double> sample_counts;
  std::size_t round = 1;
};

class Aggregator {
 public:
  virtual ~Aggregator() = default;
  virtual std::string name() const = 0;
  /// Layers exchanged in the round's main broadcast and upload.
  virtual LayerMask transmitted_layers(const ModelArchitecture& arch) const {
    return LayerMask::all(arch.layer_count());
  }
  virtual bool has_global_model() const { return true; }
  virtual AggregatorDirective aggregate(const AggregationInput& in,
                                        LayerRetrainer& retrainer) const = 0;
};

// ---------------------------------------------------------------------------
// FedPer

/// Aggregates layers [0, base_layer_count); the rest stay with the clients.
AggregatorDirective fedper(const ModelArchitecture& arch, const WeightSet& server,
                           std::span<const WeightSet> clients,
                           std::span<const double> sample_counts, std::size_t base_layer_count);

/// Layers up to and including the last Conv1D/MaxPool1D, or 1 when the model
/// has no convolutional part.
std::size_t default_base_layers(const ModelArchitecture& arch);

// ---------------------------------------------------------------------------
// FedMA (distance-cost matching)

struct FedMaParams {
  /// Match cost above which a client unit becomes a new global unit. When
  /// unset, each client uses mean + epsilon_sigmas * std of its match costs.
  std::optional<double> epsilon;
  double epsilon_sigmas = 3.0;
};

AggregatorDirective fedma_lite(const AggregationInput& in, const FedMaParams& params,
                               LayerRetrainer& retrainer);

// ---------------------------------------------------------------------------
// FedDist

enum class OutlierTrigger {
  kAnyClient,  // some client's own distance exceeds the threshold
  kMean        // the mean distance exceeds the threshold
};

struct FedDistParams {
  PenaltyPolicy penalty = PenaltyPolicy::linear(0.0);
  double threshold_sigmas = 3.0;
  OutlierTrigger trigger = OutlierTrigger::kAnyClient;
  /// Append every offending client's unit instead of only the farthest one.
  bool append_all_offenders = false;
};

struct OutlierUnit {
  std::size_t unit = 0;
  std::size_t client = 0;
  double distance = 0.0;
  double threshold = 0.0;
};

/// Per-unit growth decisions for one layer's distance matrix at round t.
std::vector<OutlierUnit> select_outliers(const DistanceMatrix& dm, const FedDistParams& params,
                                         std::size_t round);

double growth_threshold(double mean, double std, double sigmas, double penalty);

AggregatorDirective feddist(const AggregationInput& in, const FedDistParams& params,
                            LayerRetrainer& retrainer);

// ---------------------------------------------------------------------------
// Strategy registry

struct StrategyParams {
  std::size_t fedper_base_layers = 0;  // 0 selects default_base_layers
  FedMaParams fedma;
  FedDistParams feddist;
};

/// "fedavg" | "fedper" | "fedma" | "feddist"
std::unique_ptr<Aggregator> make_aggregator(const std::string& name, const StrategyParams& params);

}  // namespace fedsim
