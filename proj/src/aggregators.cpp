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

#include "fedsim/aggregators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedsim/error.hpp"
#include "fedsim/hungarian.hpp"
#include "fedsim/metrics.hpp"

namespace fedsim {

double pairwise_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("distance between vectors of length " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

namespace {

void check_clients(std::span<const WeightSet> clients, std::span<const double> n) {
  if (clients.empty()) throw Error(ErrorKind::kAggregation, "no client weights to aggregate");
  if (n.size() != clients.size()) {
    throw ShapeError("got " + std::to_string(n.size()) + " sample counts for " +
                     std::to_string(clients.size()) + " clients");
  }
  const WeightSet& ref = clients.front();
  for (std::size_t k = 1; k < clients.size(); ++k) {
    const WeightSet& w = clients[k];
    if (w.layer_count() != ref.layer_count()) {
      throw ShapeError("client " + std::to_string(k) + " has a different layer count");
    }
    for (std::size_t i = 0; i < ref.layer_count(); ++i) {
      if (w.layers[i].weights.size() != ref.layers[i].weights.size() ||
          w.layers[i].biases.size() != ref.layers[i].biases.size()) {
        throw ShapeError(i, "client " + std::to_string(k) + " disagrees with client 0");
      }
    }
  }
  double total = 0.0;
  for (double v : n) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw Error(ErrorKind::kAggregation, "sample counts must be finite and non-negative");
    }
    total += v;
  }
  if (!(total > 0.0)) throw Error(ErrorKind::kAggregation, "total sample count must be positive");
}

void average_into(std::vector<double>& out, std::span<const WeightSet> clients,
                  std::span<const double> share, std::size_t layer, bool biases) {
  const auto& first = biases ? clients[0].layers[layer].biases : clients[0].layers[layer].weights;
  out.assign(first.size(), 0.0);
  for (std::size_t k = 0; k < clients.size(); ++k) {
    const auto& src = biases ? clients[k].layers[layer].biases : clients[k].layers[layer].weights;
    const double s = share[k];
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += s * src[j];
  }
}

std::vector<double> shares(std::span<const double> n) {
  const double total = std::accumulate(n.begin(), n.end(), 0.0);
  std::vector<double> s(n.size());
  for (std::size_t k = 0; k < n.size(); ++k) s[k] = n[k] / total;
  return s;
}

ModelArchitecture with_units(const ModelArchitecture& arch, std::size_t layer, std::size_t units) {
  auto layers = arch.layers();
  layers[layer].units = units;
  for (auto& l : layers) l.frozen = false;
  return ModelArchitecture(arch.input_shape(), std::move(layers));
}

ModelArchitecture unfrozen(const ModelArchitecture& arch) {
  ModelArchitecture a = arch;
  a.unfreeze_all();
  return a;
}

FreezeStep make_step(const ModelArchitecture& arch, std::size_t layer, std::size_t added) {
  const std::size_t L = arch.layer_count();
  FreezeStep step;
  step.layer = layer;
  step.arch = arch;
  step.arch.freeze_through(layer);
  step.frozen = LayerMask::range(L, 0, layer);
  step.downlink = LayerMask::range(L, 0, layer);
  step.uplink = LayerMask::range(L, layer + 1, L - 1);
  step.units_added = added;
  return step;
}

std::vector<WeightSet> run_step(LayerRetrainer& retrainer, const FreezeStep& step,
                                std::vector<WeightSet> starts) {
  const std::size_t K = starts.size();
  auto out = retrainer.retrain(step, std::move(starts));
  if (out.size() != K) {
    throw Error(ErrorKind::kAggregation, "retrainer returned " + std::to_string(out.size()) +
                                             " models for " + std::to_string(K) + " clients");
  }
  for (const auto& w : out) check_matches(step.arch, w);
  return out;
}

}  // namespace

WeightSet fedavg(std::span<const WeightSet> clients, std::span<const double> sample_counts) {
  check_clients(clients, sample_counts);
  return fedavg_layers(clients.front(), clients, sample_counts,
                       LayerMask::all(clients.front().layer_count()));
}

WeightSet fedavg_layers(const WeightSet& base, std::span<const WeightSet> clients,
                        std::span<const double> sample_counts, const LayerMask& mask) {
  check_clients(clients, sample_counts);
  if (base.layer_count() != clients.front().layer_count() || mask.size() != base.layer_count()) {
    throw ShapeError("base model and mask must match the client layer count");
  }
  const auto share = shares(sample_counts);
  WeightSet out = base;
  for (std::size_t i = 0; i < out.layer_count(); ++i) {
    if (!mask.test(i)) continue;
    average_into(out.layers[i].weights, clients, share, i, false);
    average_into(out.layers[i].biases, clients, share, i, true);
  }
  return out;
}

DistanceMatrix distance_matrix(const ModelArchitecture& arch, const WeightSet& server,
                               std::span<const WeightSet> clients, std::size_t layer) {
  if (layer >= arch.layer_count() || !arch.layer(layer).has_weights()) {
    throw ShapeError(layer, "distances need a layer with units");
  }
  check_matches(arch, server);
  for (const auto& c : clients) check_matches(arch, c);
  DistanceMatrix dm;
  dm.layer = layer;
  dm.clients = clients.size();
  dm.units = arch.units(layer);
  dm.entries.resize(dm.clients * dm.units);
  const std::size_t fi = arch.fan_in(layer);
  const auto& sl = server.layers[layer];
  for (std::size_t k = 0; k < dm.clients; ++k) {
    const auto& cl = clients[k].layers[layer];
    for (std::size_t d = 0; d < dm.units; ++d) {
      const double* a = sl.weights.data() + d * fi;
      const double* b = cl.weights.data() + d * fi;
      double s = 0.0;
      for (std::size_t j = 0; j < fi; ++j) {
        const double diff = a[j] - b[j];
        s += diff * diff;
      }
      const double db = sl.biases[d] - cl.biases[d];
      dm.entries[k * dm.units + d] = std::sqrt(s + db * db);
    }
  }
  dm.mean.assign(dm.units, 0.0);
  dm.std.assign(dm.units, 0.0);
  if (dm.clients == 0) return dm;
  const double K = static_cast<double>(dm.clients);
  for (std::size_t d = 0; d < dm.units; ++d) {
    double m = 0.0;
    for (std::size_t k = 0; k < dm.clients; ++k) m += dm.at(k, d);
    m /= K;
    double ss = 0.0;
    for (std::size_t k = 0; k < dm.clients; ++k) ss += (dm.at(k, d) - m) * (dm.at(k, d) - m);
    dm.mean[d] = m;
    dm.std[d] = std::sqrt(ss / K);
  }
  return dm;
}

double PenaltyPolicy::operator()(std::size_t round) const {
  if (kind == PenaltyKind::kNone) return 0.0;
  if (!(coefficient >= 0.0)) throw Error(ErrorKind::kConfig, "penalty coefficient must be >= 0");
  const double p = coefficient * static_cast<double>(round);
  if (!std::isfinite(p)) throw Error(ErrorKind::kNumeric, "penalty is not finite");
  return p;
}

// ---------------------------------------------------------------------------
// FedPer

std::size_t default_base_layers(const ModelArchitecture& arch) {
  std::size_t base = 0;
  for (std::size_t i = 0; i + 1 < arch.layer_count(); ++i) {
    const auto k = arch.layer(i).kind;
    if (k == LayerKind::kConv1D || k == LayerKind::kMaxPool1D) base = i + 1;
  }
  return base == 0 ? 1 : base;
}

AggregatorDirective fedper(const ModelArchitecture& arch, const WeightSet& server,
                           std::span<const WeightSet> clients,
                           std::span<const double> sample_counts, std::size_t base_layer_count) {
  const std::size_t L = arch.layer_count();
  if (base_layer_count == 0 || base_layer_count >= L) {
    throw Error(ErrorKind::kConfig, "FedPer base layer count must lie in [1, " +
                                        std::to_string(L) + "), got " +
                                        std::to_string(base_layer_count));
  }
  check_matches(arch, server);
  for (const auto& c : clients) check_matches(arch, c);
  AggregatorDirective d;
  d.arch = unfrozen(arch);
  d.overwrite = LayerMask::range(L, 0, base_layer_count - 1);
  d.server_weights = fedavg_layers(server, clients, sample_counts, d.overwrite);
  d.has_global_model = false;
  d.client_weights.assign(clients.begin(), clients.end());
  d.units_added.assign(L, 0);
  return d;
}

// ---------------------------------------------------------------------------
// FedMA

namespace {

std::vector<std::vector<double>> unit_vectors(const ModelArchitecture& arch, const WeightSet& w,
                                              std::size_t layer) {
  std::vector<std::vector<double>> out(arch.units(layer));
  for (std::size_t u = 0; u < out.size(); ++u) out[u] = unit_vector(arch, w, layer, u);
  return out;
}

/// Next weighted layer's weights after `layer`'s units are moved: old unit j
/// lands at position mapping[j] of `new_units`; unmapped positions feed zeros.
std::vector<double> remap_incoming(const ModelArchitecture& arch, const WeightSet& w,
                                   std::size_t layer, std::span<const std::size_t> mapping,
                                   std::size_t new_units) {
  const std::size_t next = *arch.next_weighted(layer);
  const std::size_t block = fan_out_block(arch, layer);
  const std::size_t rows = arch.units(next);
  const std::size_t old_row = arch.units(layer) * block;
  const std::size_t new_row = new_units * block;
  const auto& src = w.layers[next].weights;
  std::vector<double> out(rows * new_row, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < mapping.size(); ++j) {
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(r * old_row + j * block), block,
                  out.begin() + static_cast<std::ptrdiff_t>(r * new_row + mapping[j] * block));
    }
  }
  return out;
}

}  // namespace

AggregatorDirective fedma_lite(const AggregationInput& in, const FedMaParams& params,
                               LayerRetrainer& retrainer) {
  const std::size_t K = in.clients.size();
  if (K < 2) throw Error(ErrorKind::kAggregation, "matched averaging needs at least two clients");
  check_clients(in.clients, in.sample_counts);
  for (const auto& c : in.clients) check_matches(in.arch, c);
  if (params.epsilon && !(*params.epsilon >= 0.0)) {
    throw Error(ErrorKind::kConfig, "FedMA epsilon must be >= 0");
  }

  const std::size_t L = in.arch.layer_count();
  AggregatorDirective d;
  d.arch = unfrozen(in.arch);
  d.units_added.assign(L, 0);
  std::vector<WeightSet> cur(in.clients.begin(), in.clients.end());
  std::vector<LayerWeights> global(L);
  const auto& n = in.sample_counts;
  const std::size_t anchor =
      static_cast<std::size_t>(std::max_element(n.begin(), n.end()) - n.begin());

  const auto growable = d.arch.growable_layers();
  for (std::size_t l : growable) {
    const std::size_t fi = d.arch.fan_in(l);
    const std::size_t D = d.arch.units(l);

    auto templates = unit_vectors(d.arch, cur[anchor], l);
    std::vector<std::vector<double>> sums(templates.size());
    std::vector<double> mass(templates.size(), n[anchor]);
    for (std::size_t g = 0; g < templates.size(); ++g) {
      sums[g] = templates[g];
      for (double& v : sums[g]) v *= n[anchor];
    }
    std::vector<std::vector<std::size_t>> mapping(K, std::vector<std::size_t>(D));
    std::iota(mapping[anchor].begin(), mapping[anchor].end(), std::size_t{0});

    for (std::size_t k = 0; k < K; ++k) {
      if (k == anchor) continue;
      const auto vk = unit_vectors(d.arch, cur[k], l);
      const std::size_t G = templates.size();
      Matrix cost{D, G, std::vector<double>(D * G)};
      for (std::size_t j = 0; j < D; ++j)
        for (std::size_t g = 0; g < G; ++g) cost(j, g) = pairwise_distance(vk[j], templates[g]);
      const Assignment asg = solve_assignment(cost);

      std::vector<double> matched(D);
      for (std::size_t j = 0; j < D; ++j) {
        matched[j] = cost(j, static_cast<std::size_t>(asg.row_to_col[j]));
      }
      double eps;
      if (params.epsilon) {
        eps = *params.epsilon;
      } else {
        const MeanStd ms = mean_std(matched);
        eps = ms.mean + params.epsilon_sigmas * ms.std;
      }
      for (std::size_t j = 0; j < D; ++j) {
        if (matched[j] > eps) {
          templates.push_back(vk[j]);
          sums.push_back(vk[j]);
          for (double& v : sums.back()) v *= n[k];
          mass.push_back(n[k]);
          mapping[k][j] = templates.size() - 1;
        } else {
          const auto g = static_cast<std::size_t>(asg.row_to_col[j]);
          for (std::size_t i = 0; i < sums[g].size(); ++i) sums[g][i] += n[k] * vk[j][i];
          mass[g] += n[k];
          mapping[k][j] = g;
        }
      }
    }

    const std::size_t G = templates.size();
    LayerWeights merged;
    merged.weights.resize(G * fi);
    merged.biases.resize(G);
    for (std::size_t g = 0; g < G; ++g) {
      const double inv = mass[g] > 0.0 ? 1.0 / mass[g] : 0.0;
      for (std::size_t i = 0; i < fi; ++i) merged.weights[g * fi + i] = sums[g][i] * inv;
      merged.biases[g] = sums[g][fi] * inv;
    }

    const ModelArchitecture next_arch = with_units(d.arch, l, G);
    const std::size_t nl = *d.arch.next_weighted(l);
    std::vector<WeightSet> starts(K);
    for (std::size_t k = 0; k < K; ++k) {
      WeightSet s = cur[k];
      s.layers[nl].weights = remap_incoming(d.arch, cur[k], l, mapping[k], G);
      for (std::size_t i = 0; i < l; ++i) s.layers[i] = global[i];
      s.layers[l] = merged;
      starts[k] = std::move(s);
    }
    global[l] = merged;
    d.units_added[l] = G - D;
    d.arch = next_arch;
    FreezeStep step = make_step(d.arch, l, G - D);
    cur = run_step(retrainer, step, std::move(starts));
    d.freeze_plan.push_back(std::move(step));
  }

  const std::size_t matched_through = growable.empty() ? 0 : growable.back() + 1;
  LayerMask rest(L);
  for (std::size_t i = matched_through; i < L; ++i) rest.set(i);
  d.server_weights = fedavg_layers(cur.front(), cur, in.sample_counts, rest);
  for (std::size_t i = 0; i < matched_through; ++i) {
    if (d.arch.layer(i).has_weights()) d.server_weights.layers[i] = global[i];
  }
  check_matches(d.arch, d.server_weights);
  d.overwrite = LayerMask::all(L);
  d.client_weights = std::move(cur);
  return d;
}

// ---------------------------------------------------------------------------
// FedDist

double growth_threshold(double mean, double std, double sigmas, double penalty) {
  return sigmas * std + mean + penalty;
}

std::vector<OutlierUnit> select_outliers(const DistanceMatrix& dm, const FedDistParams& params,
                                         std::size_t round) {
  const double penalty = params.penalty(round);
  std::vector<OutlierUnit> out;
  for (std::size_t d = 0; d < dm.units; ++d) {
    const double thr = growth_threshold(dm.mean[d], dm.std[d], params.threshold_sigmas, penalty);
    std::size_t far = 0;
    for (std::size_t k = 1; k < dm.clients; ++k) {
      if (dm.at(k, d) > dm.at(far, d)) far = k;
    }
    if (dm.clients == 0) continue;
    if (params.trigger == OutlierTrigger::kMean) {
      if (dm.mean[d] > thr) out.push_back({d, far, dm.at(far, d), thr});
      continue;
    }
    if (params.append_all_offenders) {
      for (std::size_t k = 0; k < dm.clients; ++k) {
        if (dm.at(k, d) > thr) out.push_back({d, k, dm.at(k, d), thr});
      }
    } else if (dm.at(far, d) > thr) {
      out.push_back({d, far, dm.at(far, d), thr});
    }
  }
  return out;
}

AggregatorDirective feddist(const AggregationInput& in, const FedDistParams& params,
                            LayerRetrainer& retrainer) {
  if (in.round < 1) throw Error(ErrorKind::kAggregation, "rounds are numbered from 1");
  check_clients(in.clients, in.sample_counts);
  for (const auto& c : in.clients) check_matches(in.arch, c);
  params.penalty(in.round);
  if (!(params.threshold_sigmas >= 0.0)) {
    throw Error(ErrorKind::kConfig, "threshold_sigmas must be >= 0");
  }

  const std::size_t L = in.arch.layer_count();
  const std::size_t K = in.clients.size();
  AggregatorDirective d;
  d.arch = unfrozen(in.arch);
  d.server_weights = fedavg(in.clients, in.sample_counts);
  d.units_added.assign(L, 0);
  std::vector<WeightSet> cur(in.clients.begin(), in.clients.end());

  for (std::size_t l : d.arch.growable_layers()) {
    const DistanceMatrix dm = distance_matrix(d.arch, d.server_weights, cur, l);
    const auto outliers = select_outliers(dm, params, in.round);
    if (outliers.empty()) continue;

    std::vector<NewUnit> units;
    units.reserve(outliers.size());
    for (const auto& o : outliers) {
      auto v = unit_vector(d.arch, cur[o.client], l, o.unit);
      const double bias = v.back();
      v.pop_back();
      units.push_back({std::move(v), bias});
    }
    GrownModel grown = grow_layer(d.arch, d.server_weights, l, units);

    std::vector<WeightSet> starts(K);
    for (std::size_t k = 0; k < K; ++k) {
      WeightSet s = grow_layer(d.arch, cur[k], l, units).weights;
      for (std::size_t i = 0; i <= l; ++i) s.layers[i] = grown.weights.layers[i];
      starts[k] = std::move(s);
    }
    d.units_added[l] += units.size();
    FreezeStep step = make_step(grown.arch, l, units.size());
    cur = run_step(retrainer, step, std::move(starts));
    d.arch = unfrozen(grown.arch);
    d.server_weights = fedavg_layers(grown.weights, cur, in.sample_counts, step.uplink);
    d.freeze_plan.push_back(std::move(step));
  }

  d.overwrite = LayerMask::all(L);
  d.client_weights = std::move(cur);
  return d;
}

// ---------------------------------------------------------------------------
// Registry

namespace {

class FedAvgAggregator final : public Aggregator {
 public:
  std::string name() const override { return "fedavg"; }
  AggregatorDirective aggregate(const AggregationInput& in, LayerRetrainer&) const override {
    for (const auto& c : in.clients) check_matches(in.arch, c);
    AggregatorDirective d;
    d.arch = unfrozen(in.arch);
    d.server_weights = fedavg(in.clients, in.sample_counts);
    d.overwrite = LayerMask::all(in.arch.layer_count());
    d.client_weights.assign(in.clients.begin(), in.clients.end());
    d.units_added.assign(in.arch.layer_count(), 0);
    return d;
  }
};

class FedPerAggregator final : public Aggregator {
 public:
  explicit FedPerAggregator(std::size_t base) : base_(base) {}
  std::string name() const override { return "fedper"; }
  bool has_global_model() const override { return false; }
  LayerMask transmitted_layers(const ModelArchitecture& arch) const override {
    return LayerMask::range(arch.layer_count(), 0, base(arch) - 1);
  }
  AggregatorDirective aggregate(const AggregationInput& in, LayerRetrainer&) const override {
    return fedper(in.arch, in.server, in.clients, in.sample_counts, base(in.arch));
  }

 private:
  std::size_t base(const ModelArchitecture& arch) const {
    return base_ == 0 ? default_base_layers(arch) : base_;
  }
  std::size_t base_;
};

class FedMaAggregator final : public Aggregator {
 public:
  explicit FedMaAggregator(FedMaParams p) : params_(p) {}
  std::string name() const override { return "fedma"; }
  AggregatorDirective aggregate(const AggregationInput& in,
                                LayerRetrainer& retrainer) const override {
    return fedma_lite(in, params_, retrainer);
  }

 private:
  FedMaParams params_;
};

class FedDistAggregator final : public Aggregator {
 public:
  explicit FedDistAggregator(FedDistParams p) : params_(p) {}
  std::string name() const override { return "feddist"; }
  AggregatorDirective aggregate(const AggregationInput& in,
                                LayerRetrainer& retrainer) const override {
    return feddist(in, params_, retrainer);
  }

 private:
  FedDistParams params_;
};

}  // namespace

std::unique_ptr<Aggregator> make_aggregator(const std::string& name, const StrategyParams& params) {
  if (name == "fedavg") return std::make_unique<FedAvgAggregator>();
  if (name == "fedper") return std::make_unique<FedPerAggregator>(params.fedper_base_layers);
  if (name == "fedma") return std::make_unique<FedMaAggregator>(params.fedma);
  if (name == "feddist") return std::make_unique<FedDistAggregator>(params.feddist);
  throw Error(ErrorKind::kConfig, "unknown strategy '" + name +
                                      "' (expected fedavg, fedper, fedma or feddist)");
}

}  // namespace fedsim
