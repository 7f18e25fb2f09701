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

#include "fedsim/engine.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <numeric>
#include <thread>

#include "fedsim/error.hpp"
#include "rng.hpp"

namespace fedsim {

void CommLedger::record(std::uint64_t up, std::uint64_t down) {
  uplink.push_back(up);
  downlink.push_back(down);
  total_uplink += up;
  total_downlink += down;
}

namespace {

/// Runs fn(0..n-1) on up to `threads` threads. Exceptions are rethrown in index
/// order once every task has finished.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t extra = std::min(threads, n) - 1;
  pool.reserve(extra);
  for (std::size_t t = 0; t < extra; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Encodes the masked layers of `src`, decodes them on the receiving side and
/// writes them over `dst`. Returns the payload size.
std::uint64_t transmit(const WeightSet& src, const LayerMask& mask, FloatWidth width,
                       WeightSet& dst) {
  const auto bytes = serialize_weights(src, mask, width);
  merge_payload(dst, deserialize_weights(bytes));
  return bytes.size();
}

std::uint64_t sum(const std::vector<std::uint64_t>& v) {
  return std::accumulate(v.begin(), v.end(), std::uint64_t{0});
}

class EngineRetrainer final : public LayerRetrainer {
 public:
  EngineRetrainer(const std::vector<ClientState>& clients, const EngineConfig& cfg,
                  std::size_t round, const RoundHooks& hooks)
      : clients_(clients), cfg_(cfg), round_(round), hooks_(hooks) {}

  std::vector<WeightSet> retrain(const FreezeStep& step, std::vector<WeightSet> starts) override {
    const std::size_t K = clients_.size();
    if (starts.size() != K) {
      throw Error(ErrorKind::kAggregation, "sub-round needs one start model per client");
    }
    ++substeps_;
    std::vector<WeightSet> before(K), local(K), view(K);
    std::vector<std::uint64_t> down(K, 0), up(K, 0);
    parallel_for(K, cfg_.parallel_clients, [&](std::size_t k) {
      WeightSet w = starts[k];
      down[k] = transmit(starts[k], step.downlink, cfg_.wire_width, w);
      TrainConfig tc = cfg_.train;
      tc.rng_seed = detail::derive_seed(cfg_.seed, round_, k, substeps_);
      local[k] = train_local(step.arch, w, clients_[k].train, tc);
      view[k] = w;
      up[k] = transmit(local[k], step.uplink, cfg_.wire_width, view[k]);
      before[k] = std::move(w);
    });
    if (hooks_.on_substep) hooks_.on_substep(step, before, local);
    downlink_ += sum(down);
    uplink_ += sum(up);
    client_side_ = std::move(local);
    return view;
  }

  std::size_t substeps() const { return substeps_; }
  std::uint64_t uplink() const { return uplink_; }
  std::uint64_t downlink() const { return downlink_; }
  std::vector<WeightSet>& client_side() { return client_side_; }

 private:
  const std::vector<ClientState>& clients_;
  const EngineConfig& cfg_;
  std::size_t round_;
  const RoundHooks& hooks_;
  std::size_t substeps_ = 0;
  std::uint64_t uplink_ = 0;
  std::uint64_t downlink_ = 0;
  std::vector<WeightSet> client_side_;
};

}  // namespace

ServerState make_server(const ModelArchitecture& arch, std::uint64_t seed) {
  ServerState s;
  s.arch = arch;
  s.arch.unfreeze_all();
  s.weights = init_weights(s.arch, seed);
  return s;
}

void init_clients(const ServerState& server, std::vector<ClientState>& clients) {
  for (auto& c : clients) c.weights = server.weights;
}

EvalSummary evaluate_round(const ModelArchitecture& arch, const WeightSet* server,
                           const std::vector<WeightSet>& client_models,
                           const std::vector<const WindowedDataset*>& client_tests,
                           const WindowedDataset& global_test, std::size_t threads) {
  if (global_test.empty()) throw Error(ErrorKind::kData, "global test set is empty");
  if (client_models.size() != client_tests.size()) {
    throw Error(ErrorKind::kData, "one test set per client model is required");
  }
  EvalSummary out;
  if (server != nullptr) {
    const ConfusionMatrix cm = evaluate(arch, *server, global_test);
    out.global_f1 = macro_f1(cm);
    out.global_accuracy = accuracy(cm);
  }
  const std::size_t K = client_models.size();
  std::vector<double> pf(K), pa(K), gf(K), ga(K);
  parallel_for(K, threads, [&](std::size_t k) {
    const ConfusionMatrix own = evaluate(arch, client_models[k], *client_tests[k]);
    const ConfusionMatrix all = evaluate(arch, client_models[k], global_test);
    pf[k] = macro_f1(own);
    pa[k] = accuracy(own);
    gf[k] = macro_f1(all);
    ga[k] = accuracy(all);
  });
  out.personalization_f1 = mean_std(pf);
  out.personalization_accuracy = mean_std(pa);
  out.generalization_f1 = mean_std(gf);
  out.generalization_accuracy = mean_std(ga);
  out.client_personalization_f1 = std::move(pf);
  out.client_generalization_f1 = std::move(gf);
  return out;
}

RoundReport run_round(ServerState& server, std::vector<ClientState>& clients,
                      const Aggregator& strategy, const EngineConfig& cfg,
                      const WindowedDataset* global_test, const RoundHooks& hooks) {
  if (clients.empty()) throw Error(ErrorKind::kConfig, "a round needs at least one client");
  validate(cfg.train);
  check_matches(server.arch, server.weights);
  for (const auto& c : clients) check_matches(server.arch, c.weights);

  const std::size_t t = server.round + 1;
  const std::size_t K = clients.size();
  const LayerMask mask = strategy.transmitted_layers(server.arch);

  std::vector<WeightSet> trained(K), uploaded(K);
  std::vector<std::uint64_t> down(K, 0), up(K, 0);
  parallel_for(K, cfg.parallel_clients, [&](std::size_t k) {
    WeightSet w = clients[k].weights;
    down[k] = transmit(server.weights, mask, cfg.wire_width, w);
    TrainConfig tc = cfg.train;
    tc.rng_seed = detail::derive_seed(cfg.seed, t, k, 0);
    trained[k] = train_local(server.arch, std::move(w), clients[k].train, tc);
    uploaded[k] = server.weights;
    up[k] = transmit(trained[k], mask, cfg.wire_width, uploaded[k]);
  });

  std::vector<double> n(K);
  for (std::size_t k = 0; k < K; ++k) n[k] = clients[k].sample_count();

  EngineRetrainer retrainer(clients, cfg, t, hooks);
  const AggregationInput in{server.arch, server.weights, uploaded, n, t};
  AggregatorDirective d = strategy.aggregate(in, retrainer);
  check_matches(d.arch, d.server_weights);
  if (!d.server_weights.all_finite()) {
    throw Error(ErrorKind::kNumeric, "aggregated weights are not finite (round " +
                                         std::to_string(t) + ")");
  }

  std::vector<WeightSet> next = retrainer.substeps() > 0 ? std::move(retrainer.client_side())
                                                         : std::move(trained);
  for (const auto& w : next) check_matches(d.arch, w);

  RoundReport r;
  r.round = t;
  r.units = d.arch.unit_counts();
  r.units_added = d.units_added;
  r.units_added.resize(d.arch.layer_count(), 0);
  r.substeps = retrainer.substeps();
  r.uplink_bytes = sum(up) + retrainer.uplink();
  r.downlink_bytes = sum(down) + retrainer.downlink();
  r.cumulative_uplink = server.ledger.total_uplink + r.uplink_bytes;
  r.cumulative_downlink = server.ledger.total_downlink + r.downlink_bytes;
  if (cfg.track_divergence) {
    const WeightSet avg = fedavg_layers(server.weights, uploaded, n, mask);
    r.divergence = divergence_snapshot(server.arch, avg, uploaded, mask);
  }
  if (global_test != nullptr) {
    std::vector<const WindowedDataset*> tests(K);
    for (std::size_t k = 0; k < K; ++k) tests[k] = &clients[k].test;
    r.eval = evaluate_round(d.arch, d.has_global_model ? &d.server_weights : nullptr, next, tests,
                            *global_test, cfg.parallel_clients);
  }

  // Commit.
  server.history.reserve(server.history.size() + 1);
  server.ledger.uplink.reserve(server.ledger.uplink.size() + 1);
  server.ledger.downlink.reserve(server.ledger.downlink.size() + 1);
  server.history.push_back(r);
  server.ledger.record(r.uplink_bytes, r.downlink_bytes);
  server.arch = std::move(d.arch);
  server.weights = std::move(d.server_weights);
  server.round = t;
  server.has_global_model = d.has_global_model;
  for (std::size_t k = 0; k < K; ++k) clients[k].weights = std::move(next[k]);
  return r;
}

}  // namespace fedsim
