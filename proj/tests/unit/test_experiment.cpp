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

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <random>
#include <sstream>

#include "fedsim/error.hpp"
#include "fedsim/experiment.hpp"
#include "fedsim/serialize.hpp"

using namespace fedsim;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t parse_position(const std::string& arch) {
  try {
    parse_arch(arch, {128, 6}, 8);
  } catch (const ParseError& e) {
    return e.position();
  }
  FAIL("expected a parse error for " << arch);
  return 0;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

const char* kSmall = R"(
name: small
rounds: 3
arch: 4-3C_2M_8D
strategy: {name: fedavg}
training: {local_epochs: 1, batch_size: 16, learning_rate: 0.05}
dataset:
  synthetic: {clients: 3, classes: 3, samples_per_client: 60, window_length: 8, channels: 2}
)";

}  // namespace

TEST_CASE("architecture notation") {
  const auto a = parse_arch("196-16C_4M_1024D", {128, 6}, 8);
  REQUIRE(a.layer_count() == 4);
  CHECK(a.layer(0).kind == LayerKind::kConv1D);
  CHECK(a.layer(0).units == 196);
  CHECK(a.layer(0).kernel == 16);
  CHECK(a.layer(1).kernel == 4);
  CHECK(a.layer(2).units == 1024);
  CHECK(a.layer(3).units == 8);

  const auto grown = parse_arch("222-16C_4M_2250D", {128, 6}, 8);
  CHECK(grown.units(0) == 222);
  CHECK(grown.units(2) == 2250);

  const auto d = parse_arch("4D", {1, 3}, 2);
  CHECK(d.layer_count() == 2);
  CHECK(d.layer(1).kind == LayerKind::kSoftmax);
}

TEST_CASE("architecture notation errors carry positions") {
  CHECK(parse_position("196-16C_4X_1024D") == 9);
  CHECK(parse_position("196-16C__1024D") == 8);
  CHECK(parse_position("196-C_4M") == 4);
  CHECK(parse_position("abcD") == 0);
  CHECK(parse_position("16C") == 0);
  CHECK(parse_position("0D") == 0);
  CHECK(parse_position("4D_200-16C") == 3);
  CHECK(parse_position("") == 0);
  CHECK_THROWS_AS(parse_arch("4D", {1, 1}, 1), Error);
}

TEST_CASE("config defaults and overrides") {
  const auto d = parse_config("");
  CHECK(d.rounds == 200);
  CHECK(d.arch == "196-16C_4M_1024D");
  CHECK(d.train.local_epochs == 5);
  CHECK(d.train.batch_size == 32);
  CHECK(d.train.dropout_rate == 0.5);
  CHECK(d.strategy == "feddist");

  const auto c = parse_config(kSmall, {"rounds=7", "strategy.feddist.trigger=mean",
                                       "dataset.synthetic.client_noise=[[1.0],[2.0],[0.5]]"});
  CHECK(c.rounds == 7);
  CHECK(c.strategy == "fedavg");
  CHECK(c.strategy_params.feddist.trigger == OutlierTrigger::kMean);
  CHECK(c.dataset.synthetic.client_noise.size() == 3);
  CHECK(c.output_dir == fs::path("runs/small"));

  const auto again = parse_config(config_to_yaml(c));
  CHECK(config_to_yaml(again) == config_to_yaml(c));
}

TEST_CASE("config errors are config errors") {
  auto kind = [](const std::string& yaml, std::vector<std::string> ov = {}) {
    try {
      parse_config(yaml, ov);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::kData;
  };
  CHECK(kind("roundz: 3") == ErrorKind::kConfig);
  CHECK(kind("rounds: 0") == ErrorKind::kConfig);
  CHECK(kind("rounds: many") == ErrorKind::kConfig);
  CHECK(kind("strategy: {name: fedprox}") == ErrorKind::kConfig);
  CHECK(kind("arch: 4Q") == ErrorKind::kConfig);
  CHECK(kind("rounds: [1") == ErrorKind::kConfig);
  CHECK(kind("", {"training.nope=1"}) == ErrorKind::kConfig);
  CHECK(kind("", {"rounds"}) == ErrorKind::kConfig);
  CHECK(kind("training: {dropout: 1.5}") == ErrorKind::kConfig);
}

TEST_CASE("output directory resolution") {
  auto c = parse_config("name: x");
  CHECK(resolve_output_dir(c, std::nullopt) == fs::path("runs/x"));
  CHECK(resolve_output_dir(c, fs::path("/data")) == fs::path("/data/runs/x"));
  c = parse_config("output: {dir: /abs/out}");
  CHECK(resolve_output_dir(c, fs::path("/data")) == fs::path("/abs/out"));
}

TEST_CASE("single round single client run writes every artifact") {
  TempDir tmp("fedsim_test_run1");
  const auto cfg = parse_config(kSmall, {"rounds=1", "dataset.synthetic.clients=1"});
  const auto res = run_experiment(cfg, tmp.path);
  CHECK(res.reports.size() == 1);
  for (const char* f : {"rounds.csv", "rounds.jsonl", "summary.json", "divergence.csv",
                        "config.yaml", "checkpoints/server_final.fsck",
                        "checkpoints/client_client0_final.fsck"})
    CHECK_MESSAGE(fs::exists(tmp.path / f), f);
  const auto csv = slurp(tmp.path / "rounds.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
  CHECK(csv.rfind(rounds_csv_header(), 0) == 0);

  const auto ck = load_checkpoint(tmp.path / "checkpoints/server_final.fsck");
  CHECK(ck.round == 1);
  CHECK(ck.arch.notation() == "4-3C_2M_8D");
  const auto path2 = tmp.path / "copy.fsck";
  save_checkpoint(path2, ck);
  CHECK(slurp(path2) == slurp(tmp.path / "checkpoints/server_final.fsck"));
  CHECK(describe_checkpoint(ck, false).find("4-3C_2M_8D") != std::string::npos);
  CHECK(nlohmann::json::parse(describe_checkpoint(ck, true))["round"] == 1);
}

TEST_CASE("reported metrics are recomputable from checkpoints") {
  TempDir tmp("fedsim_test_recompute");
  const auto cfg = parse_config(kSmall);
  const auto res = run_experiment(cfg, tmp.path);
  const auto data = build_data(cfg);
  const auto server = load_checkpoint(tmp.path / "checkpoints/server_final.fsck");
  const auto cm = evaluate(server.arch, server.weights, data.global_test);
  CHECK(macro_f1(cm) == *res.reports.back().eval.global_f1);
  std::vector<double> pers;
  for (const auto& c : data.clients) {
    const auto ck = load_checkpoint(tmp.path / ("checkpoints/client_" + c.client_id + "_final.fsck"));
    pers.push_back(macro_f1(evaluate(ck.arch, ck.weights, c.test)));
  }
  CHECK(mean_std(pers).mean == res.reports.back().eval.personalization_f1.mean);

  const auto summary = nlohmann::json::parse(slurp(tmp.path / "summary.json"));
  CHECK(summary["arch_delta"] == std::vector<long>{0, 0, 0, 0});
  std::vector<std::pair<std::size_t, std::optional<double>>> series;
  for (const auto& r : res.reports) series.emplace_back(r.round, r.eval.global_f1);
  const auto best = best_round(series);
  REQUIRE(best);
  CHECK(summary["best"]["global_f1"]["round"] == best->round);
}

TEST_CASE("runs are deterministic") {
  TempDir a("fedsim_test_det_a"), b("fedsim_test_det_b");
  const auto cfg = parse_config(kSmall, {"strategy.name=feddist", "strategy.feddist.threshold_sigmas=0"});
  run_experiment(cfg, a.path);
  auto par = cfg;
  par.parallel_clients = 3;
  run_experiment(par, b.path);
  CHECK(slurp(a.path / "rounds.csv") == slurp(b.path / "rounds.csv"));
  CHECK(slurp(a.path / "checkpoints/server_final.fsck") ==
        slurp(b.path / "checkpoints/server_final.fsck"));
}

TEST_CASE("best round scan") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 200; ++t) {
    std::vector<std::pair<std::size_t, std::optional<double>>> s;
    const std::size_t n = 1 + rng() % 12;
    for (std::size_t r = 1; r <= n; ++r) {
      if (rng() % 5 == 0) s.emplace_back(r, std::nullopt);
      else s.emplace_back(r, static_cast<double>(rng() % 6) / 5.0);
    }
    std::optional<BestRound> naive;
    for (const auto& [r, v] : s)
      if (v && (!naive || *v > naive->value)) naive = BestRound{r, *v};
    const auto got = best_round(s);
    REQUIRE(got.has_value() == naive.has_value());
    if (got) {
      CHECK(got->round == naive->round);
      CHECK(got->value == naive->value);
    }
  }
}

TEST_CASE("compare aligns runs") {
  TempDir root("fedsim_test_compare");
  const auto cfg = parse_config(kSmall);
  run_experiment(cfg, root.path / "avg");
  run_experiment(cfg, root.path / "avg2");
  auto dist = cfg;
  dist.strategy = "feddist";
  run_experiment(dist, root.path / "dist");

  const auto same = compare_runs({root.path / "avg", root.path / "avg2"});
  std::istringstream lines(same.per_round_csv);
  std::string header, row;
  std::getline(lines, header);
  CHECK(header.find("avg2-avg:global_f1") != std::string::npos);
  std::vector<std::string> cols;
  {
    std::stringstream hs(header);
    for (std::string c; std::getline(hs, c, ',');) cols.push_back(c);
  }
  std::size_t rows = 0;
  while (std::getline(lines, row)) {
    ++rows;
    std::stringstream rs(row);
    std::size_t i = 0;
    for (std::string v; std::getline(rs, v, ','); ++i)
      if (cols[i].find("-avg:") != std::string::npos) CHECK(std::stod(v) == 0.0);
  }
  CHECK(rows == 3);

  const auto mixed = compare_runs({root.path / "avg", root.path / "dist"});
  CHECK(mixed.per_round_csv.find("avg:global_f1") != std::string::npos);
  CHECK(mixed.per_round_csv.find("dist:global_f1") != std::string::npos);
  CHECK(mixed.best_csv.find("dist,global_f1,") != std::string::npos);

  CHECK_THROWS_AS(compare_runs({root.path / "avg"}), Error);
  CHECK_THROWS_AS(compare_runs({root.path / "avg", root.path / "missing"}), Error);
  {
    std::ofstream bad(root.path / "avg2" / "rounds.csv");
    bad << "round,other\n1,2\n";
  }
  try {
    compare_runs({root.path / "avg", root.path / "avg2"});
    FAIL("expected a format error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kFormat);
  }
}

TEST_CASE("CSV datasets flow through the runner") {
  TempDir tmp("fedsim_test_csvrun");
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  std::string recs;
  for (int p = 0; p < 2; ++p) {
    for (int label = 0; label < 2; ++label) {
      const std::string stem = "p" + std::to_string(p) + "_a" + std::to_string(label);
      std::ofstream acc(tmp.path / (stem + "_acc.csv")), gyr(tmp.path / (stem + "_gyr.csv"));
      acc << "timestamp,x,y,z\n";
      gyr << "timestamp,x,y,z\n";
      for (int t = 0; t < 400; ++t) {
        acc << t * 20 << ',' << g(rng) + 3 * label << ',' << g(rng) << ',' << g(rng) << '\n';
        gyr << t * 20 + 3 << ',' << g(rng) << ',' << g(rng) - 2 * label << ',' << g(rng) << '\n';
      }
      recs += "    - {participant: p" + std::to_string(p) + ", label: " + std::to_string(label) +
              ", accelerometer: " + stem + "_acc.csv, gyroscope: " + stem + "_gyr.csv}\n";
    }
  }
  {
    std::ofstream y(tmp.path / "cfg.yaml");
    y << "name: csv\nrounds: 2\narch: 4-5C_2M_8D\nstrategy: {name: fedper}\n"
         "training: {local_epochs: 1}\n"
         "dataset:\n  kind: csv\n  csv:\n    window: 32\n    overlap: 16\n    classes: [sit, walk]\n"
         "    recordings:\n"
      << recs;
  }
  const auto cfg = load_config(tmp.path / "cfg.yaml");
  const auto data = build_data(cfg);
  CHECK(data.clients.size() == 2);
  CHECK(data.class_count == 2);
  CHECK(data.input == Shape{32, 6});
  const auto res = run_experiment(cfg, tmp.path / "out");
  CHECK(res.reports.size() == 2);
  CHECK_FALSE(res.reports[0].eval.global_f1.has_value());
  const auto csv = slurp(tmp.path / "out" / "rounds.csv");
  CHECK(csv.find(",NA,NA,") != std::string::npos);
}
