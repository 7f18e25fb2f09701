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
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedsim/aggregators.hpp"
#include "fedsim/data.hpp"
#include "fedsim/engine.hpp"
#include "fedsim/nn.hpp"

namespace fedsim {

/// Parses "<n>-<k>C", "<k>M" and "<n>D" tokens joined by '_' and appends a
/// Softmax of `class_count` units. Errors report the character offset of the
/// offending token.
ModelArchitecture parse_arch(const std::string& notation, Shape input, std::size_t class_count);

struct CsvRecordingSpec {
  std::string participant;
  std::filesystem::path accelerometer;
  std::filesystem::path gyroscope;
  std::int32_t label = 0;
};

struct DatasetConfig {
  enum class Kind { kSynthetic, kCsv } kind = Kind::kSynthetic;
  SynthSpec synthetic;
  std::vector<CsvRecordingSpec> recordings;
  std::vector<std::string> class_names;  // optional; fixes the class count
  WindowParams window;
  double split_ratio = 0.8;
  std::size_t min_windows = 5;
  double sampling_rate_hz = 50.0;
  bool normalize = true;
};

struct ExperimentConfig {
  std::string name = "experiment";
  DatasetConfig dataset;
  std::string arch = "196-16C_4M_1024D";
  std::string strategy = "feddist";
  StrategyParams strategy_params;
  std::size_t rounds = 200;
  TrainConfig train;
  std::uint64_t seed = 1;
  std::size_t parallel_clients = 1;
  FloatWidth wire_width = FloatWidth::k32;
  std::filesystem::path output_dir = "runs/experiment";
  std::size_t checkpoint_interval = 0;  // 0 writes final checkpoints only
  bool client_checkpoints = true;
  bool divergence_trace = true;
};

/// Default configuration as a YAML document.
std::string default_config_yaml();

/// Parses YAML text. `overrides` are "dotted.key=value" pairs applied before
/// validation; relative dataset paths resolve against `base_dir`.
ExperimentConfig parse_config(const std::string& yaml,
                              const std::vector<std::string>& overrides = {},
                              const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides = {});
/// Round-trippable YAML rendering of a configuration.
std::string config_to_yaml(const ExperimentConfig& cfg);

/// Output directory after resolving a relative path against `root` (if set).
std::filesystem::path resolve_output_dir(const ExperimentConfig& cfg,
                                         const std::optional<std::filesystem::path>& root);

struct FederatedData {
  std::vector<ClientPartition> clients;
  WindowedDataset global_test;
  std::size_t class_count = 0;
  Shape input;
  std::vector<std::string> warnings;
};

FederatedData build_data(const ExperimentConfig& cfg);

struct RunResult {
  std::filesystem::path output_dir;
  std::vector<RoundReport> reports;
  ModelArchitecture initial_arch;
  ModelArchitecture final_arch;
};

using RoundCallback = std::function<void(const RoundReport&, std::size_t total_rounds)>;

/// Runs the configured experiment and writes rounds.csv, rounds.jsonl,
/// summary.json, divergence.csv, config.yaml and checkpoints/ into `out_dir`.
RunResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                         const RoundCallback& on_round = {});

/// Header and rows of rounds.csv.
std::string rounds_csv_header();
std::string rounds_csv_row(const RoundReport& r);

/// Best value and its round for one metric; ties go to the earliest round.
struct BestRound {
  std::size_t round = 0;
  double value = 0.0;
};
std::optional<BestRound> best_round(const std::vector<std::pair<std::size_t, std::optional<double>>>& series);

struct Comparison {
  std::string per_round_csv;
  std::string best_csv;
};

/// Aligns rounds.csv files of several runs by round number.
Comparison compare_runs(const std::vector<std::filesystem::path>& dirs);

/// Human-readable (or JSON) description of a checkpoint file.
std::string describe_checkpoint(const Checkpoint& ckpt, bool json);

}  // namespace fedsim
