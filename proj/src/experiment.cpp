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

#include "fedsim/experiment.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include <fmt/format.h>

#include "fedsim/error.hpp"
#include "fedsim/serialize.hpp"
#include "rng.hpp"

namespace fedsim {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Architecture notation

namespace {

std::size_t parse_count(std::string_view s, std::size_t pos, const char* what) {
  std::size_t v = 0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || ptr != end) {
    throw ParseError(pos, std::string("expected a positive integer for the ") + what + ", got '" +
                              std::string(s) + "'");
  }
  if (v == 0) throw ParseError(pos, std::string(what) + " must be positive");
  return v;
}

}  // namespace

ModelArchitecture parse_arch(const std::string& notation, Shape input, std::size_t class_count) {
  if (notation.empty()) throw ParseError(0, "empty architecture");
  if (class_count < 2) throw Error(ErrorKind::kConfig, "a model needs at least two classes");
  std::vector<LayerSpec> layers;
  std::vector<std::size_t> positions;
  std::size_t start = 0;
  while (start <= notation.size()) {
    std::size_t stop = notation.find('_', start);
    if (stop == std::string::npos) stop = notation.size();
    const std::string_view tok(notation.data() + start, stop - start);
    if (tok.empty()) throw ParseError(start, "empty layer token");
    const char kind = tok.back();
    const std::string_view body = tok.substr(0, tok.size() - 1);
    switch (kind) {
      case 'C': {
        const std::size_t dash = body.find('-');
        if (dash == std::string_view::npos) {
          throw ParseError(start, "convolution token must look like <filters>-<kernel>C");
        }
        const std::size_t filters = parse_count(body.substr(0, dash), start, "filter count");
        const std::size_t kernel = parse_count(body.substr(dash + 1), start + dash + 1, "kernel");
        layers.push_back(LayerSpec::conv1d(filters, kernel));
        break;
      }
      case 'M':
        layers.push_back(LayerSpec::max_pool(parse_count(body, start, "pool length")));
        break;
      case 'D':
        layers.push_back(LayerSpec::dense(parse_count(body, start, "unit count")));
        break;
      default:
        throw ParseError(start + tok.size() - 1,
                         "unknown layer suffix '" + std::string(1, kind) + "' (expected C, M or D)");
    }
    positions.push_back(start);
    start = stop + 1;
  }
  layers.push_back(LayerSpec::softmax(class_count));
  try {
    return ModelArchitecture(input, std::move(layers));
  } catch (const ShapeError& e) {
    const std::size_t at = e.layer() < positions.size() ? positions[e.layer()] : notation.size();
    throw ParseError(at, e.what());
  }
}

// ---------------------------------------------------------------------------
// Configuration

std::string default_config_yaml() {
  return R"(name: experiment
seed: 1
rounds: 200
arch: 196-16C_4M_1024D
strategy:
  name: feddist
  fedper:
    base_layers: 0
  fedma:
    epsilon: ~
    epsilon_sigmas: 3
  feddist:
    penalty: linear
    penalty_coefficient: 0.0003
    threshold_sigmas: 3
    trigger: any_client
    append_all_offenders: false
training:
  local_epochs: 5
  batch_size: 32
  learning_rate: 0.01
  dropout: 0.5
dataset:
  kind: synthetic
  synthetic:
    clients: 5
    classes: 8
    samples_per_client: 200
    window_length: 128
    channels: 6
    class_separation: 2
    noise_std: 1
    client_noise: []
    mode: iid
    dirichlet_alpha: 0.5
    outlier_client: 0
    outlier_offset: 0
    test_fraction: 0.2
    seed: 1
  csv:
    window: 128
    overlap: 64
    split_ratio: 0.8
    min_windows: 5
    sampling_rate_hz: 50
    normalize: true
    classes: []
    recordings: []
engine:
  parallel_clients: 1
  wire_float_bits: 32
output:
  dir: ~
  checkpoint_interval: 0
  client_checkpoints: true
  divergence_trace: true
)";
}

namespace {

std::string join_path(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

/// Copies `user` over `base`. Keys absent from `base` are rejected, except
/// below sequences and null placeholders.
void merge_into(YAML::Node base, const YAML::Node& user, const std::string& path) {
  if (!user.IsMap()) {
    throw Error(ErrorKind::kConfig,
                (path.empty() ? std::string("config") : "'" + path + "'") + " must be a mapping");
  }
  for (const auto& kv : user) {
    const std::string key = kv.first.as<std::string>();
    const std::string full = join_path(path, key);
    if (!base[key]) throw Error(ErrorKind::kConfig, "unknown config key '" + full + "'");
    YAML::Node slot = base[key];
    if (slot.IsMap()) {
      merge_into(slot, kv.second, full);
    } else {
      base[key] = YAML::Clone(kv.second);
    }
  }
}

void apply_override(YAML::Node root, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error(ErrorKind::kConfig, "override '" + assignment + "' must look like key=value");
  }
  const std::string key = assignment.substr(0, eq);
  YAML::Node value;
  try {
    value = YAML::Load(assignment.substr(eq + 1));
  } catch (const YAML::Exception& e) {
    throw Error(ErrorKind::kConfig, "override '" + key + "': " + e.msg);
  }
  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
  YAML::Node user(YAML::NodeType::Map);
  YAML::Node cur = user;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    cur[parts[i]] = YAML::Node(YAML::NodeType::Map);
    cur.reset(cur[parts[i]]);
  }
  cur[parts.back()] = value;
  merge_into(root, user, "");
}

class Reader {
 public:
  explicit Reader(const YAML::Node& root) : root_(root) {}

  YAML::Node node(const std::string& path) const {
    YAML::Node cur = YAML::Clone(root_);
    std::stringstream ss(path);
    for (std::string p; std::getline(ss, p, '.');) {
      if (!cur.IsMap()) return YAML::Node();
      cur.reset(cur[p]);
    }
    return cur;
  }

  template <typename T>
  T get(const std::string& path) const {
    const YAML::Node n = node(path);
    try {
      return n.as<T>();
    } catch (const YAML::Exception&) {
      throw Error(ErrorKind::kConfig, "config key '" + path + "' has an invalid value");
    }
  }

  std::size_t count(const std::string& path) const {
    const auto v = get<long long>(path);
    if (v < 0) throw Error(ErrorKind::kConfig, "config key '" + path + "' must be >= 0");
    return static_cast<std::size_t>(v);
  }

  double real(const std::string& path) const { return get<double>(path); }

 private:
  YAML::Node root_;
};

std::int32_t recording_label(const YAML::Node& n, const std::vector<std::string>& classes,
                             std::size_t index) {
  const std::string where = "dataset.csv.recordings[" + std::to_string(index) + "].label";
  if (!n) throw Error(ErrorKind::kConfig, where + " is required");
  const std::string text = n.as<std::string>();
  const auto it = std::find(classes.begin(), classes.end(), text);
  if (it != classes.end()) return static_cast<std::int32_t>(it - classes.begin());
  try {
    const long long v = n.as<long long>();
    if (v < 0) throw Error(ErrorKind::kConfig, where + " must be >= 0");
    return static_cast<std::int32_t>(v);
  } catch (const YAML::Exception&) {
    throw Error(ErrorKind::kConfig, where + ": '" + text + "' is not a class name or id");
  }
}

ExperimentConfig from_tree(const YAML::Node& root, const fs::path& base_dir) {
  const Reader r(root);
  ExperimentConfig c;
  c.name = r.get<std::string>("name");
  c.seed = r.get<std::uint64_t>("seed");
  c.rounds = r.count("rounds");
  c.arch = r.get<std::string>("arch");

  c.strategy = r.get<std::string>("strategy.name");
  c.strategy_params.fedper_base_layers = r.count("strategy.fedper.base_layers");
  const YAML::Node eps = r.node("strategy.fedma.epsilon");
  if (eps && !eps.IsNull()) c.strategy_params.fedma.epsilon = r.real("strategy.fedma.epsilon");
  c.strategy_params.fedma.epsilon_sigmas = r.real("strategy.fedma.epsilon_sigmas");
  auto& fd = c.strategy_params.feddist;
  const auto penalty = r.get<std::string>("strategy.feddist.penalty");
  if (penalty == "linear") {
    fd.penalty = PenaltyPolicy::linear(r.real("strategy.feddist.penalty_coefficient"));
  } else if (penalty == "none") {
    fd.penalty = PenaltyPolicy::none();
  } else {
    throw Error(ErrorKind::kConfig, "strategy.feddist.penalty must be 'linear' or 'none'");
  }
  fd.threshold_sigmas = r.real("strategy.feddist.threshold_sigmas");
  const auto trigger = r.get<std::string>("strategy.feddist.trigger");
  if (trigger == "any_client") {
    fd.trigger = OutlierTrigger::kAnyClient;
  } else if (trigger == "mean") {
    fd.trigger = OutlierTrigger::kMean;
  } else {
    throw Error(ErrorKind::kConfig, "strategy.feddist.trigger must be 'any_client' or 'mean'");
  }
  fd.append_all_offenders = r.get<bool>("strategy.feddist.append_all_offenders");

  c.train.local_epochs = r.count("training.local_epochs");
  c.train.batch_size = r.count("training.batch_size");
  c.train.learning_rate = r.real("training.learning_rate");
  c.train.dropout_rate = r.real("training.dropout");

  const auto kind = r.get<std::string>("dataset.kind");
  if (kind == "synthetic") {
    c.dataset.kind = DatasetConfig::Kind::kSynthetic;
  } else if (kind == "csv") {
    c.dataset.kind = DatasetConfig::Kind::kCsv;
  } else {
    throw Error(ErrorKind::kConfig, "dataset.kind must be 'synthetic' or 'csv'");
  }
  auto& s = c.dataset.synthetic;
  s.clients = r.count("dataset.synthetic.clients");
  s.classes = r.count("dataset.synthetic.classes");
  s.samples_per_client = r.count("dataset.synthetic.samples_per_client");
  s.window_length = r.count("dataset.synthetic.window_length");
  s.channels = r.count("dataset.synthetic.channels");
  s.class_separation = r.real("dataset.synthetic.class_separation");
  s.noise_std = r.real("dataset.synthetic.noise_std");
  s.client_noise = r.get<std::vector<std::vector<double>>>("dataset.synthetic.client_noise");
  s.mode = synth_mode_from_string(r.get<std::string>("dataset.synthetic.mode"));
  s.dirichlet_alpha = r.real("dataset.synthetic.dirichlet_alpha");
  s.outlier_client = r.count("dataset.synthetic.outlier_client");
  s.outlier_offset = r.real("dataset.synthetic.outlier_offset");
  s.test_fraction = r.real("dataset.synthetic.test_fraction");
  s.seed = r.get<std::uint64_t>("dataset.synthetic.seed");

  c.dataset.window.length = r.count("dataset.csv.window");
  c.dataset.window.overlap = r.count("dataset.csv.overlap");
  c.dataset.split_ratio = r.real("dataset.csv.split_ratio");
  c.dataset.min_windows = r.count("dataset.csv.min_windows");
  c.dataset.sampling_rate_hz = r.real("dataset.csv.sampling_rate_hz");
  c.dataset.normalize = r.get<bool>("dataset.csv.normalize");
  c.dataset.class_names = r.get<std::vector<std::string>>("dataset.csv.classes");
  const YAML::Node recs = r.node("dataset.csv.recordings");
  if (!recs.IsSequence()) throw Error(ErrorKind::kConfig, "dataset.csv.recordings must be a list");
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const YAML::Node n = recs[i];
    const std::string where = "dataset.csv.recordings[" + std::to_string(i) + "]";
    if (!n.IsMap() || !n["participant"] || !n["accelerometer"] || !n["gyroscope"]) {
      throw Error(ErrorKind::kConfig,
                  where + " needs participant, accelerometer, gyroscope and label");
    }
    for (const auto& kv : n) {
      const auto k = kv.first.as<std::string>();
      if (k != "participant" && k != "accelerometer" && k != "gyroscope" && k != "label") {
        throw Error(ErrorKind::kConfig, "unknown config key '" + where + "." + k + "'");
      }
    }
    CsvRecordingSpec spec;
    spec.participant = n["participant"].as<std::string>();
    spec.accelerometer = n["accelerometer"].as<std::string>();
    spec.gyroscope = n["gyroscope"].as<std::string>();
    if (spec.accelerometer.is_relative()) spec.accelerometer = base_dir / spec.accelerometer;
    if (spec.gyroscope.is_relative()) spec.gyroscope = base_dir / spec.gyroscope;
    spec.label = recording_label(n["label"], c.dataset.class_names, i);
    c.dataset.recordings.push_back(std::move(spec));
  }

  c.parallel_clients = r.count("engine.parallel_clients");
  const auto bits = r.count("engine.wire_float_bits");
  if (bits == 32) {
    c.wire_width = FloatWidth::k32;
  } else if (bits == 64) {
    c.wire_width = FloatWidth::k64;
  } else {
    throw Error(ErrorKind::kConfig, "engine.wire_float_bits must be 32 or 64");
  }

  const YAML::Node dir = r.node("output.dir");
  c.output_dir = (dir && !dir.IsNull()) ? fs::path(dir.as<std::string>())
                                        : fs::path("runs") / c.name;
  c.checkpoint_interval = r.count("output.checkpoint_interval");
  c.client_checkpoints = r.get<bool>("output.client_checkpoints");
  c.divergence_trace = r.get<bool>("output.divergence_trace");

  if (c.name.empty()) throw Error(ErrorKind::kConfig, "name must not be empty");
  if (c.rounds < 1) throw Error(ErrorKind::kConfig, "rounds must be >= 1");
  if (c.parallel_clients < 1) throw Error(ErrorKind::kConfig, "engine.parallel_clients must be >= 1");
  if (!(c.dataset.split_ratio > 0.0 && c.dataset.split_ratio < 1.0)) {
    throw Error(ErrorKind::kConfig, "dataset.csv.split_ratio must lie in (0, 1)");
  }
  if (c.dataset.window.length == 0 || c.dataset.window.overlap >= c.dataset.window.length) {
    throw Error(ErrorKind::kConfig, "dataset.csv requires window > overlap >= 0");
  }
  validate(c.train);
  {
    const bool synth = c.dataset.kind == DatasetConfig::Kind::kSynthetic;
    const Shape input = synth ? Shape{c.dataset.synthetic.window_length, c.dataset.synthetic.channels}
                              : Shape{c.dataset.window.length, 6};
    const std::size_t classes = synth ? c.dataset.synthetic.classes : c.dataset.class_names.size();
    parse_arch(c.arch, input, std::max<std::size_t>(classes, 2));
  }
  make_aggregator(c.strategy, c.strategy_params);
  c.strategy_params.feddist.penalty(1);
  return c;
}

}  // namespace

ExperimentConfig parse_config(const std::string& yaml, const std::vector<std::string>& overrides,
                              const fs::path& base_dir) {
  YAML::Node root = YAML::Load(default_config_yaml());
  try {
    const YAML::Node user = YAML::Load(yaml);
    if (user && !user.IsNull()) merge_into(root, user, "");
  } catch (const YAML::Exception& e) {
    throw ParseError(e.mark.pos < 0 ? 0 : static_cast<std::size_t>(e.mark.pos),
                     "YAML line " + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  for (const auto& o : overrides) apply_override(root, o);
  try {
    return from_tree(root, base_dir);
  } catch (const YAML::Exception& e) {
    throw Error(ErrorKind::kConfig, "invalid config value: " + e.msg);
  }
}

ExperimentConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kConfig, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), overrides, path.parent_path());
}

// Shortest text that reads back as the same double.
static std::string num(double v) { return fmt::format("{}", v); }

static std::vector<std::vector<std::string>> nums(const std::vector<std::vector<double>>& rows) {
  std::vector<std::vector<std::string>> out;
  for (const auto& r : rows) {
    out.emplace_back();
    for (double x : r) out.back().push_back(num(x));
  }
  return out;
}

std::string config_to_yaml(const ExperimentConfig& c) {
  YAML::Emitter e;
  e << YAML::BeginMap;
  e << YAML::Key << "name" << YAML::Value << c.name;
  e << YAML::Key << "seed" << YAML::Value << c.seed;
  e << YAML::Key << "rounds" << YAML::Value << c.rounds;
  e << YAML::Key << "arch" << YAML::Value << c.arch;

  const auto& sp = c.strategy_params;
  e << YAML::Key << "strategy" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "name" << YAML::Value << c.strategy;
  e << YAML::Key << "fedper" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "base_layers" << YAML::Value << sp.fedper_base_layers << YAML::EndMap;
  e << YAML::Key << "fedma" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "epsilon" << YAML::Value;
  if (sp.fedma.epsilon) {
    e << num(*sp.fedma.epsilon);
  } else {
    e << YAML::Null;
  }
  e << YAML::Key << "epsilon_sigmas" << YAML::Value << num(sp.fedma.epsilon_sigmas) << YAML::EndMap;
  e << YAML::Key << "feddist" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "penalty" << YAML::Value
    << (sp.feddist.penalty.kind == PenaltyKind::kNone ? "none" : "linear");
  e << YAML::Key << "penalty_coefficient" << YAML::Value << num(sp.feddist.penalty.coefficient);
  e << YAML::Key << "threshold_sigmas" << YAML::Value << num(sp.feddist.threshold_sigmas);
  e << YAML::Key << "trigger" << YAML::Value
    << (sp.feddist.trigger == OutlierTrigger::kMean ? "mean" : "any_client");
  e << YAML::Key << "append_all_offenders" << YAML::Value << sp.feddist.append_all_offenders;
  e << YAML::EndMap << YAML::EndMap;

  e << YAML::Key << "training" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "local_epochs" << YAML::Value << c.train.local_epochs;
  e << YAML::Key << "batch_size" << YAML::Value << c.train.batch_size;
  e << YAML::Key << "learning_rate" << YAML::Value << num(c.train.learning_rate);
  e << YAML::Key << "dropout" << YAML::Value << num(c.train.dropout_rate);
  e << YAML::EndMap;

  const auto& d = c.dataset;
  const auto& s = d.synthetic;
  e << YAML::Key << "dataset" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "kind" << YAML::Value
    << (d.kind == DatasetConfig::Kind::kCsv ? "csv" : "synthetic");
  e << YAML::Key << "synthetic" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "clients" << YAML::Value << s.clients;
  e << YAML::Key << "classes" << YAML::Value << s.classes;
  e << YAML::Key << "samples_per_client" << YAML::Value << s.samples_per_client;
  e << YAML::Key << "window_length" << YAML::Value << s.window_length;
  e << YAML::Key << "channels" << YAML::Value << s.channels;
  e << YAML::Key << "class_separation" << YAML::Value << num(s.class_separation);
  e << YAML::Key << "noise_std" << YAML::Value << num(s.noise_std);
  e << YAML::Key << "client_noise" << YAML::Value << YAML::Flow << nums(s.client_noise);
  e << YAML::Key << "mode" << YAML::Value << to_string(s.mode);
  e << YAML::Key << "dirichlet_alpha" << YAML::Value << num(s.dirichlet_alpha);
  e << YAML::Key << "outlier_client" << YAML::Value << s.outlier_client;
  e << YAML::Key << "outlier_offset" << YAML::Value << num(s.outlier_offset);
  e << YAML::Key << "test_fraction" << YAML::Value << num(s.test_fraction);
  e << YAML::Key << "seed" << YAML::Value << s.seed;
  e << YAML::EndMap;
  e << YAML::Key << "csv" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "window" << YAML::Value << d.window.length;
  e << YAML::Key << "overlap" << YAML::Value << d.window.overlap;
  e << YAML::Key << "split_ratio" << YAML::Value << num(d.split_ratio);
  e << YAML::Key << "min_windows" << YAML::Value << d.min_windows;
  e << YAML::Key << "sampling_rate_hz" << YAML::Value << num(d.sampling_rate_hz);
  e << YAML::Key << "normalize" << YAML::Value << d.normalize;
  e << YAML::Key << "classes" << YAML::Value << YAML::Flow << d.class_names;
  e << YAML::Key << "recordings" << YAML::Value << YAML::BeginSeq;
  for (const auto& rec : d.recordings) {
    e << YAML::BeginMap;
    e << YAML::Key << "participant" << YAML::Value << rec.participant;
    e << YAML::Key << "accelerometer" << YAML::Value << rec.accelerometer.string();
    e << YAML::Key << "gyroscope" << YAML::Value << rec.gyroscope.string();
    e << YAML::Key << "label" << YAML::Value << rec.label;
    e << YAML::EndMap;
  }
  e << YAML::EndSeq << YAML::EndMap << YAML::EndMap;

  e << YAML::Key << "engine" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "parallel_clients" << YAML::Value << c.parallel_clients;
  e << YAML::Key << "wire_float_bits" << YAML::Value
    << (c.wire_width == FloatWidth::k64 ? 64 : 32);
  e << YAML::EndMap;

  e << YAML::Key << "output" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "dir" << YAML::Value << c.output_dir.string();
  e << YAML::Key << "checkpoint_interval" << YAML::Value << c.checkpoint_interval;
  e << YAML::Key << "client_checkpoints" << YAML::Value << c.client_checkpoints;
  e << YAML::Key << "divergence_trace" << YAML::Value << c.divergence_trace;
  e << YAML::EndMap;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

fs::path resolve_output_dir(const ExperimentConfig& cfg, const std::optional<fs::path>& root) {
  if (cfg.output_dir.is_absolute() || !root || root->empty()) return cfg.output_dir;
  return *root / cfg.output_dir;
}

// ---------------------------------------------------------------------------
// Data

FederatedData build_data(const ExperimentConfig& cfg) {
  FederatedData out;
  const auto& d = cfg.dataset;
  if (d.kind == DatasetConfig::Kind::kSynthetic) {
    out.clients = synth_noniid(d.synthetic);
    out.class_count = d.synthetic.classes;
    out.input = {d.synthetic.window_length, d.synthetic.channels};
  } else {
    if (d.recordings.empty()) throw Error(ErrorKind::kConfig, "dataset.csv.recordings is empty");
    std::vector<SensorRecording> recs;
    std::int32_t max_label = 0;
    for (const auto& spec : d.recordings) {
      recs.push_back(join_sensors(spec.participant, read_sensor_csv(spec.accelerometer),
                                  read_sensor_csv(spec.gyroscope), spec.label,
                                  d.sampling_rate_hz));
      max_label = std::max(max_label, spec.label);
    }
    out.class_count = d.class_names.empty() ? static_cast<std::size_t>(max_label) + 1
                                            : d.class_names.size();
    if (static_cast<std::size_t>(max_label) >= out.class_count) {
      throw Error(ErrorKind::kConfig, "recording label " + std::to_string(max_label) +
                                          " exceeds the class list");
    }
    PartitionResult parts =
        partition_by_participant(recs, {d.window, d.split_ratio, d.min_windows});
    out.clients = std::move(parts.clients);
    out.warnings = std::move(parts.warnings);
    if (out.clients.empty()) throw Error(ErrorKind::kData, "no participant has enough windows");
    out.input = {d.window.length, out.clients.front().train.channels};
    if (d.normalize) {
      WindowedDataset pooled;
      for (const auto& c : out.clients) pooled.append(c.train);
      const NormStats stats = fit_znorm(pooled);
      for (std::size_t ch : stats.constant_channels) {
        out.warnings.push_back("channel " + std::to_string(ch) +
                               " is constant in the training data; left centered");
      }
      for (auto& c : out.clients) {
        apply_znorm(c.train, stats);
        apply_znorm(c.test, stats);
      }
    }
  }
  out.global_test = concat_tests(out.clients);
  return out;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : "NA"; }

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + std::to_string(v[i]);
  return s;
}

const char* const kMetricNames[] = {
    "global_f1",
    "global_accuracy",
    "personalization_f1_mean",
    "personalization_f1_std",
    "personalization_accuracy_mean",
    "personalization_accuracy_std",
    "generalization_f1_mean",
    "generalization_f1_std",
    "generalization_accuracy_mean",
    "generalization_accuracy_std",
};

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json mean_std_json(const MeanStd& m) { return {{"mean", m.mean}, {"std", m.std}}; }

json report_json(const RoundReport& r) {
  json j;
  j["round"] = r.round;
  j["global_f1"] = opt_json(r.eval.global_f1);
  j["global_accuracy"] = opt_json(r.eval.global_accuracy);
  j["personalization_f1"] = mean_std_json(r.eval.personalization_f1);
  j["personalization_accuracy"] = mean_std_json(r.eval.personalization_accuracy);
  j["generalization_f1"] = mean_std_json(r.eval.generalization_f1);
  j["generalization_accuracy"] = mean_std_json(r.eval.generalization_accuracy);
  j["client_personalization_f1"] = r.eval.client_personalization_f1;
  j["client_generalization_f1"] = r.eval.client_generalization_f1;
  j["units"] = r.units;
  j["units_added"] = r.units_added;
  j["substeps"] = r.substeps;
  j["uplink_bytes"] = r.uplink_bytes;
  j["downlink_bytes"] = r.downlink_bytes;
  j["cumulative_uplink_bytes"] = r.cumulative_uplink;
  j["cumulative_downlink_bytes"] = r.cumulative_downlink;
  return j;
}

using Series = std::vector<std::pair<std::size_t, std::optional<double>>>;

json best_json(const Series& s) {
  const auto b = best_round(s);
  if (!b) return nullptr;
  return {{"round", b->round}, {"value", b->value}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::kIo, "short write to " + path.string());
}

void save_models(const fs::path& dir, const std::string& tag, const ServerState& server,
                 const std::vector<ClientState>& clients, bool with_clients) {
  const auto r = static_cast<std::uint32_t>(server.round);
  save_checkpoint(dir / ("server_" + tag + ".fsck"),
                  {server.has_global_model ? "server" : "server (base layers only)", r,
                   server.arch, server.weights});
  if (!with_clients) return;
  for (const auto& c : clients) {
    save_checkpoint(dir / ("client_" + c.id + "_" + tag + ".fsck"),
                    {"client " + c.id, r, server.arch, c.weights});
  }
}

}  // namespace

std::string rounds_csv_header() {
  std::string h = "round";
  for (const char* m : kMetricNames) h += std::string(",") + m;
  h += ",units,units_added,substeps,uplink_bytes,downlink_bytes,cumulative_uplink_bytes,"
       "cumulative_downlink_bytes";
  return h;
}

std::string rounds_csv_row(const RoundReport& r) {
  const auto& e = r.eval;
  return fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}", r.round,
                     opt_num(e.global_f1), opt_num(e.global_accuracy),
                     num(e.personalization_f1.mean), num(e.personalization_f1.std),
                     num(e.personalization_accuracy.mean), num(e.personalization_accuracy.std),
                     num(e.generalization_f1.mean), num(e.generalization_f1.std),
                     num(e.generalization_accuracy.mean), num(e.generalization_accuracy.std),
                     join_sizes(r.units), join_sizes(r.units_added), r.substeps, r.uplink_bytes,
                     r.downlink_bytes, r.cumulative_uplink, r.cumulative_downlink);
}

std::optional<BestRound> best_round(const Series& series) {
  std::optional<BestRound> best;
  for (const auto& [round, value] : series) {
    if (!value) continue;
    if (!best || *value > best->value) best = BestRound{round, *value};
  }
  return best;
}

RunResult run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir,
                         const RoundCallback& on_round) {
  FederatedData data = build_data(cfg);
  const ModelArchitecture arch = parse_arch(cfg.arch, data.input, data.class_count);
  const auto strategy = make_aggregator(cfg.strategy, cfg.strategy_params);

  const fs::path ckpt_dir = out_dir / "checkpoints";
  std::error_code ec;
  fs::create_directories(ckpt_dir, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create " + ckpt_dir.string() + ": " + ec.message());
  write_text(out_dir / "config.yaml", config_to_yaml(cfg));

  ServerState server = make_server(arch, detail::derive_seed(cfg.seed, 1));
  std::vector<ClientState> clients;
  clients.reserve(data.clients.size());
  for (auto& p : data.clients) {
    clients.push_back({p.client_id, std::move(p.train), std::move(p.test), {}});
  }
  init_clients(server, clients);

  EngineConfig ec_cfg;
  ec_cfg.train = cfg.train;
  ec_cfg.seed = detail::derive_seed(cfg.seed, 2);
  ec_cfg.parallel_clients = cfg.parallel_clients;
  ec_cfg.wire_width = cfg.wire_width;
  ec_cfg.track_divergence = cfg.divergence_trace;

  std::ofstream csv(out_dir / "rounds.csv", std::ios::binary | std::ios::trunc);
  std::ofstream jsonl(out_dir / "rounds.jsonl", std::ios::binary | std::ios::trunc);
  std::ofstream div;
  if (!csv || !jsonl) throw Error(ErrorKind::kIo, "cannot write reports in " + out_dir.string());
  csv << rounds_csv_header() << '\n';
  if (cfg.divergence_trace) {
    div.open(out_dir / "divergence.csv", std::ios::binary | std::ios::trunc);
    if (!div) throw Error(ErrorKind::kIo, "cannot write divergence trace");
    div << "round,layer,client,mean,max\n";
  }

  RunResult result;
  result.output_dir = out_dir;
  result.initial_arch = arch;
  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    RoundReport r = run_round(server, clients, *strategy, ec_cfg, &data.global_test);
    csv << rounds_csv_row(r) << '\n' << std::flush;
    jsonl << report_json(r).dump() << '\n' << std::flush;
    if (cfg.divergence_trace) {
      for (const auto& ld : r.divergence.layers) {
        for (std::size_t k = 0; k < ld.mean.size(); ++k) {
          div << t << ',' << ld.layer << ',' << clients[k].id << ',' << num(ld.mean[k]) << ','
              << num(ld.max[k]) << '\n';
        }
      }
      div << std::flush;
    }
    if (cfg.checkpoint_interval > 0 && t % cfg.checkpoint_interval == 0 && t != cfg.rounds) {
      save_models(ckpt_dir, fmt::format("round{:04}", t), server, clients,
                  cfg.client_checkpoints);
    }
    r.divergence = {};
    if (on_round) on_round(r, cfg.rounds);
    result.reports.push_back(std::move(r));
  }
  if (!csv || !jsonl) throw Error(ErrorKind::kIo, "failed writing reports in " + out_dir.string());
  save_models(ckpt_dir, "final", server, clients, cfg.client_checkpoints);
  result.final_arch = server.arch;

  Series gf, ga, pf, pa, nf, na;
  for (const auto& r : result.reports) {
    gf.emplace_back(r.round, r.eval.global_f1);
    ga.emplace_back(r.round, r.eval.global_accuracy);
    pf.emplace_back(r.round, r.eval.personalization_f1.mean);
    pa.emplace_back(r.round, r.eval.personalization_accuracy.mean);
    nf.emplace_back(r.round, r.eval.generalization_f1.mean);
    na.emplace_back(r.round, r.eval.generalization_accuracy.mean);
  }
  std::vector<std::size_t> delta(server.arch.layer_count(), 0);
  for (const auto& r : result.reports)
    for (std::size_t i = 0; i < r.units_added.size() && i < delta.size(); ++i)
      delta[i] += r.units_added[i];

  const RoundReport& last = result.reports.back();
  json s;
  s["name"] = cfg.name;
  s["strategy"] = cfg.strategy;
  s["rounds"] = cfg.rounds;
  s["seed"] = cfg.seed;
  s["class_count"] = data.class_count;
  std::vector<std::string> ids;
  for (const auto& c : clients) ids.push_back(c.id);
  s["clients"] = ids;
  s["arch_initial"] = arch.notation();
  s["arch_final"] = server.arch.notation();
  s["units_initial"] = arch.unit_counts();
  s["units_final"] = server.arch.unit_counts();
  s["arch_delta"] = delta;
  s["has_global_model"] = server.has_global_model;
  s["best"] = {{"global_f1", best_json(gf)},
               {"global_accuracy", best_json(ga)},
               {"personalization_f1", best_json(pf)},
               {"personalization_accuracy", best_json(pa)},
               {"generalization_f1", best_json(nf)},
               {"generalization_accuracy", best_json(na)}};
  s["final"] = report_json(last);
  s["communication"] = {{"uplink_bytes", server.ledger.total_uplink},
                        {"downlink_bytes", server.ledger.total_downlink},
                        {"fedavg_round_bytes_per_client",
                         payload_size(arch, LayerMask::all(arch.layer_count()), cfg.wire_width)}};
  s["warnings"] = data.warnings;
  write_text(out_dir / "summary.json", s.dump(2) + "\n");
  return result;
}

// ---------------------------------------------------------------------------
// Comparison

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string f; std::getline(ss, f, ',');) out.push_back(f);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

struct RunTable {
  std::string label;
  std::map<std::size_t, std::vector<std::optional<double>>> rows;  // round -> metrics
};

RunTable read_rounds(const fs::path& dir) {
  const fs::path path = dir / "rounds.csv";
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != rounds_csv_header()) {
    throw Error(ErrorKind::kFormat, path.string() + ": unexpected rounds.csv schema");
  }
  RunTable t;
  const std::size_t n_metrics = std::size(kMetricNames);
  const std::size_t n_fields = split_csv(rounds_csv_header()).size();
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != n_fields) {
      throw Error(ErrorKind::kFormat, path.string() + ":" + std::to_string(lineno) +
                                          ": expected " + std::to_string(n_fields) + " fields");
    }
    std::vector<std::optional<double>> metrics(n_metrics);
    try {
      for (std::size_t m = 0; m < n_metrics; ++m) {
        if (f[m + 1] != "NA") metrics[m] = std::stod(f[m + 1]);
      }
      t.rows[static_cast<std::size_t>(std::stoull(f[0]))] = std::move(metrics);
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::kFormat, path.string() + ":" + std::to_string(lineno) +
                                          ": malformed number");
    }
  }
  return t;
}

// Columns carried into the comparison (indices into kMetricNames).
constexpr std::size_t kCompared[] = {0, 1, 2, 4, 6, 8};

}  // namespace

Comparison compare_runs(const std::vector<fs::path>& dirs) {
  if (dirs.size() < 2) throw Error(ErrorKind::kConfig, "compare needs at least two run directories");
  std::vector<RunTable> runs;
  std::map<std::string, std::size_t> seen;
  for (const auto& d : dirs) {
    RunTable t = read_rounds(d);
    std::string label = fs::path(d).lexically_normal().filename().string();
    if (label.empty()) label = fs::path(d).lexically_normal().parent_path().filename().string();
    if (label.empty()) label = "run";
    const std::size_t n = ++seen[label];
    t.label = n == 1 ? label : label + "#" + std::to_string(n);
    runs.push_back(std::move(t));
  }

  std::vector<std::size_t> rounds;
  for (const auto& r : runs)
    for (const auto& [round, _] : r.rows) rounds.push_back(round);
  std::sort(rounds.begin(), rounds.end());
  rounds.erase(std::unique(rounds.begin(), rounds.end()), rounds.end());

  auto value = [](const RunTable& r, std::size_t round, std::size_t m) -> std::optional<double> {
    const auto it = r.rows.find(round);
    return it == r.rows.end() ? std::nullopt : it->second[m];
  };

  Comparison c;
  std::string& out = c.per_round_csv;
  out = "round";
  for (const auto& r : runs)
    for (std::size_t m : kCompared) out += "," + r.label + ":" + kMetricNames[m];
  for (std::size_t i = 1; i < runs.size(); ++i)
    for (std::size_t m : kCompared)
      out += "," + runs[i].label + "-" + runs[0].label + ":" + kMetricNames[m];
  out += '\n';
  for (std::size_t round : rounds) {
    out += std::to_string(round);
    for (const auto& r : runs)
      for (std::size_t m : kCompared) out += "," + opt_num(value(r, round, m));
    for (std::size_t i = 1; i < runs.size(); ++i) {
      for (std::size_t m : kCompared) {
        const auto a = value(runs[i], round, m);
        const auto b = value(runs[0], round, m);
        out += "," + ((a && b) ? num(*a - *b) : std::string("NA"));
      }
    }
    out += '\n';
  }

  c.best_csv = "run,metric,best_round,best_value,final_round,final_value\n";
  for (const auto& r : runs) {
    for (std::size_t m : kCompared) {
      Series s;
      for (const auto& [round, metrics] : r.rows) s.emplace_back(round, metrics[m]);
      const auto b = best_round(s);
      const std::size_t final_round = r.rows.empty() ? 0 : r.rows.rbegin()->first;
      const auto fin = r.rows.empty() ? std::nullopt : r.rows.rbegin()->second[m];
      c.best_csv += r.label + "," + kMetricNames[m] + "," +
                    (b ? std::to_string(b->round) : "NA") + "," +
                    (b ? num(b->value) : "NA") + "," + std::to_string(final_round) + "," +
                    opt_num(fin) + "\n";
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Checkpoint inspection

std::string describe_checkpoint(const Checkpoint& ckpt, bool as_json) {
  const auto& a = ckpt.arch;
  json layers = json::array();
  std::string text = fmt::format("label:      {}\nround:      {}\narch:       {}\ninput:      {}x{}\n"
                                 "parameters: {}\nfinite:     {}\n\n",
                                 ckpt.label, ckpt.round, a.notation(), a.input_shape().length,
                                 a.input_shape().channels, a.parameter_count(),
                                 ckpt.weights.all_finite() ? "yes" : "no");
  text += fmt::format("{:>5}  {:<10}{:>8}{:>8}{:>12}{:>12}{:>14}\n", "layer", "kind", "units",
                      "kernel", "weights", "biases", "l2 norm");
  for (std::size_t i = 0; i < a.layer_count(); ++i) {
    const auto& spec = a.layer(i);
    const auto& lw = ckpt.weights.layers[i];
    double ss = 0.0;
    for (double v : lw.weights) ss += v * v;
    for (double v : lw.biases) ss += v * v;
    const double norm = std::sqrt(ss);
    text += fmt::format("{:>5}  {:<10}{:>8}{:>8}{:>12}{:>12}{:>14.6g}{}\n", i, to_string(spec.kind),
                        a.units(i), spec.kernel, lw.weights.size(), lw.biases.size(), norm,
                        spec.frozen ? "  frozen" : "");
    layers.push_back({{"index", i},
                      {"kind", to_string(spec.kind)},
                      {"units", a.units(i)},
                      {"kernel", spec.kernel},
                      {"frozen", spec.frozen},
                      {"weights", lw.weights.size()},
                      {"biases", lw.biases.size()},
                      {"l2_norm", norm}});
  }
  if (!as_json) return text;
  json j = {{"label", ckpt.label},
            {"round", ckpt.round},
            {"arch", a.notation()},
            {"input", {a.input_shape().length, a.input_shape().channels}},
            {"parameters", a.parameter_count()},
            {"finite", ckpt.weights.all_finite()},
            {"layers", layers}};
  return j.dump(2) + "\n";
}

}  // namespace fedsim
