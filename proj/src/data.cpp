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

#include "fedsim/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "bytes.hpp"
#include "fedsim/error.hpp"
#include "rng.hpp"

namespace fedsim {

std::int32_t majority_label(const std::int32_t* labels, std::size_t count) {
  std::map<std::int32_t, std::size_t> votes;
  for (std::size_t i = 0; i < count; ++i) ++votes[labels[i]];
  for (const auto& [label, n] : votes) {
    if (2 * n > count) return label;
  }
  return -1;
}

WindowResult window(const SensorRecording& rec, const WindowParams& params) {
  if (params.length == 0 || params.overlap >= params.length) {
    throw Error(ErrorKind::kConfig, "window length must exceed overlap");
  }
  if (rec.channels == 0 || rec.samples.size() != rec.length() * rec.channels) {
    throw Error(ErrorKind::kData, "recording '" + rec.participant_id +
                                      "': sample matrix does not match label count");
  }
  WindowResult out;
  out.data.window_length = params.length;
  out.data.channels = rec.channels;
  const std::size_t T = rec.length();
  if (T < params.length) {
    out.too_short = true;
    return out;
  }
  const std::size_t step = params.length - params.overlap;
  out.candidate_frames = (T - params.length) / step + 1;
  for (std::size_t f = 0; f < out.candidate_frames; ++f) {
    const std::size_t start = f * step;
    const std::int32_t y = majority_label(rec.labels.data() + start, params.length);
    if (y < 0) continue;
    const auto first = rec.samples.begin() + static_cast<std::ptrdiff_t>(start * rec.channels);
    out.data.frames.insert(out.data.frames.end(), first,
                           first + static_cast<std::ptrdiff_t>(params.length * rec.channels));
    out.data.labels.push_back(y);
    out.data.starts.push_back(start);
  }
  return out;
}

NormStats fit_znorm(const WindowedDataset& train) {
  if (train.empty()) throw Error(ErrorKind::kData, "cannot fit normalization on empty data");
  const std::size_t C = train.channels;
  NormStats s;
  s.mean.assign(C, 0.0);
  s.scale.assign(C, 1.0);
  std::vector<double> sq(C, 0.0);
  const double n = static_cast<double>(train.size() * train.window_length);
  for (std::size_t i = 0; i < train.frames.size(); ++i) s.mean[i % C] += train.frames[i];
  for (double& m : s.mean) m /= n;
  for (std::size_t i = 0; i < train.frames.size(); ++i) {
    const double d = train.frames[i] - s.mean[i % C];
    sq[i % C] += d * d;
  }
  for (std::size_t c = 0; c < C; ++c) {
    const double sd = std::sqrt(sq[c] / n);
    if (sd > 0.0 && std::isfinite(sd)) {
      s.scale[c] = sd;
    } else {
      s.constant_channels.push_back(c);
    }
  }
  return s;
}

void apply_znorm(WindowedDataset& ds, const NormStats& stats) {
  const std::size_t C = ds.channels;
  if (stats.mean.size() != C) throw ShapeError("normalization stats do not match channel count");
  for (std::size_t i = 0; i < ds.frames.size(); ++i) {
    const std::size_t c = i % C;
    ds.frames[i] = static_cast<float>((ds.frames[i] - stats.mean[c]) / stats.scale[c]);
  }
}

NormStats znormalize(WindowedDataset& ds) {
  NormStats s = fit_znorm(ds);
  apply_znorm(ds, s);
  return s;
}

WindowedDataset concat_tests(const std::vector<ClientPartition>& clients) {
  WindowedDataset out;
  for (const auto& c : clients) {
    if (out.frames.empty()) {
      out.window_length = c.test.window_length;
      out.channels = c.test.channels;
    }
    out.append(c.test);
  }
  out.starts.clear();
  return out;
}

PartitionResult partition_by_participant(const std::vector<SensorRecording>& recordings,
                                         const PartitionOptions& options) {
  if (!(options.split_ratio > 0.0 && options.split_ratio < 1.0)) {
    throw Error(ErrorKind::kConfig, "split ratio must lie in (0, 1)");
  }
  PartitionResult result;
  std::vector<std::string> order;
  std::map<std::string, ClientPartition> by_id;
  for (const auto& rec : recordings) {
    auto [it, inserted] = by_id.try_emplace(rec.participant_id);
    ClientPartition& client = it->second;
    if (inserted) {
      order.push_back(rec.participant_id);
      client.client_id = rec.participant_id;
      client.train.window_length = client.test.window_length = options.window.length;
      client.train.channels = client.test.channels = rec.channels;
    }
    WindowResult w = window(rec, options.window);
    if (w.too_short) {
      result.warnings.push_back("recording of '" + rec.participant_id + "' has " +
                                std::to_string(rec.length()) + " timesteps, shorter than one window");
      continue;
    }
    const WindowedDataset& frames = w.data;
    const std::size_t n = frames.size();
    if (n == 0) continue;
    const auto n_train = static_cast<std::size_t>(
        std::llround(options.split_ratio * static_cast<double>(n)));
    std::vector<std::size_t> train_idx, test_idx;
    std::size_t train_end = 0;  // first timestep not covered by a training frame
    for (std::size_t i = 0; i < n; ++i) {
      if (i < n_train) {
        train_idx.push_back(i);
        train_end = frames.starts[i] + frames.window_length;
      } else if (frames.starts[i] >= train_end) {
        test_idx.push_back(i);
      }
    }
    client.train.append(frames.subset(train_idx));
    client.test.append(frames.subset(test_idx));
  }
  for (const auto& id : order) {
    ClientPartition& c = by_id[id];
    const std::size_t total = c.train.size() + c.test.size();
    if (total < options.min_windows) {
      result.warnings.push_back("participant '" + id + "' excluded: " + std::to_string(total) +
                                " windows (< " + std::to_string(options.min_windows) + ")");
      continue;
    }
    result.clients.push_back(std::move(c));
  }
  result.global_test = concat_tests(result.clients);
  return result;
}

// ---------------------------------------------------------------------------
// Synthetic generator

const char* to_string(SynthMode mode) {
  switch (mode) {
    case SynthMode::kIid:
      return "iid";
    case SynthMode::kLabelSkew:
      return "label_skew";
    case SynthMode::kPlantedOutlier:
      return "planted_outlier";
  }
  return "?";
}

SynthMode synth_mode_from_string(const std::string& s) {
  if (s == "iid") return SynthMode::kIid;
  if (s == "label_skew" || s == "dirichlet") return SynthMode::kLabelSkew;
  if (s == "planted_outlier" || s == "outlier") return SynthMode::kPlantedOutlier;
  throw Error(ErrorKind::kConfig, "unknown synthetic mode '" + s + "'");
}

namespace {

std::size_t draw_category(const std::vector<double>& cumulative, std::mt19937_64& rng) {
  const double u = detail::uniform01(rng) * cumulative.back();
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()),
                               cumulative.size() - 1);
}

}  // namespace

std::vector<ClientPartition> synth_noniid(const SynthSpec& spec) {
  if (spec.clients < 1) throw Error(ErrorKind::kConfig, "synthetic data needs at least one client");
  if (spec.classes < 2) throw Error(ErrorKind::kConfig, "synthetic data needs >= 2 classes");
  if (spec.samples_per_client < 2 || spec.window_length == 0 || spec.channels == 0) {
    throw Error(ErrorKind::kConfig, "synthetic sample counts and frame shape must be positive");
  }
  if (!(spec.test_fraction > 0.0 && spec.test_fraction < 1.0)) {
    throw Error(ErrorKind::kConfig, "test_fraction must lie in (0, 1)");
  }
  if (spec.mode == SynthMode::kLabelSkew && !(spec.dirichlet_alpha > 0.0)) {
    throw Error(ErrorKind::kConfig, "dirichlet_alpha must be positive");
  }
  if (spec.mode == SynthMode::kPlantedOutlier && spec.outlier_client >= spec.clients) {
    throw Error(ErrorKind::kConfig, "outlier_client out of range");
  }
  if (!spec.client_noise.empty() && spec.client_noise.size() != spec.clients) {
    throw Error(ErrorKind::kConfig, "client_noise needs one entry per client");
  }

  const std::size_t D = spec.window_length * spec.channels;
  std::vector<std::vector<double>> noise(spec.clients);
  for (std::size_t k = 0; k < spec.clients; ++k) {
    std::vector<double> s =
        spec.client_noise.empty() ? std::vector<double>{spec.noise_std} : spec.client_noise[k];
    if (s.size() == 1) s.assign(D, s[0]);
    if (s.size() != D) {
      throw Error(ErrorKind::kConfig, "client " + std::to_string(k) + " noise has " +
                                          std::to_string(s.size()) + " entries, expected " +
                                          std::to_string(D));
    }
    for (double v : s) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw Error(ErrorKind::kData, "degenerate covariance for client " + std::to_string(k) +
                                          ": standard deviations must be positive and finite");
      }
    }
    noise[k] = std::move(s);
  }

  std::mt19937_64 centroid_rng(detail::derive_seed(spec.seed, 0));
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<std::vector<double>> centroid(spec.classes, std::vector<double>(D));
  for (auto& c : centroid)
    for (double& v : c) v = spec.class_separation * unit(centroid_rng);

  const auto n_test = static_cast<std::size_t>(
      std::llround(spec.test_fraction * static_cast<double>(spec.samples_per_client)));
  const std::size_t n_train = spec.samples_per_client - n_test;

  std::vector<ClientPartition> out;
  out.reserve(spec.clients);
  for (std::size_t k = 0; k < spec.clients; ++k) {
    std::vector<double> cumulative(spec.classes);
    if (spec.mode == SynthMode::kLabelSkew) {
      std::mt19937_64 prop_rng(detail::derive_seed(spec.seed, 3, k));
      std::gamma_distribution<double> gamma(spec.dirichlet_alpha, 1.0);
      double acc = 0.0;
      for (std::size_t c = 0; c < spec.classes; ++c) cumulative[c] = (acc += gamma(prop_rng));
      if (!(acc > 0.0)) cumulative.back() = 1.0;  // underflow at tiny alpha
    } else {
      for (std::size_t c = 0; c < spec.classes; ++c) cumulative[c] = static_cast<double>(c + 1);
    }

    std::mt19937_64 label_rng(detail::derive_seed(spec.seed, 1, k));
    std::mt19937_64 noise_rng(detail::derive_seed(spec.seed, 2, k));
    const double shift = (spec.mode == SynthMode::kPlantedOutlier && k == spec.outlier_client)
                             ? spec.outlier_offset
                             : 0.0;
    ClientPartition part;
    part.client_id = "client" + std::to_string(k);
    for (auto* ds : {&part.train, &part.test}) {
      ds->window_length = spec.window_length;
      ds->channels = spec.channels;
    }
    for (std::size_t s = 0; s < spec.samples_per_client; ++s) {
      const std::size_t y = draw_category(cumulative, label_rng);
      WindowedDataset& ds = s < n_train ? part.train : part.test;
      for (std::size_t d = 0; d < D; ++d) {
        const double v = centroid[y][d] + noise[k][d] * unit(noise_rng) + shift;
        ds.frames.push_back(static_cast<float>(v));
      }
      ds.labels.push_back(static_cast<std::int32_t>(y));
    }
    out.push_back(std::move(part));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV ingestion

SensorTrace read_sensor_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::kData, path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "timestamp,x,y,z") {
    throw Error(ErrorKind::kData, path.string() + ": expected header 'timestamp,x,y,z'");
  }
  SensorTrace trace;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    double v[4];
    for (int i = 0; i < 4; ++i) {
      if (!std::getline(ls, cell, ',')) {
        throw Error(ErrorKind::kData,
                    path.string() + ":" + std::to_string(lineno) + ": expected 4 columns");
      }
      char* end = nullptr;
      v[i] = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || !std::isfinite(v[i])) {
        throw Error(ErrorKind::kData, path.string() + ":" + std::to_string(lineno) +
                                          ": bad number '" + cell + "'");
      }
    }
    if (!trace.timestamps.empty() && v[0] < trace.timestamps.back()) {
      throw Error(ErrorKind::kData,
                  path.string() + ":" + std::to_string(lineno) + ": timestamps must not decrease");
    }
    trace.timestamps.push_back(v[0]);
    for (int i = 1; i < 4; ++i) trace.xyz.push_back(static_cast<float>(v[i]));
  }
  return trace;
}

SensorRecording join_sensors(const std::string& participant, const SensorTrace& accelerometer,
                             const SensorTrace& gyroscope, std::int32_t label,
                             double sampling_rate_hz) {
  if (accelerometer.timestamps.empty() || gyroscope.timestamps.empty()) {
    throw Error(ErrorKind::kData, "participant '" + participant + "': empty sensor trace");
  }
  SensorRecording rec;
  rec.participant_id = participant;
  rec.channels = 6;
  rec.sampling_rate_hz = sampling_rate_hz;
  const auto& gt = gyroscope.timestamps;
  std::size_t g = 0;
  for (std::size_t a = 0; a < accelerometer.timestamps.size(); ++a) {
    const double t = accelerometer.timestamps[a];
    while (g + 1 < gt.size() && std::abs(gt[g + 1] - t) <= std::abs(gt[g] - t)) ++g;
    for (int i = 0; i < 3; ++i) rec.samples.push_back(accelerometer.xyz[a * 3 + i]);
    for (int i = 0; i < 3; ++i) rec.samples.push_back(gyroscope.xyz[g * 3 + i]);
    rec.labels.push_back(label);
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Binary container

void save_dataset(const std::filesystem::path& path, const WindowedDataset& ds) {
  detail::ByteWriter w;
  w.put_tag("FSWD");
  w.put<std::uint32_t>(1);
  w.put<std::uint64_t>(ds.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.window_length));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.channels));
  for (float v : ds.frames) w.put(v);
  for (std::int32_t y : ds.labels) w.put(y);
  detail::write_file(path.string(), w.bytes());
}

WindowedDataset load_dataset(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path.string());
  detail::ByteReader r(bytes, "dataset container");
  r.expect_tag("FSWD");
  const auto version = r.get<std::uint32_t>();
  if (version != 1) throw Error(ErrorKind::kFormat, "unsupported dataset version " + std::to_string(version));
  WindowedDataset ds;
  const auto n = r.get<std::uint64_t>();
  ds.window_length = r.get<std::uint32_t>();
  ds.channels = r.get<std::uint32_t>();
  const std::uint64_t values = n * ds.window_length * ds.channels;
  r.need(values * 4 + n * 4);
  ds.frames.resize(values);
  for (auto& v : ds.frames) v = r.get<float>();
  ds.labels.resize(n);
  for (auto& y : ds.labels) y = r.get<std::int32_t>();
  if (r.remaining() != 0) throw Error(ErrorKind::kFormat, "dataset container has trailing bytes");
  return ds;
}

}  // namespace fedsim
