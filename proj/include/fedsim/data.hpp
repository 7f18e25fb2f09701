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

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedsim/dataset.hpp"

namespace fedsim {

/// One continuous multichannel capture of a single participant.
struct SensorRecording {
  std::string participant_id;
  std::size_t channels = 6;
  std::vector<float> samples;         // time x channels, row-major
  std::vector<std::int32_t> labels;   // one activity id per timestep
  double sampling_rate_hz = 50.0;

  std::size_t length() const { return labels.size(); }
};

struct WindowParams {
  std::size_t length = 128;
  std::size_t overlap = 64;  // shared timesteps between consecutive frames
};

struct WindowResult {
  WindowedDataset data;
  std::size_t candidate_frames = 0;  // before dropping frames without a majority label
  bool too_short = false;            // recording shorter than one window
};

/// Slides a window of `length` with step `length - overlap`. Each frame takes
/// the label held by more than half of its timesteps; frames without such a
/// majority are dropped.
WindowResult window(const SensorRecording& rec, const WindowParams& params);

/// Returns the strict-majority label of `labels`, or -1 if there is none.
std::int32_t majority_label(const std::int32_t* labels, std::size_t count);

struct NormStats {
  std::vector<double> mean;
  std::vector<double> scale;  // 1 for zero-variance channels
  std::vector<std::size_t> constant_channels;
};

/// Channel-wise mean and population std over every timestep of every frame.
NormStats fit_znorm(const WindowedDataset& train);
void apply_znorm(WindowedDataset& ds, const NormStats& stats);
/// Fits on `ds` and applies in place; returns the fitted statistics.
NormStats znormalize(WindowedDataset& ds);

struct ClientPartition {
  std::string client_id;
  WindowedDataset train;
  WindowedDataset test;

  std::size_t sample_count() const { return train.size(); }
};

struct PartitionOptions {
  WindowParams window;
  double split_ratio = 0.8;
  std::size_t min_windows = 5;
};

struct PartitionResult {
  std::vector<ClientPartition> clients;
  WindowedDataset global_test;
  std::vector<std::string> warnings;
};

/// One client per participant, recordings grouped in order of first appearance.
/// Each recording is split chronologically: the first split_ratio of its frames
/// train, and test frames start after the last training timestep.
PartitionResult partition_by_participant(const std::vector<SensorRecording>& recordings,
                                         const PartitionOptions& options);

WindowedDataset concat_tests(const std::vector<ClientPartition>& clients);

enum class SynthMode { kIid, kLabelSkew, kPlantedOutlier };

const char* to_string(SynthMode mode);
SynthMode synth_mode_from_string(const std::string& s);

/// Gaussian class clusters in a window_length x channels feature space.
struct SynthSpec {
  std::size_t clients = 5;
  std::size_t classes = 3;
  std::size_t samples_per_client = 200;
  std::size_t window_length = 8;
  std::size_t channels = 2;
  double class_separation = 2.0;  // std of the random class centroids
  /// Per-client diagonal noise std, one value per feature, or a single value
  /// broadcast to every feature. Empty means noise_std for every client.
  std::vector<std::vector<double>> client_noise;
  double noise_std = 1.0;
  SynthMode mode = SynthMode::kIid;
  double dirichlet_alpha = 0.5;
  std::size_t outlier_client = 0;
  double outlier_offset = 0.0;
  double test_fraction = 0.2;
  std::uint64_t seed = 1;
};

std::vector<ClientPartition> synth_noniid(const SynthSpec& spec);

/// Reads one sensor CSV with header `timestamp,x,y,z`.
struct SensorTrace {
  std::vector<double> timestamps;
  std::vector<float> xyz;  // time x 3
};
SensorTrace read_sensor_csv(const std::filesystem::path& path);

/// Joins accelerometer and gyroscope traces on the nearest gyroscope timestamp
/// for each accelerometer sample. All timesteps get `label`.
SensorRecording join_sensors(const std::string& participant, const SensorTrace& accelerometer,
                             const SensorTrace& gyroscope, std::int32_t label,
                             double sampling_rate_hz = 50.0);

/// Binary container: "FSWD", u32 version, u64 N, u32 window_length,
/// u32 channels, N*W*C float32 frames, N int32 labels. Little-endian.
void save_dataset(const std::filesystem::path& path, const WindowedDataset& ds);
WindowedDataset load_dataset(const std::filesystem::path& path);

}  // namespace fedsim
