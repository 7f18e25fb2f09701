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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedsim/dataset.hpp"
#include "fedsim/metrics.hpp"

namespace fedsim {

enum class LayerKind : std::uint8_t { kConv1D = 0, kMaxPool1D = 1, kDense = 2, kSoftmax = 3 };

const char* to_string(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::kDense;
  std::size_t units = 1;   // filters for Conv1D, neurons for Dense/Softmax
  std::size_t kernel = 1;  // window for Conv1D, pool length for MaxPool1D
  bool frozen = false;

  static LayerSpec conv1d(std::size_t filters, std::size_t kernel) {
    return {LayerKind::kConv1D, filters, kernel, false};
  }
  static LayerSpec max_pool(std::size_t pool) { return {LayerKind::kMaxPool1D, 0, pool, false}; }
  static LayerSpec dense(std::size_t units) { return {LayerKind::kDense, units, 1, false}; }
  static LayerSpec softmax(std::size_t classes) { return {LayerKind::kSoftmax, classes, 1, false}; }

  bool has_weights() const { return kind != LayerKind::kMaxPool1D; }
  bool operator==(const LayerSpec&) const = default;
};

/// Activation shape. Activations are stored channel-major: index = c * length + t.
struct Shape {
  std::size_t length = 0;
  std::size_t channels = 0;

  std::size_t size() const { return length * channels; }
  bool operator==(const Shape&) const = default;
};

/// Ordered layer stack ending in exactly one Softmax. Conv1D uses valid padding
/// and stride 1; MaxPool1D uses stride equal to its pool length; Dense layers
/// flatten their input channel-major. Conv1D and hidden Dense layers use ReLU.
class ModelArchitecture {
 public:
  ModelArchitecture() = default;
  /// Throws ShapeError when the layers do not chain.
  ModelArchitecture(Shape input, std::vector<LayerSpec> layers);

  const std::vector<LayerSpec>& layers() const { return layers_; }
  const LayerSpec& layer(std::size_t i) const { return layers_.at(i); }
  std::size_t layer_count() const { return layers_.size(); }
  Shape input_shape() const { return input_; }
  Shape input_shape_of(std::size_t i) const { return shapes_.at(i); }
  Shape output_shape_of(std::size_t i) const { return shapes_.at(i + 1); }
  std::size_t class_count() const { return layers_.back().units; }

  /// Incoming weights per unit of layer i (0 for MaxPool1D).
  std::size_t fan_in(std::size_t i) const;
  std::size_t weight_count(std::size_t i) const { return fan_in(i) * units(i); }
  std::size_t bias_count(std::size_t i) const { return units(i); }
  std::size_t parameter_count() const;
  /// Unit count of a weighted layer; 0 for MaxPool1D.
  std::size_t units(std::size_t i) const;
  std::vector<std::size_t> unit_counts() const;

  /// Next layer above i that owns weights.
  std::optional<std::size_t> next_weighted(std::size_t i) const;
  /// Weighted layers below the final Softmax (Conv1D and Dense).
  std::vector<std::size_t> growable_layers() const;

  void set_frozen(std::size_t i, bool frozen);
  /// Freezes exactly the layers with index <= last (and unfreezes the rest).
  void freeze_through(std::size_t last);
  void unfreeze_all();

  /// Compact notation, e.g. "196-16C_4M_1024D" (the Softmax is implied).
  std::string notation() const;

  bool operator==(const ModelArchitecture& other) const {
    return input_ == other.input_ && layers_ == other.layers_;
  }

 private:
  Shape input_;
  std::vector<LayerSpec> layers_;
  std::vector<Shape> shapes_;  // shapes_[i] is the input of layer i
};

struct LayerWeights {
  std::vector<double> weights;  // unit-major; Conv1D: [filter][channel][tap]
  std::vector<double> biases;

  bool operator==(const LayerWeights&) const = default;
};

/// One model snapshot. MaxPool1D layers own empty tensors.
struct WeightSet {
  std::vector<LayerWeights> layers;

  std::size_t layer_count() const { return layers.size(); }
  bool all_finite() const;
  bool operator==(const WeightSet&) const = default;
};

/// Throws ShapeError naming the first layer whose tensors disagree with `arch`.
void check_matches(const ModelArchitecture& arch, const WeightSet& w);

WeightSet zero_weights(const ModelArchitecture& arch);
/// Glorot-uniform weights, zero biases.
WeightSet init_weights(const ModelArchitecture& arch, std::uint64_t seed);

/// Incoming weights of one unit followed by its bias.
std::vector<double> unit_vector(const ModelArchitecture& arch, const WeightSet& w,
                                std::size_t layer, std::size_t unit);

/// Row-major dense matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

/// Class probabilities for `count` frames laid out row-major (time x channels).
Matrix forward(const ModelArchitecture& arch, const WeightSet& w, std::span<const float> frames,
               std::size_t count);
Matrix forward(const ModelArchitecture& arch, const WeightSet& w, const WindowedDataset& data);

struct TrainConfig {
  std::size_t local_epochs = 5;
  std::size_t batch_size = 32;
  double learning_rate = 0.01;
  double dropout_rate = 0.5;
  std::uint64_t rng_seed = 0;
};

void validate(const TrainConfig& cfg);

struct LossGradient {
  double loss = 0.0;  // mean cross-entropy
  WeightSet gradient;
};

/// Mean cross-entropy and its gradient over the whole dataset, without dropout.
LossGradient loss_and_gradient(const ModelArchitecture& arch, const WeightSet& w,
                               const WindowedDataset& data);
double mean_loss(const ModelArchitecture& arch, const WeightSet& w, const WindowedDataset& data);

/// Mini-batch SGD over cfg.local_epochs shuffled epochs. Layers flagged frozen in
/// `arch` are returned bit-identical.
WeightSet train_local(const ModelArchitecture& arch, WeightSet w, const WindowedDataset& data,
                      const TrainConfig& cfg);

/// Argmax predictions (ties resolve to the lowest class id).
std::vector<std::size_t> predict(const ModelArchitecture& arch, const WeightSet& w,
                                 const WindowedDataset& data);
ConfusionMatrix evaluate(const ModelArchitecture& arch, const WeightSet& w,
                         const WindowedDataset& data);

struct NewUnit {
  std::vector<double> incoming;
  double bias = 0.0;
};

struct GrownModel {
  ModelArchitecture arch;
  WeightSet weights;
};

/// Appends units to a Conv1D or Dense layer. The next weighted layer gains zero
/// incoming weights for each new unit, so the network's function is unchanged.
GrownModel grow_layer(const ModelArchitecture& arch, const WeightSet& w, std::size_t layer,
                      std::span<const NewUnit> new_units);

/// Number of inputs of the next weighted layer that each unit of `layer` feeds
/// (the pooled length for a Conv1D feeding a Dense, 1 between Dense layers, the
/// kernel for a Conv1D feeding a Conv1D).
std::size_t fan_out_block(const ModelArchitecture& arch, std::size_t layer);

}  // namespace fedsim
