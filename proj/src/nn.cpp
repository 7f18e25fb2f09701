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

#include "fedsim/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "fedsim/error.hpp"
#include "rng.hpp"

namespace fedsim {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv1D:
      return "Conv1D";
    case LayerKind::kMaxPool1D:
      return "MaxPool1D";
    case LayerKind::kDense:
      return "Dense";
    case LayerKind::kSoftmax:
      return "Softmax";
  }
  return "?";
}

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape:
      return "shape";
    case ErrorKind::kData:
      return "data";
    case ErrorKind::kConfig:
      return "config";
    case ErrorKind::kFormat:
      return "format";
    case ErrorKind::kIo:
      return "io";
    case ErrorKind::kNumeric:
      return "numeric";
    case ErrorKind::kAggregation:
      return "aggregation";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// ModelArchitecture

ModelArchitecture::ModelArchitecture(Shape input, std::vector<LayerSpec> layers)
    : input_(input), layers_(std::move(layers)) {
  if (input_.length == 0 || input_.channels == 0) {
    throw ShapeError("input shape must have non-zero length and channels");
  }
  if (layers_.size() < 2) {
    throw ShapeError("an architecture needs at least two layers");
  }
  shapes_.reserve(layers_.size() + 1);
  shapes_.push_back(input_);
  const std::size_t last = layers_.size() - 1;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    LayerSpec& spec = layers_[i];
    const Shape in = shapes_.back();
    if (spec.kind == LayerKind::kSoftmax && i != last) {
      throw ShapeError(i, "Softmax must be the final layer");
    }
    if (i == last && spec.kind != LayerKind::kSoftmax) {
      throw ShapeError(i, "the final layer must be Softmax");
    }
    switch (spec.kind) {
      case LayerKind::kConv1D:
        if (spec.units == 0 || spec.kernel == 0) {
          throw ShapeError(i, "Conv1D needs at least one filter and a non-zero kernel");
        }
        if (spec.kernel > in.length) {
          throw ShapeError(i, "Conv1D kernel " + std::to_string(spec.kernel) +
                                  " exceeds input length " + std::to_string(in.length));
        }
        shapes_.push_back({in.length - spec.kernel + 1, spec.units});
        break;
      case LayerKind::kMaxPool1D:
        if (spec.kernel == 0 || spec.kernel > in.length) {
          throw ShapeError(i, "MaxPool1D length " + std::to_string(spec.kernel) +
                                  " does not fit input length " + std::to_string(in.length));
        }
        spec.units = 0;
        spec.frozen = false;
        shapes_.push_back({in.length / spec.kernel, in.channels});
        break;
      case LayerKind::kDense:
      case LayerKind::kSoftmax:
        if (spec.units == 0) throw ShapeError(i, "layer needs at least one unit");
        spec.kernel = 1;
        shapes_.push_back({1, spec.units});
        break;
    }
  }
}

std::size_t ModelArchitecture::fan_in(std::size_t i) const {
  const LayerSpec& spec = layers_.at(i);
  switch (spec.kind) {
    case LayerKind::kConv1D:
      return spec.kernel * shapes_[i].channels;
    case LayerKind::kMaxPool1D:
      return 0;
    case LayerKind::kDense:
    case LayerKind::kSoftmax:
      return shapes_[i].size();
  }
  return 0;
}

std::size_t ModelArchitecture::units(std::size_t i) const {
  const LayerSpec& spec = layers_.at(i);
  return spec.has_weights() ? spec.units : 0;
}

std::size_t ModelArchitecture::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) n += weight_count(i) + bias_count(i);
  return n;
}

std::vector<std::size_t> ModelArchitecture::unit_counts() const {
  std::vector<std::size_t> out;
  out.reserve(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) out.push_back(units(i));
  return out;
}

std::optional<std::size_t> ModelArchitecture::next_weighted(std::size_t i) const {
  for (std::size_t j = i + 1; j < layers_.size(); ++j) {
    if (layers_[j].has_weights()) return j;
  }
  return std::nullopt;
}

std::vector<std::size_t> ModelArchitecture::growable_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
    if (layers_[i].kind == LayerKind::kConv1D || layers_[i].kind == LayerKind::kDense) {
      out.push_back(i);
    }
  }
  return out;
}

void ModelArchitecture::set_frozen(std::size_t i, bool frozen) {
  if (layers_.at(i).has_weights()) layers_[i].frozen = frozen;
}

void ModelArchitecture::freeze_through(std::size_t last) {
  for (std::size_t i = 0; i < layers_.size(); ++i) set_frozen(i, i <= last);
}

void ModelArchitecture::unfreeze_all() {
  for (auto& l : layers_) l.frozen = false;
}

std::string ModelArchitecture::notation() const {
  std::ostringstream os;
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
    if (i > 0) os << '_';
    const LayerSpec& l = layers_[i];
    switch (l.kind) {
      case LayerKind::kConv1D:
        os << l.units << '-' << l.kernel << 'C';
        break;
      case LayerKind::kMaxPool1D:
        os << l.kernel << 'M';
        break;
      default:
        os << l.units << 'D';
        break;
    }
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// WeightSet helpers

bool WeightSet::all_finite() const {
  for (const auto& l : layers) {
    for (double v : l.weights)
      if (!std::isfinite(v)) return false;
    for (double v : l.biases)
      if (!std::isfinite(v)) return false;
  }
  return true;
}

void check_matches(const ModelArchitecture& arch, const WeightSet& w) {
  if (w.layer_count() != arch.layer_count()) {
    throw ShapeError("weight set has " + std::to_string(w.layer_count()) +
                     " layers, architecture has " + std::to_string(arch.layer_count()));
  }
  for (std::size_t i = 0; i < arch.layer_count(); ++i) {
    if (w.layers[i].weights.size() != arch.weight_count(i) ||
        w.layers[i].biases.size() != arch.bias_count(i)) {
      throw ShapeError(i, std::string(to_string(arch.layer(i).kind)) + " expects " +
                              std::to_string(arch.weight_count(i)) + " weights and " +
                              std::to_string(arch.bias_count(i)) + " biases, got " +
                              std::to_string(w.layers[i].weights.size()) + " and " +
                              std::to_string(w.layers[i].biases.size()));
    }
  }
}

WeightSet zero_weights(const ModelArchitecture& arch) {
  WeightSet w;
  w.layers.resize(arch.layer_count());
  for (std::size_t i = 0; i < arch.layer_count(); ++i) {
    w.layers[i].weights.assign(arch.weight_count(i), 0.0);
    w.layers[i].biases.assign(arch.bias_count(i), 0.0);
  }
  return w;
}

WeightSet init_weights(const ModelArchitecture& arch, std::uint64_t seed) {
  WeightSet w = zero_weights(arch);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < arch.layer_count(); ++i) {
    const LayerSpec& spec = arch.layer(i);
    if (!spec.has_weights()) continue;
    double fan_in = static_cast<double>(arch.fan_in(i));
    double fan_out = static_cast<double>(spec.units);
    if (spec.kind == LayerKind::kConv1D) fan_out *= static_cast<double>(spec.kernel);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : w.layers[i].weights) v = (2.0 * detail::uniform01(rng) - 1.0) * limit;
  }
  return w;
}

std::vector<double> unit_vector(const ModelArchitecture& arch, const WeightSet& w,
                                std::size_t layer, std::size_t unit) {
  const std::size_t fi = arch.fan_in(layer);
  if (unit >= arch.units(layer)) throw ShapeError(layer, "unit index out of range");
  const auto& lw = w.layers.at(layer);
  std::vector<double> v(lw.weights.begin() + static_cast<std::ptrdiff_t>(unit * fi),
                        lw.weights.begin() + static_cast<std::ptrdiff_t>((unit + 1) * fi));
  v.push_back(lw.biases[unit]);
  return v;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

/// Per-sample forward and backward pass with reusable buffers.
class Pass {
 public:
  Pass(const ModelArchitecture& arch, const WeightSet& w) : arch_(arch), w_(w) {
    const std::size_t n = arch.layer_count();
    act_.resize(n + 1);
    pre_.resize(n);
    arg_.resize(n);
    mask_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      act_[i].resize(arch.input_shape_of(i).size());
      const std::size_t out = arch.output_shape_of(i).size();
      if (arch.layer(i).kind == LayerKind::kMaxPool1D) {
        arg_[i].resize(out);
      } else {
        pre_[i].resize(out);
      }
    }
    act_[n].resize(arch.class_count());
  }

  /// Runs one frame (row-major time x channels). Dropout is active iff rng is set.
  void forward(std::span<const float> frame, std::mt19937_64* rng, double dropout) {
    const Shape in = arch_.input_shape();
    auto& x = act_[0];
    for (std::size_t t = 0; t < in.length; ++t)
      for (std::size_t c = 0; c < in.channels; ++c)
        x[c * in.length + t] = static_cast<double>(frame[t * in.channels + c]);

    const std::size_t n = arch_.layer_count();
    for (std::size_t i = 0; i < n; ++i) {
      const LayerSpec& spec = arch_.layer(i);
      const auto& a = act_[i];
      auto& out = act_[i + 1];
      const Shape is = arch_.input_shape_of(i);
      const Shape os = arch_.output_shape_of(i);
      switch (spec.kind) {
        case LayerKind::kConv1D: {
          const auto& W = w_.layers[i].weights;
          const auto& b = w_.layers[i].biases;
          const std::size_t k = spec.kernel, C = is.channels, len = is.length, olen = os.length;
          auto& pre = pre_[i];
          for (std::size_t f = 0; f < spec.units; ++f) {
            double* p = pre.data() + f * olen;
            std::fill(p, p + olen, b[f]);
            for (std::size_t c = 0; c < C; ++c) {
              const double* wf = W.data() + (f * C + c) * k;
              const double* ac = a.data() + c * len;
              for (std::size_t j = 0; j < k; ++j) {
                const double wv = wf[j];
                const double* src = ac + j;
                for (std::size_t t = 0; t < olen; ++t) p[t] += wv * src[t];
              }
            }
            for (std::size_t t = 0; t < olen; ++t) out[f * olen + t] = std::max(0.0, p[t]);
          }
          break;
        }
        case LayerKind::kMaxPool1D: {
          const std::size_t p = spec.kernel, len = is.length, olen = os.length;
          for (std::size_t c = 0; c < is.channels; ++c) {
            for (std::size_t t = 0; t < olen; ++t) {
              std::size_t best = c * len + t * p;
              for (std::size_t j = 1; j < p; ++j) {
                const std::size_t idx = c * len + t * p + j;
                if (a[idx] > a[best]) best = idx;
              }
              arg_[i][c * olen + t] = static_cast<std::uint32_t>(best);
              out[c * olen + t] = a[best];
            }
          }
          break;
        }
        case LayerKind::kDense:
        case LayerKind::kSoftmax: {
          const auto& W = w_.layers[i].weights;
          const auto& b = w_.layers[i].biases;
          const std::size_t I = is.size();
          auto& pre = pre_[i];
          for (std::size_t u = 0; u < spec.units; ++u) {
            const double* row = W.data() + u * I;
            double s = b[u];
            for (std::size_t j = 0; j < I; ++j) s += row[j] * a[j];
            pre[u] = s;
          }
          if (spec.kind == LayerKind::kDense) {
            const bool drop = rng != nullptr && dropout > 0.0;
            auto& mask = mask_[i];
            if (drop) {
              mask.resize(spec.units);
              const double keep = 1.0 / (1.0 - dropout);
              for (std::size_t u = 0; u < spec.units; ++u)
                mask[u] = detail::uniform01(*rng) < dropout ? 0.0 : keep;
            } else {
              mask.clear();
            }
            for (std::size_t u = 0; u < spec.units; ++u) {
              double v = std::max(0.0, pre[u]);
              if (drop) v *= mask[u];
              out[u] = v;
            }
          } else {
            const double mx = *std::max_element(pre.begin(), pre.end());
            double sum = 0.0;
            for (std::size_t u = 0; u < spec.units; ++u) sum += std::exp(pre[u] - mx);
            log_norm_ = mx + std::log(sum);
            for (std::size_t u = 0; u < spec.units; ++u) out[u] = std::exp(pre[u] - log_norm_);
          }
          break;
        }
      }
    }
  }

  std::span<const double> probabilities() const { return act_.back(); }

  double loss(std::size_t label) const { return log_norm_ - pre_.back()[label]; }

  /// Accumulates d(loss)/d(params) into grad. With respect_frozen, frozen layers
  /// get no gradient and backpropagation stops below the lowest trainable layer.
  void backward(std::size_t label, WeightSet& grad, bool respect_frozen) {
    const std::size_t n = arch_.layer_count();
    std::size_t lowest = n;
    for (std::size_t i = 0; i < n; ++i) {
      const LayerSpec& s = arch_.layer(i);
      if (s.has_weights() && !(respect_frozen && s.frozen)) {
        lowest = i;
        break;
      }
    }
    if (lowest == n) return;

    delta_.assign(act_[n].begin(), act_[n].end());
    delta_[label] -= 1.0;

    for (std::size_t i = n; i-- > lowest;) {
      const LayerSpec& spec = arch_.layer(i);
      const Shape is = arch_.input_shape_of(i);
      const Shape os = arch_.output_shape_of(i);
      const auto& a = act_[i];
      const bool need_input = i > lowest;
      const bool learn = spec.has_weights() && !(respect_frozen && spec.frozen);
      if (need_input) next_delta_.assign(is.size(), 0.0);

      switch (spec.kind) {
        case LayerKind::kConv1D: {
          const auto& W = w_.layers[i].weights;
          const std::size_t k = spec.kernel, C = is.channels, len = is.length, olen = os.length;
          for (std::size_t f = 0; f < spec.units; ++f) {
            const double* d = delta_.data() + f * olen;
            if (learn) {
              double gb = 0.0;
              for (std::size_t t = 0; t < olen; ++t) gb += d[t];
              grad.layers[i].biases[f] += gb;
            }
            for (std::size_t c = 0; c < C; ++c) {
              const double* ac = a.data() + c * len;
              for (std::size_t j = 0; j < k; ++j) {
                const std::size_t wi = (f * C + c) * k + j;
                if (learn) {
                  double g = 0.0;
                  for (std::size_t t = 0; t < olen; ++t) g += d[t] * ac[t + j];
                  grad.layers[i].weights[wi] += g;
                }
                if (need_input) {
                  const double wv = W[wi];
                  double* dst = next_delta_.data() + c * len + j;
                  for (std::size_t t = 0; t < olen; ++t) dst[t] += wv * d[t];
                }
              }
            }
          }
          break;
        }
        case LayerKind::kMaxPool1D: {
          if (need_input) {
            for (std::size_t o = 0; o < os.size(); ++o) next_delta_[arg_[i][o]] += delta_[o];
          }
          break;
        }
        case LayerKind::kDense:
        case LayerKind::kSoftmax: {
          const auto& W = w_.layers[i].weights;
          const std::size_t I = is.size();
          for (std::size_t u = 0; u < spec.units; ++u) {
            const double d = delta_[u];
            if (d == 0.0) continue;
            const double* row = W.data() + u * I;
            if (learn) {
              double* g = grad.layers[i].weights.data() + u * I;
              for (std::size_t j = 0; j < I; ++j) g[j] += d * a[j];
              grad.layers[i].biases[u] += d;
            }
            if (need_input) {
              for (std::size_t j = 0; j < I; ++j) next_delta_[j] += row[j] * d;
            }
          }
          break;
        }
      }
      if (!need_input) break;

      // Convert d(output of layer i-1) into the delta layer i-1 expects.
      const std::size_t below = i - 1;
      const LayerSpec& bs = arch_.layer(below);
      if (bs.kind == LayerKind::kConv1D || bs.kind == LayerKind::kDense) {
        const auto& pre = pre_[below];
        const auto& mask = mask_[below];
        for (std::size_t j = 0; j < next_delta_.size(); ++j) {
          double v = pre[j] > 0.0 ? next_delta_[j] : 0.0;
          if (!mask.empty()) v *= mask[j];
          next_delta_[j] = v;
        }
      }
      std::swap(delta_, next_delta_);
    }
  }

 private:
  const ModelArchitecture& arch_;
  const WeightSet& w_;
  std::vector<std::vector<double>> act_;  // act_[i] is the input of layer i
  std::vector<std::vector<double>> pre_;
  std::vector<std::vector<std::uint32_t>> arg_;
  std::vector<std::vector<double>> mask_;
  std::vector<double> delta_, next_delta_;
  double log_norm_ = 0.0;
};

void check_input(const ModelArchitecture& arch, std::size_t window_length, std::size_t channels) {
  const Shape in = arch.input_shape();
  if (window_length != in.length || channels != in.channels) {
    throw ShapeError(0, "input frames are " + std::to_string(window_length) + "x" +
                            std::to_string(channels) + ", architecture expects " +
                            std::to_string(in.length) + "x" + std::to_string(in.channels));
  }
}

void check_labels(const ModelArchitecture& arch, const WindowedDataset& data) {
  for (std::int32_t y : data.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= arch.class_count()) {
      throw Error(ErrorKind::kData, "label " + std::to_string(y) + " outside [0, " +
                                        std::to_string(arch.class_count()) + ")");
    }
  }
}

}  // namespace

Matrix forward(const ModelArchitecture& arch, const WeightSet& w, std::span<const float> frames,
               std::size_t count) {
  check_matches(arch, w);
  const std::size_t fs = arch.input_shape().size();
  if (frames.size() != count * fs) {
    throw ShapeError(0, "batch holds " + std::to_string(frames.size()) + " values, expected " +
                            std::to_string(count) + " frames of " + std::to_string(fs));
  }
  Matrix out{count, arch.class_count(), std::vector<double>(count * arch.class_count())};
  Pass pass(arch, w);
  for (std::size_t s = 0; s < count; ++s) {
    pass.forward(frames.subspan(s * fs, fs), nullptr, 0.0);
    auto p = pass.probabilities();
    std::copy(p.begin(), p.end(), out.values.begin() + static_cast<std::ptrdiff_t>(s * out.cols));
  }
  return out;
}

Matrix forward(const ModelArchitecture& arch, const WeightSet& w, const WindowedDataset& data) {
  check_input(arch, data.window_length, data.channels);
  return forward(arch, w, data.frames, data.size());
}

void validate(const TrainConfig& cfg) {
  if (cfg.batch_size < 1) throw Error(ErrorKind::kConfig, "batch_size must be >= 1");
  if (cfg.local_epochs < 1) throw Error(ErrorKind::kConfig, "local_epochs must be >= 1");
  if (!(cfg.dropout_rate >= 0.0 && cfg.dropout_rate < 1.0)) {
    throw Error(ErrorKind::kConfig, "dropout_rate must lie in [0, 1)");
  }
  if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate)) {
    throw Error(ErrorKind::kConfig, "learning_rate must be positive");
  }
}

LossGradient loss_and_gradient(const ModelArchitecture& arch, const WeightSet& w,
                               const WindowedDataset& data) {
  check_matches(arch, w);
  check_input(arch, data.window_length, data.channels);
  check_labels(arch, data);
  if (data.empty()) throw Error(ErrorKind::kData, "empty dataset");
  LossGradient out{0.0, zero_weights(arch)};
  Pass pass(arch, w);
  for (std::size_t s = 0; s < data.size(); ++s) {
    const auto y = static_cast<std::size_t>(data.labels[s]);
    pass.forward(data.frame(s), nullptr, 0.0);
    out.loss += pass.loss(y);
    pass.backward(y, out.gradient, false);
  }
  const double inv = 1.0 / static_cast<double>(data.size());
  out.loss *= inv;
  for (auto& l : out.gradient.layers) {
    for (double& v : l.weights) v *= inv;
    for (double& v : l.biases) v *= inv;
  }
  return out;
}

double mean_loss(const ModelArchitecture& arch, const WeightSet& w, const WindowedDataset& data) {
  check_matches(arch, w);
  check_input(arch, data.window_length, data.channels);
  check_labels(arch, data);
  if (data.empty()) throw Error(ErrorKind::kData, "empty dataset");
  Pass pass(arch, w);
  double total = 0.0;
  for (std::size_t s = 0; s < data.size(); ++s) {
    pass.forward(data.frame(s), nullptr, 0.0);
    total += pass.loss(static_cast<std::size_t>(data.labels[s]));
  }
  return total / static_cast<double>(data.size());
}

WeightSet train_local(const ModelArchitecture& arch, WeightSet w, const WindowedDataset& data,
                      const TrainConfig& cfg) {
  validate(cfg);
  check_matches(arch, w);
  check_input(arch, data.window_length, data.channels);
  check_labels(arch, data);
  if (data.empty()) throw Error(ErrorKind::kData, "cannot train on an empty dataset");

  std::vector<std::size_t> trainable;
  for (std::size_t i = 0; i < arch.layer_count(); ++i) {
    if (arch.layer(i).has_weights() && !arch.layer(i).frozen) trainable.push_back(i);
  }
  if (trainable.empty()) return w;

  std::mt19937_64 rng(cfg.rng_seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  WeightSet grad = zero_weights(arch);
  Pass pass(arch, w);

  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    detail::shuffle(order, rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      for (std::size_t i : trainable) {
        std::fill(grad.layers[i].weights.begin(), grad.layers[i].weights.end(), 0.0);
        std::fill(grad.layers[i].biases.begin(), grad.layers[i].biases.end(), 0.0);
      }
      double batch_loss = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t s = order[b];
        const auto y = static_cast<std::size_t>(data.labels[s]);
        pass.forward(data.frame(s), &rng, cfg.dropout_rate);
        batch_loss += pass.loss(y);
        pass.backward(y, grad, true);
      }
      if (!std::isfinite(batch_loss)) {
        std::ostringstream os;
        os << "non-finite loss at epoch " << epoch << ", batch starting at " << start
           << " (loss=" << batch_loss << ", lr=" << cfg.learning_rate << ")";
        throw Error(ErrorKind::kNumeric, os.str());
      }
      const double step = cfg.learning_rate / static_cast<double>(end - start);
      for (std::size_t i : trainable) {
        auto& lw = w.layers[i];
        const auto& lg = grad.layers[i];
        for (std::size_t j = 0; j < lw.weights.size(); ++j) lw.weights[j] -= step * lg.weights[j];
        for (std::size_t j = 0; j < lw.biases.size(); ++j) lw.biases[j] -= step * lg.biases[j];
      }
    }
    if (!w.all_finite()) {
      throw Error(ErrorKind::kNumeric,
                  "weights became non-finite during epoch " + std::to_string(epoch));
    }
  }
  return w;
}

std::vector<std::size_t> predict(const ModelArchitecture& arch, const WeightSet& w,
                                 const WindowedDataset& data) {
  check_matches(arch, w);
  check_input(arch, data.window_length, data.channels);
  std::vector<std::size_t> out(data.size());
  Pass pass(arch, w);
  for (std::size_t s = 0; s < data.size(); ++s) {
    pass.forward(data.frame(s), nullptr, 0.0);
    auto p = pass.probabilities();
    out[s] = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
  }
  return out;
}

ConfusionMatrix evaluate(const ModelArchitecture& arch, const WeightSet& w,
                         const WindowedDataset& data) {
  check_labels(arch, data);
  const auto pred = predict(arch, w, data);
  ConfusionMatrix cm(arch.class_count());
  for (std::size_t s = 0; s < pred.size(); ++s) {
    cm.add(static_cast<std::size_t>(data.labels[s]), pred[s]);
  }
  return cm;
}

// ---------------------------------------------------------------------------
// Growth

std::size_t fan_out_block(const ModelArchitecture& arch, std::size_t layer) {
  const auto next = arch.next_weighted(layer);
  if (!next) throw ShapeError(layer, "layer has no weighted successor");
  const LayerSpec& ns = arch.layer(*next);
  if (ns.kind == LayerKind::kConv1D) return ns.kernel;
  return arch.input_shape_of(*next).length;
}

GrownModel grow_layer(const ModelArchitecture& arch, const WeightSet& w, std::size_t layer,
                      std::span<const NewUnit> new_units) {
  if (layer >= arch.layer_count()) throw ShapeError(layer, "layer index out of range");
  const LayerSpec& spec = arch.layer(layer);
  if (spec.kind == LayerKind::kSoftmax) {
    throw ShapeError(layer, "the Softmax output layer cannot grow");
  }
  if (spec.kind == LayerKind::kMaxPool1D) {
    throw ShapeError(layer, "MaxPool1D has no units to grow");
  }
  check_matches(arch, w);
  if (new_units.empty()) return {arch, w};

  const std::size_t fi = arch.fan_in(layer);
  for (const auto& u : new_units) {
    if (u.incoming.size() != fi) {
      throw ShapeError(layer, "new unit has " + std::to_string(u.incoming.size()) +
                                  " incoming weights, layer fan-in is " + std::to_string(fi));
    }
  }

  const std::size_t next = *arch.next_weighted(layer);
  const std::size_t block = fan_out_block(arch, layer);
  const std::size_t old_units = spec.units;
  const std::size_t added = new_units.size();

  auto layers = arch.layers();
  layers[layer].units += added;
  GrownModel out{ModelArchitecture(arch.input_shape(), std::move(layers)), w};

  auto& lw = out.weights.layers[layer];
  for (const auto& u : new_units) {
    lw.weights.insert(lw.weights.end(), u.incoming.begin(), u.incoming.end());
    lw.biases.push_back(u.bias);
  }

  // Channel-major inputs: the new units' blocks sit at the end of every row.
  const std::size_t old_row = old_units * block;
  const std::size_t new_row = (old_units + added) * block;
  const auto& src = w.layers[next].weights;
  const std::size_t rows = arch.units(next);
  std::vector<double> grown(rows * new_row, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(r * old_row), old_row,
                grown.begin() + static_cast<std::ptrdiff_t>(r * new_row));
  }
  out.weights.layers[next].weights = std::move(grown);
  check_matches(out.arch, out.weights);
  return out;
}

}  // namespace fedsim
