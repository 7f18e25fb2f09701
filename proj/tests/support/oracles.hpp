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

// Independent reference implementations used by the unit and acceptance
// tests. Written for clarity, not speed, and sharing no code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "fedsim/dataset.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/nn.hpp"

namespace oracle {

using fedsim::LayerKind;
using fedsim::ModelArchitecture;
using fedsim::WeightSet;

/// Class probabilities for one frame given row-major (time x channels) input.
/// Activations are kept as x[t][c].
inline std::vector<double> forward_frame(const ModelArchitecture& arch, const WeightSet& w,
                                         const float* frame) {
  const auto in = arch.input_shape();
  std::vector<std::vector<double>> x(in.length, std::vector<double>(in.channels));
  for (std::size_t t = 0; t < in.length; ++t)
    for (std::size_t c = 0; c < in.channels; ++c) x[t][c] = frame[t * in.channels + c];
  std::vector<double> flat;
  bool flattened = false;

  for (std::size_t i = 0; i < arch.layer_count(); ++i) {
    const auto& spec = arch.layer(i);
    const auto& W = w.layers[i].weights;
    const auto& B = w.layers[i].biases;
    if (spec.kind == LayerKind::kConv1D) {
      const std::size_t C = x.empty() ? 0 : x[0].size();
      const std::size_t olen = x.size() - spec.kernel + 1;
      std::vector<std::vector<double>> y(olen, std::vector<double>(spec.units));
      for (std::size_t t = 0; t < olen; ++t) {
        for (std::size_t f = 0; f < spec.units; ++f) {
          double s = B[f];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t j = 0; j < spec.kernel; ++j)
              s += W[(f * C + c) * spec.kernel + j] * x[t + j][c];
          y[t][f] = s > 0.0 ? s : 0.0;
        }
      }
      x = std::move(y);
    } else if (spec.kind == LayerKind::kMaxPool1D) {
      const std::size_t olen = x.size() / spec.kernel;
      const std::size_t C = x.empty() ? 0 : x[0].size();
      std::vector<std::vector<double>> y(olen, std::vector<double>(C));
      for (std::size_t t = 0; t < olen; ++t)
        for (std::size_t c = 0; c < C; ++c) {
          double m = x[t * spec.kernel][c];
          for (std::size_t j = 1; j < spec.kernel; ++j) m = std::max(m, x[t * spec.kernel + j][c]);
          y[t][c] = m;
        }
      x = std::move(y);
    } else {
      if (!flattened) {
        // Channel-major flattening.
        const std::size_t len = x.size(), C = len ? x[0].size() : 0;
        flat.assign(len * C, 0.0);
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t t = 0; t < len; ++t) flat[c * len + t] = x[t][c];
        flattened = true;
      }
      const std::size_t fi = flat.size();
      std::vector<double> z(spec.units);
      for (std::size_t u = 0; u < spec.units; ++u) {
        double s = B[u];
        for (std::size_t j = 0; j < fi; ++j) s += W[u * fi + j] * flat[j];
        z[u] = s;
      }
      if (spec.kind == LayerKind::kDense) {
        for (double& v : z) v = v > 0.0 ? v : 0.0;
        flat = std::move(z);
      } else {
        const double m = *std::max_element(z.begin(), z.end());
        double den = 0.0;
        for (double v : z) den += std::exp(v - m);
        for (double& v : z) v = std::exp(v - m) / den;
        return z;
      }
    }
  }
  return {};
}

inline double mean_cross_entropy(const ModelArchitecture& arch, const WeightSet& w,
                                 const fedsim::WindowedDataset& d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto p = forward_frame(arch, w, d.frames.data() + i * d.frame_size());
    s -= std::log(p[static_cast<std::size_t>(d.labels[i])]);
  }
  return s / static_cast<double>(d.size());
}

/// Central finite difference of the mean cross-entropy for one parameter.
inline double numeric_partial(const ModelArchitecture& arch, WeightSet w,
                              const fedsim::WindowedDataset& d, std::size_t layer, bool bias,
                              std::size_t index, double h = 1e-6) {
  auto& v = bias ? w.layers[layer].biases[index] : w.layers[layer].weights[index];
  const double orig = v;
  v = orig + h;
  const double up = mean_cross_entropy(arch, w, d);
  v = orig - h;
  const double down = mean_cross_entropy(arch, w, d);
  return (up - down) / (2.0 * h);
}

/// Largest relative error between the analytic gradient and central finite
/// differences over every parameter of the selected layer. Entries where both
/// magnitudes are below `floor` are treated as agreeing.
inline double gradient_check_layer(const ModelArchitecture& arch, const WeightSet& w,
                                   const fedsim::WindowedDataset& d, const WeightSet& analytic,
                                   std::size_t layer, double floor = 1e-8) {
  double worst = 0.0;
  for (int b = 0; b < 2; ++b) {
    const auto& a = b ? analytic.layers[layer].biases : analytic.layers[layer].weights;
    for (std::size_t j = 0; j < a.size(); ++j) {
      const double n = numeric_partial(arch, w, d, layer, b != 0, j);
      const double scale = std::max(std::abs(a[j]), std::abs(n));
      if (scale < floor) continue;
      worst = std::max(worst, std::abs(a[j] - n) / scale);
    }
  }
  return worst;
}

/// sum_k n_k/n * w_k computed one coordinate at a time.
inline WeightSet naive_fedavg(const std::vector<WeightSet>& clients, const std::vector<double>& n) {
  double total = 0.0;
  for (double v : n) total += v;
  WeightSet out = clients.front();
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    for (std::size_t j = 0; j < out.layers[l].weights.size(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < clients.size(); ++k)
        s += (n[k] / total) * clients[k].layers[l].weights[j];
      out.layers[l].weights[j] = s;
    }
    for (std::size_t j = 0; j < out.layers[l].biases.size(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < clients.size(); ++k)
        s += (n[k] / total) * clients[k].layers[l].biases[j];
      out.layers[l].biases[j] = s;
    }
  }
  return out;
}

struct BruteAssignment {
  double cost = INFINITY;
  std::vector<long> row_to_col;
};

/// Minimum assignment by enumerating every injective row->column map
/// (rows <= cols). The first optimum in lexicographic order wins.
inline BruteAssignment brute_force_assignment(const fedsim::Matrix& m) {
  std::vector<std::size_t> cols(m.cols);
  std::iota(cols.begin(), cols.end(), std::size_t{0});
  BruteAssignment best;
  do {
    double s = 0.0;
    for (std::size_t r = 0; r < m.rows; ++r) s += m(r, cols[r]);
    if (s < best.cost) {
      best.cost = s;
      best.row_to_col.assign(cols.begin(), cols.begin() + static_cast<std::ptrdiff_t>(m.rows));
    }
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

/// Exact fraction with 64-bit parts.
struct Fraction {
  std::int64_t num = 0;
  std::int64_t den = 1;

  static Fraction make(std::int64_t n, std::int64_t d) {
    if (d == 0) return {0, 1};
    const std::int64_t g = std::gcd(n, d);
    return {n / g, d / g};
  }
  Fraction operator+(const Fraction& o) const { return make(num * o.den + o.num * den, den * o.den); }
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

/// Per-class F1 as exact fractions: 2TP / (2TP + FP + FN), 0 when undefined.
inline std::vector<Fraction> exact_f1(const std::vector<std::vector<std::int64_t>>& cm) {
  const std::size_t C = cm.size();
  std::vector<Fraction> out(C);
  for (std::size_t i = 0; i < C; ++i) {
    std::int64_t tp = cm[i][i], fp = 0, fn = 0;
    for (std::size_t j = 0; j < C; ++j) {
      if (j == i) continue;
      fp += cm[j][i];
      fn += cm[i][j];
    }
    out[i] = (tp == 0) ? Fraction{0, 1} : Fraction::make(2 * tp, 2 * tp + fp + fn);
  }
  return out;
}

inline Fraction exact_macro_f1(const std::vector<std::vector<std::int64_t>>& cm) {
  Fraction s{0, 1};
  for (const auto& f : exact_f1(cm)) s = s + f;
  return Fraction::make(s.num, s.den * static_cast<std::int64_t>(cm.size()));
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double population_std(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

inline WeightSet random_weights(const ModelArchitecture& arch, std::mt19937_64& rng,
                                double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  WeightSet w = fedsim::zero_weights(arch);
  for (auto& l : w.layers) {
    for (double& v : l.weights) v = g(rng);
    for (double& v : l.biases) v = g(rng);
  }
  return w;
}

inline fedsim::WindowedDataset random_dataset(std::size_t n, fedsim::Shape in, std::size_t classes,
                                              std::mt19937_64& rng) {
  fedsim::WindowedDataset d;
  d.window_length = in.length;
  d.channels = in.channels;
  std::normal_distribution<float> g(0.0f, 1.0f);
  for (std::size_t i = 0; i < n * in.size(); ++i) d.frames.push_back(g(rng));
  for (std::size_t i = 0; i < n; ++i)
    d.labels.push_back(static_cast<std::int32_t>(rng() % classes));
  return d;
}

}  // namespace oracle
