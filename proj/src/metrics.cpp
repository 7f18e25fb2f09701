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

#include "fedsim/metrics.hpp"

#include <cmath>
#include <numeric>

#include "fedsim/error.hpp"

namespace fedsim {

ConfusionMatrix::ConfusionMatrix(std::size_t class_count)
    : classes_(class_count), counts_(class_count * class_count, 0) {
  if (class_count == 0) throw Error(ErrorKind::kData, "confusion matrix needs >= 1 class");
}

ConfusionMatrix::ConfusionMatrix(std::size_t class_count, std::vector<std::uint64_t> counts)
    : classes_(class_count), counts_(std::move(counts)) {
  if (class_count == 0 || counts_.size() != class_count * class_count) {
    throw ShapeError("confusion matrix counts must be class_count^2");
  }
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted, std::uint64_t n) {
  if (truth >= classes_ || predicted >= classes_) {
    throw Error(ErrorKind::kData, "class id outside confusion matrix");
  }
  counts_[truth * classes_ + predicted] += n;
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::row_total(std::size_t truth) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < classes_; ++p) s += at(truth, p);
  return s;
}

std::uint64_t ConfusionMatrix::column_total(std::size_t predicted) const {
  std::uint64_t s = 0;
  for (std::size_t t = 0; t < classes_; ++t) s += at(t, predicted);
  return s;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw ShapeError("confusion matrices differ in class count");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

namespace {
double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace

double accuracy(const ConfusionMatrix& cm) {
  std::uint64_t diag = 0;
  for (std::size_t i = 0; i < cm.class_count(); ++i) diag += cm.at(i, i);
  return ratio(diag, cm.total());
}

std::vector<double> precision_per_class(const ConfusionMatrix& cm) {
  std::vector<double> out(cm.class_count());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ratio(cm.at(i, i), cm.column_total(i));
  return out;
}

std::vector<double> recall_per_class(const ConfusionMatrix& cm) {
  std::vector<double> out(cm.class_count());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ratio(cm.at(i, i), cm.row_total(i));
  return out;
}

std::vector<double> f1_per_class(const ConfusionMatrix& cm) {
  // 2PR / (P + R) in count form: 2TP / (2TP + FP + FN).
  std::vector<double> out(cm.class_count());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::uint64_t tp = cm.at(i, i);
    const std::uint64_t fp = cm.column_total(i) - tp;
    const std::uint64_t fn = cm.row_total(i) - tp;
    out[i] = tp == 0 ? 0.0 : ratio(2 * tp, 2 * tp + fp + fn);
  }
  return out;
}

double macro_f1(const ConfusionMatrix& cm) {
  const auto f1 = f1_per_class(cm);
  return std::accumulate(f1.begin(), f1.end(), 0.0) / static_cast<double>(f1.size());
}

MeanStd mean_std(const std::vector<double>& values) {
  if (values.empty()) return {};
  const double n = static_cast<double>(values.size());
  // Shifted by the first value so identical inputs give that value exactly.
  const double pivot = values.front();
  double shift = 0.0;
  for (double v : values) shift += v - pivot;
  const double mean = pivot + shift / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / n)};
}

}  // namespace fedsim
