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
#include <vector>

namespace fedsim {

/// Rows are true classes, columns are predicted classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t class_count);
  ConfusionMatrix(std::size_t class_count, std::vector<std::uint64_t> counts);

  void add(std::size_t truth, std::size_t predicted, std::uint64_t n = 1);
  std::uint64_t at(std::size_t truth, std::size_t predicted) const {
    return counts_[truth * classes_ + predicted];
  }
  std::size_t class_count() const { return classes_; }
  std::uint64_t total() const;
  std::uint64_t row_total(std::size_t truth) const;
  std::uint64_t column_total(std::size_t predicted) const;

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

// All ratios below return 0 when their denominator is 0.

double accuracy(const ConfusionMatrix& cm);
std::vector<double> precision_per_class(const ConfusionMatrix& cm);
std::vector<double> recall_per_class(const ConfusionMatrix& cm);
std::vector<double> f1_per_class(const ConfusionMatrix& cm);

/// Unweighted mean of per-class F1 over every class of the label schema,
/// including classes absent from the evaluated data.
double macro_f1(const ConfusionMatrix& cm);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

MeanStd mean_std(const std::vector<double>& values);

}  // namespace fedsim
