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

#include <stdexcept>
#include <string>

namespace fedsim {

enum class ErrorKind {
  kShape,      // tensor / architecture mismatch
  kData,       // malformed or insufficient dataset
  kConfig,     // bad experiment configuration or arch string
  kFormat,     // corrupt binary container
  kIo,         // filesystem failure
  kNumeric,    // NaN/Inf during training or aggregation
  kAggregation // strategy could not produce a result
};

const char* to_string(ErrorKind kind);

/// Every error raised by the library carries a kind so the C API can map it
/// to a stable status code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

class ShapeError : public Error {
 public:
  ShapeError(std::size_t layer, const std::string& what)
      : Error(ErrorKind::kShape, "layer " + std::to_string(layer) + ": " + what),
        layer_(layer) {}
  explicit ShapeError(const std::string& what) : Error(ErrorKind::kShape, what) {}

  /// Offending layer index, or npos when the mismatch is not layer-specific.
  std::size_t layer() const { return layer_; }

 private:
  std::size_t layer_ = std::string::npos;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t position, const std::string& what)
      : Error(ErrorKind::kConfig,
              "parse error at position " + std::to_string(position) + ": " + what),
        position_(position) {}

  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

}  // namespace fedsim
