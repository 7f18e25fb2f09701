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
#include <span>
#include <vector>

namespace fedsim {

/// Fixed-length labeled frames, stored row-major as N x window_length x channels.
struct WindowedDataset {
  std::size_t window_length = 0;
  std::size_t channels = 0;
  std::vector<float> frames;
  std::vector<std::int32_t> labels;
  /// Timestep index (in the source recording) of each frame's first sample.
  /// Empty for synthetic data.
  std::vector<std::size_t> starts;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::size_t frame_size() const { return window_length * channels; }

  std::span<const float> frame(std::size_t i) const {
    return {frames.data() + i * frame_size(), frame_size()};
  }

  /// Appends every frame of `other`; dimensions must agree (or this is empty).
  void append(const WindowedDataset& other);
  /// Copies of the frames at `indices`, in that order.
  WindowedDataset subset(std::span<const std::size_t> indices) const;
};

}  // namespace fedsim
