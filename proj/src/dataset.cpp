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

#include "fedsim/dataset.hpp"

#include "fedsim/error.hpp"

namespace fedsim {

void WindowedDataset::append(const WindowedDataset& other) {
  if (other.empty()) return;
  if (empty() && frames.empty()) {
    window_length = other.window_length;
    channels = other.channels;
  } else if (window_length != other.window_length || channels != other.channels) {
    throw ShapeError("cannot concatenate datasets with different frame shapes");
  }
  frames.insert(frames.end(), other.frames.begin(), other.frames.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
  if (!other.starts.empty() && starts.size() + other.size() == labels.size()) {
    starts.insert(starts.end(), other.starts.begin(), other.starts.end());
  } else {
    starts.clear();
  }
}

WindowedDataset WindowedDataset::subset(std::span<const std::size_t> indices) const {
  WindowedDataset out;
  out.window_length = window_length;
  out.channels = channels;
  out.frames.reserve(indices.size() * frame_size());
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= size()) throw ShapeError("frame index out of range");
    auto f = frame(i);
    out.frames.insert(out.frames.end(), f.begin(), f.end());
    out.labels.push_back(labels[i]);
    if (!starts.empty()) out.starts.push_back(starts[i]);
  }
  return out;
}

}  // namespace fedsim
