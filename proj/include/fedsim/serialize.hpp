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
#include <span>
#include <string>
#include <vector>

#include "fedsim/nn.hpp"

namespace fedsim {

/// Selects which layers of a model take part in a transfer or an operation.
class LayerMask {
 public:
  LayerMask() = default;
  explicit LayerMask(std::size_t layers, bool value = false) : bits_(layers, value) {}

  static LayerMask all(std::size_t layers) { return LayerMask(layers, true); }
  static LayerMask none(std::size_t layers) { return LayerMask(layers, false); }
  /// Layers [first, last] inclusive.
  static LayerMask range(std::size_t layers, std::size_t first, std::size_t last);

  std::size_t size() const { return bits_.size(); }
  bool test(std::size_t i) const { return i < bits_.size() && bits_[i]; }
  void set(std::size_t i, bool v = true) { bits_.at(i) = v; }
  bool any() const;
  std::size_t count() const;
  bool operator==(const LayerMask&) const = default;

 private:
  std::vector<bool> bits_;
};

enum class FloatWidth : std::uint8_t { k32 = 4, k64 = 8 };

/// Weight payload layout (little-endian):
///   header (16 bytes): "FSWS", u8 version, u8 float width, u16 reserved,
///                      u32 model layer count, u32 transmitted layer count
///   per transmitted layer: u32 index, u32 weight count, u32 bias count,
///                          weights then biases as float32 or float64
inline constexpr std::size_t kPayloadHeaderBytes = 16;
inline constexpr std::size_t kPayloadLayerHeaderBytes = 12;

std::vector<std::uint8_t> serialize_weights(const WeightSet& w, const LayerMask& mask,
                                            FloatWidth width = FloatWidth::k32);

struct WeightPayload {
  WeightSet weights;  // layers absent from the payload are left empty
  LayerMask present;
  FloatWidth width = FloatWidth::k32;
};

WeightPayload deserialize_weights(std::span<const std::uint8_t> bytes);

/// Byte size of serialize_weights for a model of this architecture.
std::size_t payload_size(const ModelArchitecture& arch, const LayerMask& mask,
                         FloatWidth width = FloatWidth::k32);

/// Copies the layers present in `payload` into `target`.
void merge_payload(WeightSet& target, const WeightPayload& payload);

struct Checkpoint {
  std::string label;
  std::uint32_t round = 0;
  ModelArchitecture arch;
  WeightSet weights;
};

/// "FSCK", u32 version, label, round, architecture table, then a float64 weight
/// payload with every layer, so a save/load cycle is bit-exact.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fedsim
