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

#include "fedsim/serialize.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>

#include "bytes.hpp"
#include "fedsim/error.hpp"

namespace fedsim {

namespace detail {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kIo, "short write to " + path);
}

}  // namespace detail

LayerMask LayerMask::range(std::size_t layers, std::size_t first, std::size_t last) {
  LayerMask m(layers);
  for (std::size_t i = first; i <= last && i < layers; ++i) m.set(i);
  return m;
}

bool LayerMask::any() const { return std::find(bits_.begin(), bits_.end(), true) != bits_.end(); }

std::size_t LayerMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), true));
}

namespace {

constexpr std::uint8_t kPayloadVersion = 1;
constexpr std::uint32_t kCheckpointVersion = 1;

void put_values(detail::ByteWriter& w, const std::vector<double>& v, FloatWidth width) {
  if (width == FloatWidth::k64) {
    for (double x : v) w.put(x);
  } else {
    for (double x : v) w.put(static_cast<float>(x));
  }
}

void get_values(detail::ByteReader& r, std::vector<double>& v, std::size_t n, FloatWidth width) {
  r.need(n * static_cast<std::size_t>(width));
  v.resize(n);
  if (width == FloatWidth::k64) {
    for (double& x : v) x = r.get<double>();
  } else {
    for (double& x : v) x = static_cast<double>(r.get<float>());
  }
}

}  // namespace

std::vector<std::uint8_t> serialize_weights(const WeightSet& w, const LayerMask& mask,
                                            FloatWidth width) {
  if (mask.size() != w.layer_count()) {
    throw ShapeError("layer mask covers " + std::to_string(mask.size()) + " layers, model has " +
                     std::to_string(w.layer_count()));
  }
  detail::ByteWriter out;
  out.put_tag("FSWS");
  out.put<std::uint8_t>(kPayloadVersion);
  out.put<std::uint8_t>(static_cast<std::uint8_t>(width));
  out.put<std::uint16_t>(0);
  out.put<std::uint32_t>(static_cast<std::uint32_t>(w.layer_count()));
  out.put<std::uint32_t>(static_cast<std::uint32_t>(mask.count()));
  for (std::size_t i = 0; i < w.layer_count(); ++i) {
    if (!mask.test(i)) continue;
    const auto& l = w.layers[i];
    out.put<std::uint32_t>(static_cast<std::uint32_t>(i));
    out.put<std::uint32_t>(static_cast<std::uint32_t>(l.weights.size()));
    out.put<std::uint32_t>(static_cast<std::uint32_t>(l.biases.size()));
    put_values(out, l.weights, width);
    put_values(out, l.biases, width);
  }
  return std::move(out.bytes());
}

WeightPayload deserialize_weights(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "weight payload");
  r.expect_tag("FSWS");
  const auto version = r.get<std::uint8_t>();
  if (version != kPayloadVersion) {
    throw Error(ErrorKind::kFormat, "weight payload: unsupported version " + std::to_string(version));
  }
  const auto width_byte = r.get<std::uint8_t>();
  if (width_byte != 4 && width_byte != 8) {
    throw Error(ErrorKind::kFormat, "weight payload: bad float width " + std::to_string(width_byte));
  }
  r.get<std::uint16_t>();
  const auto layers = r.get<std::uint32_t>();
  const auto sent = r.get<std::uint32_t>();
  if (sent > layers) {
    throw Error(ErrorKind::kFormat, "weight payload: more transmitted layers than model layers");
  }
  WeightPayload p;
  p.width = static_cast<FloatWidth>(width_byte);
  p.weights.layers.resize(layers);
  p.present = LayerMask(layers);
  std::uint32_t previous = 0;
  for (std::uint32_t n = 0; n < sent; ++n) {
    const auto idx = r.get<std::uint32_t>();
    if (idx >= layers || (n > 0 && idx <= previous)) {
      throw Error(ErrorKind::kFormat, "weight payload: bad layer index " + std::to_string(idx));
    }
    previous = idx;
    const auto wc = r.get<std::uint32_t>();
    const auto bc = r.get<std::uint32_t>();
    get_values(r, p.weights.layers[idx].weights, wc, p.width);
    get_values(r, p.weights.layers[idx].biases, bc, p.width);
    p.present.set(idx);
  }
  if (r.remaining() != 0) {
    throw Error(ErrorKind::kFormat, "weight payload: " + std::to_string(r.remaining()) +
                                        " trailing bytes");
  }
  return p;
}

std::size_t payload_size(const ModelArchitecture& arch, const LayerMask& mask, FloatWidth width) {
  std::size_t n = kPayloadHeaderBytes;
  for (std::size_t i = 0; i < arch.layer_count(); ++i) {
    if (!mask.test(i)) continue;
    n += kPayloadLayerHeaderBytes +
         static_cast<std::size_t>(width) * (arch.weight_count(i) + arch.bias_count(i));
  }
  return n;
}

void merge_payload(WeightSet& target, const WeightPayload& payload) {
  if (target.layer_count() != payload.weights.layer_count()) {
    throw ShapeError("payload layer count does not match target model");
  }
  for (std::size_t i = 0; i < target.layer_count(); ++i) {
    if (payload.present.test(i)) target.layers[i] = payload.weights.layers[i];
  }
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  check_matches(ckpt.arch, ckpt.weights);
  detail::ByteWriter w;
  w.put_tag("FSCK");
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.label.size()));
  w.put_bytes({reinterpret_cast<const std::uint8_t*>(ckpt.label.data()), ckpt.label.size()});
  w.put<std::uint32_t>(ckpt.round);
  const Shape in = ckpt.arch.input_shape();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(in.length));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(in.channels));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.arch.layer_count()));
  for (const auto& l : ckpt.arch.layers()) {
    w.put<std::uint8_t>(static_cast<std::uint8_t>(l.kind));
    w.put<std::uint8_t>(l.frozen ? 1 : 0);
    w.put<std::uint16_t>(0);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(l.units));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(l.kernel));
  }
  const auto payload = serialize_weights(ckpt.weights, LayerMask::all(ckpt.weights.layer_count()),
                                         FloatWidth::k64);
  w.put<std::uint64_t>(payload.size());
  w.put_bytes(payload);
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "checkpoint");
  r.expect_tag("FSCK");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::kFormat, "checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint c;
  const auto label_len = r.get<std::uint32_t>();
  r.need(label_len);
  c.label.assign(reinterpret_cast<const char*>(r.rest().data()), label_len);
  r.skip(label_len);
  c.round = r.get<std::uint32_t>();
  Shape in;
  in.length = r.get<std::uint32_t>();
  in.channels = r.get<std::uint32_t>();
  const auto count = r.get<std::uint32_t>();
  std::vector<LayerSpec> layers(count);
  for (auto& l : layers) {
    const auto kind = r.get<std::uint8_t>();
    if (kind > static_cast<std::uint8_t>(LayerKind::kSoftmax)) {
      throw Error(ErrorKind::kFormat, "checkpoint: unknown layer kind " + std::to_string(kind));
    }
    l.kind = static_cast<LayerKind>(kind);
    l.frozen = r.get<std::uint8_t>() != 0;
    r.get<std::uint16_t>();
    l.units = r.get<std::uint32_t>();
    l.kernel = r.get<std::uint32_t>();
  }
  try {
    c.arch = ModelArchitecture(in, std::move(layers));
  } catch (const ShapeError& e) {
    throw Error(ErrorKind::kFormat, std::string("checkpoint: invalid architecture: ") + e.what());
  }
  const auto payload_len = r.get<std::uint64_t>();
  if (payload_len != r.remaining()) {
    throw Error(ErrorKind::kFormat, "checkpoint: payload length does not match file size");
  }
  auto payload = deserialize_weights(r.rest());
  if (payload.present.count() != payload.weights.layer_count()) {
    throw Error(ErrorKind::kFormat, "checkpoint: payload is missing layers");
  }
  c.weights = std::move(payload.weights);
  try {
    check_matches(c.arch, c.weights);
  } catch (const ShapeError& e) {
    throw Error(ErrorKind::kFormat, std::string("checkpoint: ") + e.what());
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  detail::write_file(path.string(), encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file(path.string()));
}

}  // namespace fedsim
