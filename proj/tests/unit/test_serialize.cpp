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

#include <doctest.h>

#include <filesystem>
#include <random>

#include "fedsim/error.hpp"
#include "fedsim/serialize.hpp"
#include "oracles.hpp"

using namespace fedsim;

namespace {

ModelArchitecture model() {
  return ModelArchitecture({12, 2}, {LayerSpec::conv1d(4, 3), LayerSpec::max_pool(2),
                                     LayerSpec::dense(5), LayerSpec::softmax(3)});
}

ErrorKind kind_of(const std::vector<std::uint8_t>& bytes) {
  try {
    deserialize_weights(bytes);
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::kData;
}

}  // namespace

TEST_CASE("payload round trip at both widths") {
  std::mt19937_64 rng(1);
  const auto a = model();
  const auto w = oracle::random_weights(a, rng);
  const auto all = LayerMask::all(a.layer_count());

  const auto p64 = deserialize_weights(serialize_weights(w, all, FloatWidth::k64));
  CHECK(p64.weights == w);
  CHECK(p64.present == all);

  const auto p32 = deserialize_weights(serialize_weights(w, all, FloatWidth::k32));
  for (std::size_t l = 0; l < a.layer_count(); ++l)
    for (std::size_t j = 0; j < w.layers[l].weights.size(); ++j)
      CHECK(p32.weights.layers[l].weights[j] ==
            static_cast<double>(static_cast<float>(w.layers[l].weights[j])));
}

TEST_CASE("payload size arithmetic") {
  const auto a = model();
  const auto w = zero_weights(a);
  LayerMask conv_only(a.layer_count());
  conv_only.set(0);
  const std::size_t conv_bytes = (4 * 6 + 4) * 4;
  CHECK(serialize_weights(w, conv_only).size() == kPayloadHeaderBytes + kPayloadLayerHeaderBytes + conv_bytes);
  CHECK(payload_size(a, conv_only) == kPayloadHeaderBytes + kPayloadLayerHeaderBytes + conv_bytes);

  const auto none = LayerMask::none(a.layer_count());
  CHECK(serialize_weights(w, none).size() == kPayloadHeaderBytes);
  const auto empty = deserialize_weights(serialize_weights(w, none));
  CHECK_FALSE(empty.present.any());

  const auto all = LayerMask::all(a.layer_count());
  const std::size_t expect =
      kPayloadHeaderBytes + 4 * kPayloadLayerHeaderBytes + a.parameter_count() * 8;
  CHECK(serialize_weights(w, all, FloatWidth::k64).size() == expect);
  CHECK(payload_size(a, all, FloatWidth::k64) == expect);
}

TEST_CASE("merge copies only the present layers") {
  std::mt19937_64 rng(2);
  const auto a = model();
  const auto src = oracle::random_weights(a, rng);
  auto dst = zero_weights(a);
  merge_payload(dst, deserialize_weights(serialize_weights(src, LayerMask::range(4, 2, 3), FloatWidth::k64)));
  CHECK(dst.layers[2] == src.layers[2]);
  CHECK(dst.layers[3] == src.layers[3]);
  CHECK(dst.layers[0] == zero_weights(a).layers[0]);
}

TEST_CASE("corrupt payloads raise format errors") {
  const auto a = model();
  const auto good = serialize_weights(zero_weights(a), LayerMask::all(a.layer_count()));
  auto bad = good;
  bad[0] = 'X';
  CHECK(kind_of(bad) == ErrorKind::kFormat);
  bad = good;
  bad[4] = 9;
  CHECK(kind_of(bad) == ErrorKind::kFormat);
  bad = good;
  bad[5] = 3;
  CHECK(kind_of(bad) == ErrorKind::kFormat);
  bad = good;
  bad.resize(bad.size() - 1);
  CHECK(kind_of(bad) == ErrorKind::kFormat);
  bad = good;
  bad.push_back(0);
  CHECK(kind_of(bad) == ErrorKind::kFormat);
  bad = good;
  bad[12] = 9;  // transmitted layers > model layers
  CHECK(kind_of(bad) == ErrorKind::kFormat);
  bad = good;
  bad[16] = 7;  // first layer index out of range
  CHECK(kind_of(bad) == ErrorKind::kFormat);
  CHECK(kind_of({}) == ErrorKind::kFormat);
}

TEST_CASE("mask size must match the model") {
  const auto a = model();
  CHECK_THROWS_AS(serialize_weights(zero_weights(a), LayerMask::all(3)), ShapeError);
}

TEST_CASE("checkpoints are bit-exact") {
  std::mt19937_64 rng(3);
  Checkpoint c;
  c.label = "server";
  c.round = 17;
  c.arch = model();
  c.weights = oracle::random_weights(c.arch, rng);
  c.weights.layers[0].weights[0] = 1e-310;
  const auto path = std::filesystem::temp_directory_path() / "fedsim_test.fsck";
  save_checkpoint(path, c);
  const auto back = load_checkpoint(path);
  CHECK(back.label == "server");
  CHECK(back.round == 17);
  CHECK(back.arch.notation() == c.arch.notation());
  CHECK(back.arch.input_shape() == c.arch.input_shape());
  CHECK(back.weights == c.weights);
  std::filesystem::remove(path);

  auto bytes = encode_checkpoint(c);
  bytes.pop_back();
  CHECK_THROWS_AS(decode_checkpoint(bytes), Error);
  bytes = encode_checkpoint(c);
  bytes[1] = 'Z';
  CHECK_THROWS_AS(decode_checkpoint(bytes), Error);
  CHECK_THROWS_AS(load_checkpoint(path), Error);
}
