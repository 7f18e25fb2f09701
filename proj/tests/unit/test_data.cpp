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

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "fedsim/data.hpp"
#include "fedsim/error.hpp"
#include "oracles.hpp"

using namespace fedsim;

namespace {

SensorRecording make_recording(const std::string& id, std::size_t T, std::size_t channels = 2,
                               std::int32_t label = 0) {
  SensorRecording r;
  r.participant_id = id;
  r.channels = channels;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < channels; ++c) r.samples.push_back(static_cast<float>(t * 10 + c));
    r.labels.push_back(label);
  }
  return r;
}

std::int32_t naive_majority(const std::vector<std::int32_t>& labels) {
  for (std::int32_t cand : labels) {
    std::size_t n = 0;
    for (std::int32_t l : labels) n += (l == cand);
    if (2 * n > labels.size()) return cand;
  }
  return -1;
}

std::vector<std::size_t> histogram(const WindowedDataset& d, std::size_t classes) {
  std::vector<std::size_t> h(classes);
  for (auto y : d.labels) ++h[static_cast<std::size_t>(y)];
  return h;
}

// Pearson chi-square test of homogeneity for a 2 x C table.
double homogeneity_p(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  double na = 0, nb = 0;
  for (auto v : a) na += v;
  for (auto v : b) nb += v;
  double stat = 0.0;
  std::size_t df = 0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    const double col = static_cast<double>(a[c] + b[c]);
    if (col == 0) continue;
    ++df;
    const double ea = col * na / (na + nb), eb = col * nb / (na + nb);
    stat += (a[c] - ea) * (a[c] - ea) / ea + (b[c] - eb) * (b[c] - eb) / eb;
  }
  boost::math::chi_squared dist(static_cast<double>(df - 1));
  return boost::math::cdf(boost::math::complement(dist, stat));
}

}  // namespace

TEST_CASE("window counts") {
  WindowParams p{128, 64};
  CHECK(window(make_recording("a", 128), p).data.size() == 1);
  CHECK(window(make_recording("a", 256), p).data.size() == 3);
  CHECK(window(make_recording("a", 255), p).data.size() == 2);
  const auto short_rec = window(make_recording("a", 100), p);
  CHECK(short_rec.too_short);
  CHECK(short_rec.data.empty());
  CHECK_THROWS_AS(window(make_recording("a", 300), WindowParams{64, 64}), Error);
}

TEST_CASE("window frames copy the right timesteps") {
  const auto w = window(make_recording("a", 20, 2), WindowParams{4, 1}).data;
  REQUIRE(w.size() == 6);
  CHECK(w.starts[2] == 6);
  const auto f = w.frame(2);
  CHECK(f[0] == 60.f);
  CHECK(f[1] == 61.f);
  CHECK(f[7] == 91.f);
}

TEST_CASE("majority labels match naive counting") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<std::int32_t> labels(1 + rng() % 9);
    for (auto& l : labels) l = static_cast<std::int32_t>(rng() % 3);
    CHECK(majority_label(labels.data(), labels.size()) == naive_majority(labels));
  }

  SensorRecording r = make_recording("a", 12, 1);
  for (std::size_t t = 0; t < 12; ++t) r.labels[t] = t < 6 ? 1 : 2;
  const auto w = window(r, WindowParams{4, 2});
  CHECK(w.candidate_frames == 5);
  // Frames start at 0,2,4,6,8: labels 1, 1, tie (dropped), 2, 2.
  CHECK(w.data.labels == std::vector<std::int32_t>{1, 1, 2, 2});
}

TEST_CASE("z-normalization recomputed independently") {
  std::mt19937_64 rng(4);
  auto d = oracle::random_dataset(50, {7, 3}, 2, rng);
  for (std::size_t i = 0; i < d.frames.size(); ++i) d.frames[i] = d.frames[i] * 4.f + 9.f;
  znormalize(d);
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> v;
    for (std::size_t i = c; i < d.frames.size(); i += 3) v.push_back(d.frames[i]);
    CHECK(std::abs(oracle::mean(v)) < 1e-6);
    CHECK(std::abs(oracle::population_std(v) - 1.0) < 1e-6);
  }
}

TEST_CASE("z-normalization edge channels") {
  WindowedDataset d;
  d.window_length = 2;
  d.channels = 2;
  d.frames = {5.f, -1.f, 5.f, 1.f};
  d.labels = {0};
  const auto s = znormalize(d);
  CHECK(s.constant_channels == std::vector<std::size_t>{0});
  CHECK(d.frames == std::vector<float>{0.f, -1.f, 0.f, 1.f});

  WindowedDataset test = d;
  test.frames = {5.f, 3.f, 6.f, 0.f};
  apply_znorm(test, s);
  CHECK(test.frames == std::vector<float>{0.f, 3.f, 1.f, 0.f});
}

TEST_CASE("partition sizes, warnings and leakage") {
  PartitionOptions o;
  o.window = {10, 0};
  o.split_ratio = 0.8;
  auto p = partition_by_participant({make_recording("p1", 100)}, o);
  REQUIRE(p.clients.size() == 1);
  CHECK(p.clients[0].train.size() == 8);
  CHECK(p.clients[0].test.size() == 2);

  std::vector<SensorRecording> recs;
  for (int i = 0; i < 15; ++i) recs.push_back(make_recording("p" + std::to_string(i), 200));
  recs.push_back(make_recording("tiny", 30));
  recs.push_back(make_recording("p3", 80));
  p = partition_by_participant(recs, o);
  CHECK(p.clients.size() == 15);
  CHECK(p.warnings.size() == 1);
  std::size_t total = 0;
  for (const auto& c : p.clients) total += c.test.size();
  CHECK(p.global_test.size() == total);
  CHECK(p.clients[3].train.size() == 16 + 6);

  o.window = {10, 5};
  p = partition_by_participant({make_recording("p1", 300)}, o);
  const auto& c = p.clients[0];
  const std::size_t train_end = c.train.starts.back() + 10;
  for (std::size_t s : c.test.starts) CHECK(s >= train_end);
  const double ratio = double(c.train.size()) / double(c.train.size() + c.test.size());
  const double one = 1.0 / double(c.train.size() + c.test.size());
  CHECK(std::abs(ratio - 0.8) <= 2 * one);
}

TEST_CASE("synthetic IID histograms are homogeneous") {
  SynthSpec s;
  s.clients = 2;
  s.classes = 4;
  s.samples_per_client = 2000;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    s.seed = seed;
    const auto parts = synth_noniid(s);
    CHECK(homogeneity_p(histogram(parts[0].train, 4), histogram(parts[1].train, 4)) > 0.01);
  }
}

TEST_CASE("synthetic Dirichlet skew approaches IID for large alpha") {
  SynthSpec s;
  s.clients = 2;
  s.classes = 4;
  s.samples_per_client = 2000;
  s.mode = SynthMode::kLabelSkew;
  s.dirichlet_alpha = 1000;
  const auto parts = synth_noniid(s);
  CHECK(homogeneity_p(histogram(parts[0].train, 4), histogram(parts[1].train, 4)) > 0.01);
  s.dirichlet_alpha = 0.05;
  const auto skewed = synth_noniid(s);
  CHECK(homogeneity_p(histogram(skewed[0].train, 4), histogram(skewed[1].train, 4)) < 0.01);
}

TEST_CASE("planted outlier with zero offset equals IID") {
  SynthSpec s;
  s.clients = 3;
  const auto iid = synth_noniid(s);
  s.mode = SynthMode::kPlantedOutlier;
  s.outlier_client = 1;
  s.outlier_offset = 0.0;
  const auto zero = synth_noniid(s);
  s.outlier_offset = 5.0;
  const auto shifted = synth_noniid(s);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(zero[k].train.frames == iid[k].train.frames);
    CHECK(zero[k].test.labels == iid[k].test.labels);
    CHECK((shifted[k].train.frames == iid[k].train.frames) == (k != 1));
  }
  CHECK(shifted[1].train.frames[0] == doctest::Approx(iid[1].train.frames[0] + 5.0f));
}

TEST_CASE("synthetic generator validation") {
  SynthSpec s;
  s.client_noise = {{1.0}, {1.0}, {1.0}, {0.0}, {1.0}};
  try {
    synth_noniid(s);
    FAIL("expected a data error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kData);
  }
  s = {};
  s.classes = 1;
  CHECK_THROWS_AS(synth_noniid(s), Error);
  s = {};
  s.test_fraction = 0.2;
  s.samples_per_client = 10;
  const auto p = synth_noniid(s);
  CHECK(p[0].train.size() == 8);
  CHECK(p[0].test.size() == 2);
  CHECK(synth_noniid(s)[4].train.frames == p[4].train.frames);
}

TEST_CASE("sensor CSV ingestion and joining") {
  const auto dir = std::filesystem::temp_directory_path() / "fedsim_test_csv";
  std::filesystem::create_directories(dir);
  {
    std::ofstream a(dir / "acc.csv");
    a << "timestamp,x,y,z\n0,1,2,3\n15,4,5,6\n40,7,8,9\n";
    std::ofstream g(dir / "gyr.csv");
    g << "timestamp,x,y,z\n1,-1,-2,-3\n39,-7,-8,-9\n";
    std::ofstream bad(dir / "bad.csv");
    bad << "t,x\n1,2\n";
  }
  const auto acc = read_sensor_csv(dir / "acc.csv");
  const auto gyr = read_sensor_csv(dir / "gyr.csv");
  CHECK(acc.timestamps.size() == 3);
  const auto rec = join_sensors("p", acc, gyr, 4);
  CHECK(rec.length() == 3);
  CHECK(rec.channels == 6);
  CHECK(rec.samples[3] == -1.f);
  CHECK(rec.samples[6 + 3] == -1.f);
  CHECK(rec.samples[12 + 3] == -7.f);
  CHECK(rec.labels == std::vector<std::int32_t>{4, 4, 4});
  CHECK_THROWS_AS(read_sensor_csv(dir / "bad.csv"), Error);
  CHECK_THROWS_AS(read_sensor_csv(dir / "missing.csv"), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("dataset container round trip") {
  std::mt19937_64 rng(1);
  const auto d = oracle::random_dataset(9, {5, 3}, 4, rng);
  const auto path = std::filesystem::temp_directory_path() / "fedsim_test_ds.bin";
  save_dataset(path, d);
  const auto back = load_dataset(path);
  CHECK(back.frames == d.frames);
  CHECK(back.labels == d.labels);
  CHECK(back.window_length == 5);
  {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    out.put('x');
  }
  CHECK_THROWS_AS(load_dataset(path), Error);
  std::filesystem::remove(path);
}
