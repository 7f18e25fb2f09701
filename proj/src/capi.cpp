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

#include "fedsim/fedsim.h"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <memory>
#include <new>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fedsim/error.hpp"
#include "fedsim/experiment.hpp"
#include "fedsim/serialize.hpp"

struct fedsim_config {
  std::string yaml;
  std::vector<std::string> overrides;
  std::filesystem::path base_dir;
  fedsim::ExperimentConfig parsed;
};

struct fedsim_checkpoint {
  fedsim::Checkpoint ckpt;
};

namespace {

thread_local std::string g_last_error;

fedsim_status status_of(fedsim::ErrorKind kind) {
  switch (kind) {
    case fedsim::ErrorKind::kConfig: return FEDSIM_ERR_CONFIG;
    case fedsim::ErrorKind::kIo: return FEDSIM_ERR_IO;
    case fedsim::ErrorKind::kFormat: return FEDSIM_ERR_FORMAT;
    case fedsim::ErrorKind::kShape: return FEDSIM_ERR_SHAPE;
    case fedsim::ErrorKind::kData: return FEDSIM_ERR_DATA;
    case fedsim::ErrorKind::kNumeric: return FEDSIM_ERR_NUMERIC;
    case fedsim::ErrorKind::kAggregation: return FEDSIM_ERR_AGGREGATION;
  }
  return FEDSIM_ERR_RUNTIME;
}

fedsim_status fail(fedsim_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

template <typename Fn>
fedsim_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return FEDSIM_OK;
  } catch (const fedsim::Error& e) {
    return fail(status_of(e.kind()), std::string(fedsim::to_string(e.kind())) + ": " + e.what());
  } catch (const std::bad_alloc&) {
    return fail(FEDSIM_ERR_RUNTIME, "out of memory");
  } catch (const std::exception& e) {
    return fail(FEDSIM_ERR_RUNTIME, e.what());
  } catch (...) {
    return fail(FEDSIM_ERR_RUNTIME, "unknown error");
  }
}

char* dup_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace

extern "C" {

const char* fedsim_version(void) { return "1.0.0"; }

const char* fedsim_last_error(void) { return g_last_error.c_str(); }

void fedsim_string_free(char* s) { delete[] s; }

fedsim_status fedsim_config_load(const char* path, fedsim_config** out) {
  if (path == nullptr || out == nullptr) return fail(FEDSIM_ERR_INVALID_ARGUMENT, "null argument");
  *out = nullptr;
  return guarded([&] {
    auto cfg = std::make_unique<fedsim_config>();
    cfg->parsed = fedsim::load_config(path);
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    cfg->yaml = ss.str();
    cfg->base_dir = std::filesystem::path(path).parent_path();
    *out = cfg.release();
  });
}

fedsim_status fedsim_config_parse(const char* yaml, fedsim_config** out) {
  if (yaml == nullptr || out == nullptr) return fail(FEDSIM_ERR_INVALID_ARGUMENT, "null argument");
  *out = nullptr;
  return guarded([&] {
    auto cfg = std::make_unique<fedsim_config>();
    cfg->yaml = yaml;
    cfg->parsed = fedsim::parse_config(cfg->yaml);
    *out = cfg.release();
  });
}

fedsim_status fedsim_config_set(fedsim_config* cfg, const char* key, const char* value) {
  if (cfg == nullptr || key == nullptr || value == nullptr) {
    return fail(FEDSIM_ERR_INVALID_ARGUMENT, "null argument");
  }
  return guarded([&] {
    auto overrides = cfg->overrides;
    overrides.push_back(std::string(key) + "=" + value);
    cfg->parsed = fedsim::parse_config(cfg->yaml, overrides, cfg->base_dir);
    cfg->overrides = std::move(overrides);
  });
}

fedsim_status fedsim_config_set_many(fedsim_config* cfg, const char* const* assignments,
                                     size_t count) {
  if (cfg == nullptr || (assignments == nullptr && count > 0)) {
    return fail(FEDSIM_ERR_INVALID_ARGUMENT, "null argument");
  }
  for (size_t i = 0; i < count; ++i) {
    if (assignments[i] == nullptr) return fail(FEDSIM_ERR_INVALID_ARGUMENT, "null assignment");
  }
  return guarded([&] {
    auto overrides = cfg->overrides;
    overrides.insert(overrides.end(), assignments, assignments + count);
    cfg->parsed = fedsim::parse_config(cfg->yaml, overrides, cfg->base_dir);
    cfg->overrides = std::move(overrides);
  });
}

fedsim_status fedsim_config_to_yaml(const fedsim_config* cfg, char** out) {
  if (cfg == nullptr || out == nullptr) return fail(FEDSIM_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] { *out = dup_string(fedsim::config_to_yaml(cfg->parsed)); });
}

fedsim_status fedsim_config_output_dir(const fedsim_config* cfg, const char* output_root,
                                       char** out) {
  if (cfg == nullptr || out == nullptr) return fail(FEDSIM_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    std::optional<std::filesystem::path> root;
    if (output_root != nullptr && *output_root != '\0') root = output_root;
    *out = dup_string(fedsim::resolve_output_dir(cfg->parsed, root).string());
  });
}

void fedsim_config_free(fedsim_config* cfg) { delete cfg; }

fedsim_status fedsim_run(const fedsim_config* cfg, const char* output_root,
                         fedsim_progress_fn progress, void* user) {
  if (cfg == nullptr) return fail(FEDSIM_ERR_INVALID_ARGUMENT, "null config");
  return guarded([&] {
    std::optional<std::filesystem::path> root;
    if (output_root != nullptr && *output_root != '\0') root = output_root;
    const auto dir = fedsim::resolve_output_dir(cfg->parsed, root);
    fedsim::RoundCallback cb;
    if (progress != nullptr) {
      cb = [&](const fedsim::RoundReport& r, std::size_t total) {
        fedsim_round_info info{};
        info.round = r.round;
        info.total_rounds = total;
        info.global_f1 = r.eval.global_f1.value_or(std::numeric_limits<double>::quiet_NaN());
        info.personalization_f1 = r.eval.personalization_f1.mean;
        info.generalization_f1 = r.eval.generalization_f1.mean;
        info.uplink_bytes = r.uplink_bytes;
        info.downlink_bytes = r.downlink_bytes;
        for (std::size_t u : r.units_added) info.units_added += u;
        progress(&info, user);
      };
    }
    fedsim::run_experiment(cfg->parsed, dir, cb);
  });
}

fedsim_status fedsim_compare(const char* const* run_dirs, size_t count, char** per_round_csv,
                             char** best_csv) {
  if (run_dirs == nullptr || per_round_csv == nullptr || best_csv == nullptr) {
    return fail(FEDSIM_ERR_INVALID_ARGUMENT, "null argument");
  }
  *per_round_csv = nullptr;
  *best_csv = nullptr;
  return guarded([&] {
    std::vector<std::filesystem::path> dirs;
    for (size_t i = 0; i < count; ++i) {
      if (run_dirs[i] == nullptr) throw fedsim::Error(fedsim::ErrorKind::kConfig, "null run dir");
      dirs.emplace_back(run_dirs[i]);
    }
    const auto c = fedsim::compare_runs(dirs);
    *per_round_csv = dup_string(c.per_round_csv);
    *best_csv = dup_string(c.best_csv);
  });
}

fedsim_status fedsim_checkpoint_open(const char* path, fedsim_checkpoint** out) {
  if (path == nullptr || out == nullptr) return fail(FEDSIM_ERR_INVALID_ARGUMENT, "null argument");
  *out = nullptr;
  return guarded([&] {
    auto h = std::make_unique<fedsim_checkpoint>();
    h->ckpt = fedsim::load_checkpoint(path);
    *out = h.release();
  });
}

fedsim_status fedsim_checkpoint_describe(const fedsim_checkpoint* ckpt, int as_json, char** out) {
  if (ckpt == nullptr || out == nullptr) return fail(FEDSIM_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] { *out = dup_string(fedsim::describe_checkpoint(ckpt->ckpt, as_json != 0)); });
}

uint32_t fedsim_checkpoint_round(const fedsim_checkpoint* ckpt) {
  return ckpt == nullptr ? 0 : ckpt->ckpt.round;
}

size_t fedsim_checkpoint_parameter_count(const fedsim_checkpoint* ckpt) {
  return ckpt == nullptr ? 0 : ckpt->ckpt.arch.parameter_count();
}

void fedsim_checkpoint_free(fedsim_checkpoint* ckpt) { delete ckpt; }

}  // extern "C"
