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

/* C interface to the fedsim federated learning simulator. All functions are
 * thread-compatible; error messages are kept per thread. */
#ifndef FEDSIM_FEDSIM_H_
#define FEDSIM_FEDSIM_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define FEDSIM_API __declspec(dllexport)
#else
#define FEDSIM_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum fedsim_status {
  FEDSIM_OK = 0,
  FEDSIM_ERR_CONFIG = 1,
  FEDSIM_ERR_RUNTIME = 2,
  FEDSIM_ERR_INVALID_ARGUMENT = 3,
  FEDSIM_ERR_IO = 4,
  FEDSIM_ERR_FORMAT = 5,
  FEDSIM_ERR_SHAPE = 6,
  FEDSIM_ERR_DATA = 7,
  FEDSIM_ERR_NUMERIC = 8,
  FEDSIM_ERR_AGGREGATION = 9
} fedsim_status;

typedef struct fedsim_config fedsim_config;
typedef struct fedsim_checkpoint fedsim_checkpoint;

/* Per-round progress. Metrics that do not apply are NaN. */
typedef struct fedsim_round_info {
  size_t round;
  size_t total_rounds;
  double global_f1;
  double personalization_f1;
  double generalization_f1;
  uint64_t uplink_bytes;
  uint64_t downlink_bytes;
  size_t units_added;
} fedsim_round_info;

typedef void (*fedsim_progress_fn)(const fedsim_round_info* info, void* user);

FEDSIM_API const char* fedsim_version(void);

/* Message of the last failed call on this thread, or "" if none. */
FEDSIM_API const char* fedsim_last_error(void);

/* Strings returned through char** out-parameters. */
FEDSIM_API void fedsim_string_free(char* s);

FEDSIM_API fedsim_status fedsim_config_load(const char* path, fedsim_config** out);
FEDSIM_API fedsim_status fedsim_config_parse(const char* yaml, fedsim_config** out);
/* Applies "dotted.key" = value (YAML scalar or flow syntax) and revalidates. */
FEDSIM_API fedsim_status fedsim_config_set(fedsim_config* cfg, const char* key, const char* value);
/* Applies several "dotted.key=value" assignments, then revalidates once. On
 * failure the config is unchanged. */
FEDSIM_API fedsim_status fedsim_config_set_many(fedsim_config* cfg, const char* const* assignments,
                                                size_t count);
FEDSIM_API fedsim_status fedsim_config_to_yaml(const fedsim_config* cfg, char** out);
/* Output directory of a run; relative paths resolve against output_root when
 * it is non-null and non-empty. */
FEDSIM_API fedsim_status fedsim_config_output_dir(const fedsim_config* cfg,
                                                  const char* output_root, char** out);
FEDSIM_API void fedsim_config_free(fedsim_config* cfg);

FEDSIM_API fedsim_status fedsim_run(const fedsim_config* cfg, const char* output_root,
                                    fedsim_progress_fn progress, void* user);

/* Per-round comparison and best-round table, both as CSV text. */
FEDSIM_API fedsim_status fedsim_compare(const char* const* run_dirs, size_t count,
                                        char** per_round_csv, char** best_csv);

FEDSIM_API fedsim_status fedsim_checkpoint_open(const char* path, fedsim_checkpoint** out);
FEDSIM_API fedsim_status fedsim_checkpoint_describe(const fedsim_checkpoint* ckpt, int as_json,
                                                    char** out);
FEDSIM_API uint32_t fedsim_checkpoint_round(const fedsim_checkpoint* ckpt);
FEDSIM_API size_t fedsim_checkpoint_parameter_count(const fedsim_checkpoint* ckpt);
FEDSIM_API void fedsim_checkpoint_free(fedsim_checkpoint* ckpt);

#ifdef __cplusplus
}
#endif

#endif /* FEDSIM_FEDSIM_H_ */
