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

/* Exercises the shared library through its C header only. */
#include <math.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "fedsim/fedsim.h"

static int failures = 0;

#define EXPECT(cond)                                                  \
  do {                                                                \
    if (!(cond)) {                                                    \
      fprintf(stderr, "%s:%d: expected %s\n", __FILE__, __LINE__, #cond); \
      ++failures;                                                     \
    }                                                                 \
  } while (0)

static const char* kConfig =
    "name: capi\n"
    "rounds: 2\n"
    "arch: 4-3C_2M_8D\n"
    "strategy: {name: fedavg}\n"
    "training: {local_epochs: 1, batch_size: 16}\n"
    "dataset:\n"
    "  synthetic: {clients: 2, classes: 3, samples_per_client: 40, window_length: 8, channels: 2}\n";

static size_t rounds_seen = 0;

static void on_round(const fedsim_round_info* info, void* user) {
  size_t* total = (size_t*)user;
  *total = info->total_rounds;
  ++rounds_seen;
  EXPECT(info->round == rounds_seen);
  EXPECT(!isnan(info->global_f1));
  EXPECT(info->uplink_bytes > 0);
}

int main(int argc, char** argv) {
  const char* root = argc > 1 ? argv[1] : "capi_out";
  fedsim_config* cfg = NULL;
  char* text = NULL;
  char* dir = NULL;

  EXPECT(strcmp(fedsim_version(), "1.0.0") == 0);

  EXPECT(fedsim_config_parse("roundz: 1\n", &cfg) == FEDSIM_ERR_CONFIG);
  EXPECT(cfg == NULL);
  EXPECT(strstr(fedsim_last_error(), "roundz") != NULL);
  EXPECT(fedsim_config_parse(NULL, &cfg) == FEDSIM_ERR_INVALID_ARGUMENT);
  EXPECT(fedsim_config_load("/nonexistent/fedsim.yaml", &cfg) != FEDSIM_OK);

  EXPECT(fedsim_config_parse(kConfig, &cfg) == FEDSIM_OK);
  EXPECT(strcmp(fedsim_last_error(), "") == 0);
  EXPECT(fedsim_config_set(cfg, "rounds", "x") == FEDSIM_ERR_CONFIG);
  EXPECT(fedsim_config_set(cfg, "output.dir", "run_a") == FEDSIM_OK);
  {
    /* The new arch alone does not fit the current window length. */
    const char* grow[] = {"dataset.synthetic.window_length=16", "arch=8-3C_2M_2-4C_8D"};
    const char* bad[] = {"rounds=4", "arch=4Q"};
    EXPECT(fedsim_config_set(cfg, "arch", "8-3C_2M_2-4C_8D") == FEDSIM_ERR_CONFIG);
    EXPECT(fedsim_config_set_many(cfg, bad, 2) == FEDSIM_ERR_CONFIG);
    EXPECT(fedsim_config_set_many(NULL, grow, 2) == FEDSIM_ERR_INVALID_ARGUMENT);
    EXPECT(fedsim_config_set_many(cfg, grow, 2) == FEDSIM_OK);
    EXPECT(fedsim_config_to_yaml(cfg, &text) == FEDSIM_OK);
    EXPECT(strstr(text, "rounds: 4") == NULL);
    EXPECT(strstr(text, "window_length: 16") != NULL);
    fedsim_string_free(text);
    text = NULL;
    const char* restore[] = {"arch=4-3C_2M_8D", "dataset.synthetic.window_length=8"};
    EXPECT(fedsim_config_set_many(cfg, restore, 2) == FEDSIM_OK);
  }
  EXPECT(fedsim_config_to_yaml(cfg, &text) == FEDSIM_OK);
  EXPECT(strstr(text, "run_a") != NULL);
  fedsim_string_free(text);

  EXPECT(fedsim_config_output_dir(cfg, root, &dir) == FEDSIM_OK);
  EXPECT(strstr(dir, "run_a") != NULL);

  size_t total = 0;
  EXPECT(fedsim_run(cfg, root, on_round, &total) == FEDSIM_OK);
  EXPECT(total == 2);
  EXPECT(rounds_seen == 2);

  EXPECT(fedsim_config_set(cfg, "output.dir", "run_b") == FEDSIM_OK);
  EXPECT(fedsim_run(cfg, root, NULL, NULL) == FEDSIM_OK);

  char dir_b[4096];
  snprintf(dir_b, sizeof dir_b, "%s/run_b", root);
  const char* dirs[2] = {dir, dir_b};
  char* per_round = NULL;
  char* best = NULL;
  EXPECT(fedsim_compare(dirs, 2, &per_round, &best) == FEDSIM_OK);
  EXPECT(per_round != NULL && strncmp(per_round, "round,", 6) == 0);
  EXPECT(best != NULL && strstr(best, "best_round") != NULL);
  fedsim_string_free(per_round);
  fedsim_string_free(best);
  EXPECT(fedsim_compare(dirs, 1, &per_round, &best) == FEDSIM_ERR_CONFIG);

  char ckpt_path[4096];
  snprintf(ckpt_path, sizeof ckpt_path, "%s/checkpoints/server_final.fsck", dir);
  fedsim_checkpoint* ckpt = NULL;
  EXPECT(fedsim_checkpoint_open(ckpt_path, &ckpt) == FEDSIM_OK);
  EXPECT(fedsim_checkpoint_round(ckpt) == 2);
  EXPECT(fedsim_checkpoint_parameter_count(ckpt) == 4 * 6 + 4 + 8 * 12 + 8 + 3 * 8 + 3);
  EXPECT(fedsim_checkpoint_describe(ckpt, 1, &text) == FEDSIM_OK);
  EXPECT(strstr(text, "\"round\"") != NULL);
  fedsim_string_free(text);
  fedsim_checkpoint_free(ckpt);

  EXPECT(fedsim_checkpoint_open(kConfig, &ckpt) == FEDSIM_ERR_IO);
  snprintf(ckpt_path, sizeof ckpt_path, "%s/rounds.csv", dir);
  EXPECT(fedsim_checkpoint_open(ckpt_path, &ckpt) == FEDSIM_ERR_FORMAT);

  fedsim_string_free(dir);
  fedsim_config_free(cfg);
  fedsim_config_free(NULL);
  fedsim_checkpoint_free(NULL);

  if (failures) fprintf(stderr, "%d C API check(s) failed\n", failures);
  return failures ? 1 : 0;
}
