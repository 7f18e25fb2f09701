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

// Command-line front end. Links only the C API.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedsim/fedsim.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

int exit_code(fedsim_status s) {
  switch (s) {
    case FEDSIM_OK: return kExitOk;
    case FEDSIM_ERR_CONFIG:
    case FEDSIM_ERR_INVALID_ARGUMENT: return kExitConfig;
    default: return kExitRuntime;
  }
}

int report(fedsim_status s) {
  if (s != FEDSIM_OK) std::fprintf(stderr, "fedsim: error: %s\n", fedsim_last_error());
  return exit_code(s);
}

const char* output_root() {
  const char* root = std::getenv("FEDSIM_OUTPUT_ROOT");
  return (root != nullptr && *root != '\0') ? root : nullptr;
}

std::string fmt_metric(double v) {
  if (std::isnan(v)) return "  n/a ";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void print_progress(const fedsim_round_info* r, void* user) {
  if (*static_cast<bool*>(user)) return;
  std::fprintf(stderr,
               "round %4zu/%zu  global %s  personal %s  general %s  up %llu  down %llu%s\n",
               r->round, r->total_rounds, fmt_metric(r->global_f1).c_str(),
               fmt_metric(r->personalization_f1).c_str(),
               fmt_metric(r->generalization_f1).c_str(),
               static_cast<unsigned long long>(r->uplink_bytes),
               static_cast<unsigned long long>(r->downlink_bytes),
               r->units_added ? ("  +" + std::to_string(r->units_added) + " units").c_str() : "");
}

struct Owned {
  char* s = nullptr;
  ~Owned() { fedsim_string_free(s); }
};

int cmd_run(const std::string& config, const std::vector<std::string>& sets, int parallel,
            const std::string& output, bool quiet, bool dump) {
  fedsim_config* cfg = nullptr;
  fedsim_status s = fedsim_config_load(config.c_str(), &cfg);
  if (s != FEDSIM_OK) return report(s);
  std::vector<std::string> assignments;
  for (const auto& kv : sets) {
    if (kv.find('=') == std::string::npos) {
      std::fprintf(stderr, "fedsim: error: --set expects key=value, got '%s'\n", kv.c_str());
      fedsim_config_free(cfg);
      return kExitConfig;
    }
    assignments.push_back(kv);
  }
  if (parallel > 0) assignments.push_back("engine.parallel_clients=" + std::to_string(parallel));
  if (!output.empty()) assignments.push_back("output.dir=" + output);
  std::vector<const char*> raw;
  for (const auto& a : assignments) raw.push_back(a.c_str());
  s = fedsim_config_set_many(cfg, raw.data(), raw.size());
  if (s == FEDSIM_OK && dump) {
    Owned yaml;
    s = fedsim_config_to_yaml(cfg, &yaml.s);
    if (s == FEDSIM_OK) std::fputs(yaml.s, stdout);
    fedsim_config_free(cfg);
    return report(s);
  }
  Owned dir;
  if (s == FEDSIM_OK) s = fedsim_config_output_dir(cfg, output_root(), &dir.s);
  if (s == FEDSIM_OK) {
    if (!quiet) std::fprintf(stderr, "fedsim: writing to %s\n", dir.s);
    s = fedsim_run(cfg, output_root(), print_progress, &quiet);
  }
  if (s == FEDSIM_OK) std::printf("%s\n", dir.s);
  fedsim_config_free(cfg);
  return report(s);
}

int cmd_compare(const std::vector<std::string>& dirs, const std::string& output, bool best) {
  std::vector<const char*> argv;
  for (const auto& d : dirs) argv.push_back(d.c_str());
  Owned per_round, best_csv;
  const fedsim_status s = fedsim_compare(argv.data(), argv.size(), &per_round.s, &best_csv.s);
  if (s != FEDSIM_OK) return report(s);
  if (!output.empty()) {
    for (const auto& [name, text] : {std::pair<const char*, const char*>{"comparison.csv", per_round.s},
                                     {"best_rounds.csv", best_csv.s}}) {
      const std::string path = output + "/" + name;
      std::ofstream out(path, std::ios::binary);
      out << text;
      if (!out) {
        std::fprintf(stderr, "fedsim: error: cannot write %s\n", path.c_str());
        return kExitRuntime;
      }
    }
  }
  std::fputs(best ? best_csv.s : per_round.s, stdout);
  return kExitOk;
}

int cmd_inspect(const std::string& path, bool json) {
  fedsim_checkpoint* ckpt = nullptr;
  fedsim_status s = fedsim_checkpoint_open(path.c_str(), &ckpt);
  if (s != FEDSIM_OK) return report(s);
  Owned text;
  s = fedsim_checkpoint_describe(ckpt, json ? 1 : 0, &text.s);
  if (s == FEDSIM_OK) std::fputs(text.s, stdout);
  fedsim_checkpoint_free(ckpt);
  return report(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning simulator"};
  app.require_subcommand(1);
  app.set_version_flag("--version", fedsim_version());
  app.footer("Relative output directories resolve against $FEDSIM_OUTPUT_ROOT when set.\n"
             "Exit codes: 0 ok, 1 configuration error, 2 runtime error.");

  std::string config, output, compare_out, ckpt;
  std::vector<std::string> sets, dirs;
  int parallel = 0;
  bool quiet = false, dump = false, best = false, json = false;

  auto* run = app.add_subcommand("run", "Run one experiment from a YAML config");
  run->add_option("config", config, "Experiment config file")->required();
  run->add_option("--set", sets, "Override a config value, e.g. --set strategy.name=fedavg");
  run->add_option("--parallel-clients", parallel, "Clients trained concurrently")
      ->check(CLI::PositiveNumber);
  run->add_option("--output-dir", output, "Override output.dir");
  run->add_flag("-q,--quiet", quiet, "No per-round progress");
  run->add_flag("--print-config", dump, "Print the resolved config and exit");

  auto* cmp = app.add_subcommand("compare", "Align rounds.csv of several runs");
  cmp->add_option("dirs", dirs, "Run directories")->required()->expected(2, -1);
  cmp->add_option("-o,--output", compare_out, "Directory for comparison.csv and best_rounds.csv");
  cmp->add_flag("--best", best, "Print the best-round table instead of the per-round table");

  auto* insp = app.add_subcommand("inspect", "Describe a checkpoint file");
  insp->add_option("checkpoint", ckpt, "Checkpoint path")->required();
  insp->add_flag("--json", json, "JSON output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  if (run->parsed()) return cmd_run(config, sets, parallel, output, quiet, dump);
  if (cmp->parsed()) return cmd_compare(dirs, compare_out, best);
  return cmd_inspect(ckpt, json);
}
