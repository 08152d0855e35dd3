// Copyright 2026 The dpblo Authors
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

// Command-line experiment runner.
//
//   dpblo run <config.json>        sweep a mechanism, write results.csv and summary.csv
//   dpblo audit <config.json>      run the audit battery, write audits.json
//   dpblo constants <assumptions>  print the derived constants
//
// Exit codes: 0 success, 1 config error, 2 audit failure, 3 runtime failure.

#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "dpblo/experiment.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kAuditFailure = 2;
constexpr int kRuntimeFailure = 3;

dpblo::ExperimentConfig load(const std::string& path, const std::optional<std::uint64_t>& seed,
                             const std::optional<std::string>& out) {
  dpblo::ExperimentConfig config = dpblo::load_config(path);
  if (seed) config.seed = *seed;
  if (out) config.output_dir = *out;
  return config;
}

int run(const std::string& path, int workers, const std::optional<std::uint64_t>& seed,
        const std::optional<std::string>& out) {
  const dpblo::ExperimentConfig config = load(path, seed, out);
  const dpblo::RunSummary summary = dpblo::run_experiment(config, workers);
  dpblo::write_run(config, summary, config.output_dir);
  std::cout << "wrote " << summary.rows.size() << " trials over " << summary.cells.size()
            << " cells to " << config.output_dir << "\n";
  if (summary.failed_trials > 0) {
    std::cerr << summary.failed_trials << " trials failed; see the error column\n";
  }
  return kOk;
}

int audit(const std::string& path, const std::optional<std::uint64_t>& seed,
          const std::optional<std::string>& out) {
  const dpblo::ExperimentConfig config = load(path, seed, out);
  const auto reports = dpblo::run_audits(config);
  dpblo::write_audits(reports, config.output_dir);
  std::cout << dpblo::audit_table(reports);
  for (const auto& r : reports) {
    if (r.skipped) std::cerr << "warning: skipped " << r.name << ": " << r.note << "\n";
  }
  return dpblo::audits_as_expected(reports) ? kOk : kAuditFailure;
}

int constants(const std::string& path, int n) {
  std::ifstream in(path);
  if (!in) throw dpblo::ConfigError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw dpblo::ConfigError(std::string("not valid JSON: ") + e.what());
  }
  const auto a = j.get<dpblo::AssumptionConstants>();
  nlohmann::json out = dpblo::derive_constants(a, n);
  out["n"] = n;
  std::cout << out.dump(2) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentially private bilevel optimization experiments"};
  app.require_subcommand(1);
  int workers = 1;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  // Global flags are accepted before or after the subcommand.
  auto add_globals = [&](CLI::App* a) {
    a->add_option("--workers", workers, "parallel trial workers")->check(CLI::PositiveNumber);
    a->add_option("--seed", seed, "override the config seed");
    a->add_option("--out", out, "override the output directory");
  };
  add_globals(&app);

  std::string config_path;
  auto* run_cmd = app.add_subcommand("run", "run an experiment sweep");
  run_cmd->add_option("config", config_path, "experiment config")->required();
  auto* audit_cmd = app.add_subcommand("audit", "run the audit battery");
  audit_cmd->add_option("config", config_path, "experiment config")->required();
  std::string assumptions_path;
  int n = 1;
  auto* const_cmd = app.add_subcommand("constants", "print derived constants");
  const_cmd->add_option("assumptions", assumptions_path, "assumption constants JSON")->required();
  const_cmd->add_option("--n", n, "dataset size")->check(CLI::PositiveNumber);
  for (auto* sub : {run_cmd, audit_cmd, const_cmd}) add_globals(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigError;
  }

  try {
    if (*run_cmd) return run(config_path, workers, seed, out);
    if (*audit_cmd) return audit(config_path, seed, out);
    return constants(assumptions_path, n);
  } catch (const dpblo::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return kRuntimeFailure;
  }
}
