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

#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpblo/audit.hpp"
#include "dpblo/instances.hpp"
#include "dpblo/mechanisms.hpp"

namespace dpblo {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Strict config parsing: every key must be consumed.

namespace internal {

class StrictObject {
 public:
  StrictObject(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
  }
  StrictObject(const StrictObject&) = delete;
  StrictObject& operator=(const StrictObject&) = delete;

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& at(const std::string& key) {
    if (!has(key)) throw ConfigError(where_ + ": missing key '" + key + "'");
    return j_.at(key);
  }

  double number(const std::string& key) {
    const json& v = at(key);
    if (!v.is_number()) throw ConfigError(where_ + "." + key + " must be a number");
    return v.get<double>();
  }
  std::optional<double> number_or(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return number(key);
  }
  double number_or(const std::string& key, double fallback) {
    return number_or(key).value_or(fallback);
  }

  std::int64_t integer(const std::string& key) {
    const json& v = at(key);
    if (!v.is_number_integer()) throw ConfigError(where_ + "." + key + " must be an integer");
    return v.get<std::int64_t>();
  }
  std::optional<std::int64_t> integer_or(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return integer(key);
  }

  bool boolean_or(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(where_ + "." + key + " must be a boolean");
    return v.get<bool>();
  }

  std::string string(const std::string& key) {
    const json& v = at(key);
    if (!v.is_string()) throw ConfigError(where_ + "." + key + " must be a string");
    return v.get<std::string>();
  }
  std::string string_or(const std::string& key, const std::string& fallback) {
    return has(key) ? string(key) : fallback;
  }

  const std::string& where() const { return where_; }

  // Throws on any key that was never asked for.
  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) {
        throw ConfigError(where_ + ": unknown key '" + item.key() + "'");
      }
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline SamplerOptions parse_sampler(const json& j, const std::string& where) {
  StrictObject o(j, where);
  SamplerOptions s;
  if (auto v = o.integer_or("restart_cap")) s.restart_cap = static_cast<int>(*v);
  s.k_mix = o.number_or("k_mix", s.k_mix);
  s.gauge_weight = o.number_or("gauge_weight");
  if (auto v = o.integer_or("min_cells_per_axis")) s.min_cells_per_axis = static_cast<int>(*v);
  if (auto v = o.integer_or("walk_steps")) s.walk_steps = *v;
  if (auto v = o.integer_or("state_cap")) s.state_cap = *v;
  o.finish();
  if (s.restart_cap < 1 || !(s.k_mix > 0.0) || s.min_cells_per_axis < 1) {
    throw ConfigError(where + ": sampler options out of range");
  }
  return s;
}

inline Alg1Options parse_alg1(StrictObject& o) {
  Alg1Options a;
  a.T = o.integer_or("T");
  a.eta = o.number_or("eta");
  a.alpha = o.number_or("alpha");
  a.sigma = o.number_or("sigma");
  a.unsafe = o.boolean_or("unsafe", false);
  a.gap_upper_bound = o.number_or("gap_upper_bound");
  a.inner_alpha_when_unconstrained =
      o.number_or("inner_alpha_when_unconstrained", a.inner_alpha_when_unconstrained);
  a.keep_trajectory = o.boolean_or("keep_trajectory", false);
  return a;
}

}  // namespace internal

// ---------------------------------------------------------------------------
// Config

struct InstanceSpec {
  std::string name;
  json params = json::object();
};

struct MechanismSpec {
  std::string name;
  json params = json::object();
};

struct AuditSpec {
  std::vector<std::string> checks = {"sensitivity", "exact_dp", "sampler_lemmas",
                                     "negative_controls"};
  int n = 4;
  int min_cells_per_axis = 16;
  int swap_samples = 64;
  int query_points = 4;
};

struct ExperimentConfig {
  InstanceSpec instance;
  MechanismSpec mechanism;
  PrivacyBudget budget;
  std::map<std::string, std::vector<double>> sweep;
  int trials_per_cell = 1;
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  AuditSpec audit;
};

inline const std::vector<std::string>& instance_names() {
  static const std::vector<std::string> names = {"hard", "quadratic", "ridge"};
  return names;
}
inline const std::vector<std::string>& mechanism_names() {
  static const std::vector<std::string> names = {"exponential", "regularized_exponential",
                                                 "grad_norm_exponential", "dp_second_order_gd",
                                                 "warm_start"};
  return names;
}

// One sweep point.
struct Cell {
  int n = 0;
  std::optional<int> d;
  double epsilon = 0;
  double delta = 0;

  std::uint64_t key() const {
    auto bits = [](double v) {
      std::uint64_t b;
      std::memcpy(&b, &v, sizeof b);
      return b;
    };
    std::uint64_t h = mix64(static_cast<std::uint64_t>(n));
    h = mix64(h ^ (d ? static_cast<std::uint64_t>(*d) + 1 : 0));
    h = mix64(h ^ bits(epsilon));
    return mix64(h ^ bits(delta));
  }
};

inline InstanceFixture build_instance(const InstanceSpec& spec, std::optional<int> d_axis) {
  internal::StrictObject o(spec.params, "instance.params");
  InstanceFixture fx;
  if (spec.name == "hard") {
    const double L_fy = o.number_or("L_fy", 1.0);
    const double mu_g = o.number_or("mu_g", 1.0);
    const double D_x = o.number_or("D_x", 2.0);
    const double D_y = o.number_or("D_y", 1.0);
    const int d = d_axis.value_or(static_cast<int>(o.integer_or("d").value_or(1)));
    if (d_axis) o.has("d");
    fx = make_hard_instance(L_fy, mu_g, D_x, D_y, d);
  } else if (spec.name == "quadratic") {
    QuadraticOptions q;
    q.radius_x = o.number_or("radius_x", q.radius_x);
    q.radius_a = o.number_or("radius_a", q.radius_a);
    q.radius_b = o.number_or("radius_b", q.radius_b);
    q.radius_c = o.number_or("radius_c", q.radius_c);
    q.coupling = o.number_or("coupling", q.coupling);
    q.zero_b = o.boolean_or("zero_b", q.zero_b);
    const int d_x = d_axis.value_or(static_cast<int>(o.integer_or("d_x").value_or(2)));
    if (d_axis) o.has("d_x");
    const int d_y = static_cast<int>(o.integer_or("d_y").value_or(2));
    const auto seed = static_cast<std::uint64_t>(o.integer_or("instance_seed").value_or(1));
    fx = make_quadratic_instance(d_x, d_y, seed, q);
  } else if (spec.name == "ridge") {
    RidgeOptions r;
    r.floor = o.number_or("floor", r.floor);
    r.x_low = o.number_or("x_low", r.x_low);
    r.x_high = o.number_or("x_high", r.x_high);
    r.label_noise = o.number_or("label_noise", r.label_noise);
    r.target_x = o.number_or("target_x", r.target_x);
    const std::string validation = o.string_or("validation", "interior_target");
    if (validation == "duplicate") {
      r.validation = RidgeValidation::kDuplicate;
    } else if (validation != "interior_target") {
      throw ConfigError("instance.params.validation must be interior_target or duplicate");
    }
    const int dim = d_axis.value_or(static_cast<int>(o.integer_or("feature_dim").value_or(2)));
    if (d_axis) o.has("feature_dim");
    const auto seed = static_cast<std::uint64_t>(o.integer_or("instance_seed").value_or(1));
    fx = make_ridge_hyperparam_instance(dim, seed, r);
  } else {
    throw ConfigError("unknown instance: " + spec.name);
  }
  o.finish();
  return fx;
}

// Validates mechanism params without running anything.
inline void check_mechanism_params(const MechanismSpec& spec);

inline MechanismResult run_mechanism(const MechanismSpec& spec, const InstanceFixture& fx,
                                     const Dataset& data, const PrivacyBudget& budget,
                                     std::uint64_t seed) {
  internal::StrictObject o(spec.params, "mechanism.params");
  const BilevelProblem& p = fx.problem;
  const AssumptionConstants& a = fx.constants;
  auto sampler = [&](const std::string& key) {
    return o.has(key) ? internal::parse_sampler(o.at(key), "mechanism.params." + key)
                      : SamplerOptions{};
  };
  MechanismResult r;
  if (spec.name == "exponential") {
    ExpMechOptions e;
    e.xi = o.number_or("xi");
    e.zeta = o.number_or("zeta");
    e.sampler = sampler("sampler");
    o.finish();
    r = exponential_mechanism(p, data, a, budget.epsilon, seed, e);
  } else if (spec.name == "regularized_exponential") {
    RegExpMechOptions e;
    const std::string mode = o.string_or("mode", "erm");
    if (mode == "population") {
      e.mode = RegMode::kPopulation;
    } else if (mode != "erm") {
      throw ConfigError("mechanism.params.mode must be erm or population");
    }
    e.k_reg = o.number_or("k_reg", e.k_reg);
    e.xi = o.number_or("xi");
    e.zeta = o.number_or("zeta");
    e.sampler = sampler("sampler");
    o.finish();
    r = regularized_exp_mechanism(p, data, a, budget.epsilon, budget.delta, seed, e);
  } else if (spec.name == "grad_norm_exponential") {
    GradNormOptions e;
    e.xi = o.number_or("xi");
    e.zeta = o.number_or("zeta");
    e.inner_alpha_when_exact = o.number_or("inner_alpha_when_exact", e.inner_alpha_when_exact);
    e.sampler = sampler("sampler");
    o.finish();
    r = grad_norm_exp_mechanism(p, data, a, budget.epsilon, seed, e);
  } else if (spec.name == "dp_second_order_gd") {
    Alg1Options e = internal::parse_alg1(o);
    Vector x0 = p.domain_x.center();
    if (o.has("x0")) {
      const auto v = o.at("x0").get<std::vector<double>>();
      if (static_cast<int>(v.size()) != p.dim_x) throw ConfigError("mechanism.params.x0 has the wrong size");
      x0 = from_std(v);
    }
    o.finish();
    r = dp_second_order_gd(p, data, a, budget.epsilon, budget.delta, x0, seed, e);
  } else if (spec.name == "warm_start") {
    WarmStartOptions e;
    if (o.has("stage_a")) {
      internal::StrictObject sa(o.at("stage_a"), "mechanism.params.stage_a");
      e.stage_a.xi = sa.number_or("xi");
      e.stage_a.zeta = sa.number_or("zeta");
      if (sa.has("sampler")) e.stage_a.sampler = internal::parse_sampler(sa.at("sampler"), "stage_a.sampler");
      sa.finish();
    }
    if (o.has("stage_b")) {
      internal::StrictObject sb(o.at("stage_b"), "mechanism.params.stage_b");
      e.stage_b = internal::parse_alg1(sb);
      sb.finish();
    }
    o.finish();
    r = warm_start(p, data, a, budget.epsilon, budget.delta, seed, e);
  } else {
    throw ConfigError("unknown mechanism: " + spec.name);
  }
  return r;
}

inline ExperimentConfig parse_config(const json& j) {
  internal::StrictObject o(j, "config");
  ExperimentConfig c;
  {
    internal::StrictObject inst(o.at("instance"), "instance");
    c.instance.name = inst.string("name");
    if (inst.has("params")) c.instance.params = inst.at("params");
    inst.finish();
  }
  {
    internal::StrictObject mech(o.at("mechanism"), "mechanism");
    c.mechanism.name = mech.string("name");
    if (mech.has("params")) c.mechanism.params = mech.at("params");
    mech.finish();
  }
  if (std::find(instance_names().begin(), instance_names().end(), c.instance.name) ==
      instance_names().end()) {
    throw ConfigError("unknown instance: " + c.instance.name);
  }
  if (std::find(mechanism_names().begin(), mechanism_names().end(), c.mechanism.name) ==
      mechanism_names().end()) {
    throw ConfigError("unknown mechanism: " + c.mechanism.name);
  }
  {
    internal::StrictObject b(o.at("budget"), "budget");
    c.budget.epsilon = b.number("epsilon");
    c.budget.delta = b.number_or("delta", 0.0);
    b.finish();
  }
  if (o.has("sweep")) {
    internal::StrictObject s(o.at("sweep"), "sweep");
    for (const char* axis : {"n", "d", "epsilon", "delta"}) {
      if (!s.has(axis)) continue;
      const json& values = s.at(axis);
      if (!values.is_array() || values.empty()) {
        throw ConfigError(std::string("sweep.") + axis + " must be a nonempty array");
      }
      for (const auto& v : values) {
        if (!v.is_number()) throw ConfigError(std::string("sweep.") + axis + " holds a non-number");
        c.sweep[axis].push_back(v.get<double>());
      }
    }
    s.finish();
  }
  if (!c.sweep.count("n")) throw ConfigError("sweep.n is required");
  if (auto t = o.integer_or("trials_per_cell")) c.trials_per_cell = static_cast<int>(*t);
  if (c.trials_per_cell < 1) throw ConfigError("trials_per_cell must be >= 1");
  if (o.has("seed")) {
    const json& s = o.at("seed");
    if (!s.is_number_integer()) throw ConfigError("seed must be an integer");
    c.seed = s.get<std::uint64_t>();
  }
  c.output_dir = o.string_or("output_dir", c.output_dir);
  if (o.has("audit")) {
    internal::StrictObject a(o.at("audit"), "audit");
    if (a.has("checks")) c.audit.checks = a.at("checks").get<std::vector<std::string>>();
    for (const auto& check : c.audit.checks) {
      if (check != "sensitivity" && check != "exact_dp" && check != "sampler_lemmas" &&
          check != "negative_controls") {
        throw ConfigError("unknown audit check: " + check);
      }
    }
    if (auto v = a.integer_or("n")) c.audit.n = static_cast<int>(*v);
    if (auto v = a.integer_or("min_cells_per_axis")) c.audit.min_cells_per_axis = static_cast<int>(*v);
    if (auto v = a.integer_or("swap_samples")) c.audit.swap_samples = static_cast<int>(*v);
    if (auto v = a.integer_or("query_points")) c.audit.query_points = static_cast<int>(*v);
    a.finish();
    if (c.audit.n < 1 || c.audit.min_cells_per_axis < 1 || c.audit.swap_samples < 1 ||
        c.audit.query_points < 1) {
      throw ConfigError("audit sizes must be >= 1");
    }
  }
  o.finish();

  // Instance and mechanism params are checked here so bad configs fail before any work.
  for (const auto& cell_d : c.sweep.count("d") ? c.sweep.at("d") : std::vector<double>{-1.0}) {
    const std::optional<int> d = cell_d < 0 ? std::nullopt : std::optional<int>(int(cell_d));
    if (d && (*d < 1 || double(*d) != cell_d)) throw ConfigError("sweep.d values must be positive integers");
    build_instance(c.instance, d);
  }
  check_mechanism_params(c.mechanism);
  for (double n : c.sweep.at("n")) {
    if (n < 1 || n != std::floor(n)) throw ConfigError("sweep.n values must be positive integers");
  }
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

inline void check_mechanism_params(const MechanismSpec& spec) {
  internal::StrictObject o(spec.params, "mechanism.params");
  if (spec.name == "exponential" || spec.name == "grad_norm_exponential" ||
      spec.name == "regularized_exponential") {
    o.number_or("xi");
    o.number_or("zeta");
    if (o.has("sampler")) internal::parse_sampler(o.at("sampler"), "mechanism.params.sampler");
    if (spec.name == "grad_norm_exponential") o.number_or("inner_alpha_when_exact");
    if (spec.name == "regularized_exponential") {
      const std::string mode = o.string_or("mode", "erm");
      if (mode != "erm" && mode != "population") {
        throw ConfigError("mechanism.params.mode must be erm or population");
      }
      o.number_or("k_reg");
    }
  } else if (spec.name == "dp_second_order_gd") {
    internal::parse_alg1(o);
    if (o.has("x0")) {
      if (!o.at("x0").is_array()) throw ConfigError("mechanism.params.x0 must be an array");
    }
  } else if (spec.name == "warm_start") {
    if (o.has("stage_a")) {
      internal::StrictObject sa(o.at("stage_a"), "mechanism.params.stage_a");
      sa.number_or("xi");
      sa.number_or("zeta");
      if (sa.has("sampler")) internal::parse_sampler(sa.at("sampler"), "stage_a.sampler");
      sa.finish();
    }
    if (o.has("stage_b")) {
      internal::StrictObject sb(o.at("stage_b"), "mechanism.params.stage_b");
      internal::parse_alg1(sb);
      sb.finish();
    }
  }
  o.finish();
}

inline std::vector<Cell> sweep_cells(const ExperimentConfig& c) {
  auto axis = [&](const char* name, double fallback) {
    return c.sweep.count(name) ? c.sweep.at(name) : std::vector<double>{fallback};
  };
  std::vector<Cell> cells;
  for (double n : axis("n", 1)) {
    for (double d : axis("d", -1)) {
      for (double eps : axis("epsilon", c.budget.epsilon)) {
        for (double delta : axis("delta", c.budget.delta)) {
          Cell cell;
          cell.n = static_cast<int>(n);
          if (d >= 0) cell.d = static_cast<int>(d);
          cell.epsilon = eps;
          cell.delta = delta;
          cells.push_back(cell);
        }
      }
    }
  }
  return cells;
}

// ---------------------------------------------------------------------------
// Runs

struct TrialRow {
  std::size_t cell = 0;
  int trial = 0;
  std::uint64_t seed = 0;
  Cell axes;
  int d = 0;
  bool ok = false;
  std::string error;
  double excess_risk = std::numeric_limits<double>::quiet_NaN();
  double grad_norm = std::numeric_limits<double>::quiet_NaN();
  PrivacyBudget spent;
  bool dp_valid = false;
  std::map<std::string, double> ledger;
};

// Ledger keys flattened into the fixed results.csv columns.
inline const std::vector<std::string>& ledger_columns() {
  static const std::vector<std::string> cols = {"s",     "G",   "k",     "mu_reg", "sigma",
                                                "T",     "eta", "alpha", "zeta",   "xi"};
  return cols;
}

inline TrialRow run_trial(const ExperimentConfig& c, const Cell& cell, std::size_t cell_index,
                          int trial) {
  TrialRow row;
  row.cell = cell_index;
  row.trial = trial;
  row.axes = cell;
  row.seed = derive_seed(c.seed, cell.key(), static_cast<std::uint64_t>(trial));
  try {
    const InstanceFixture fx = build_instance(c.instance, cell.d);
    row.d = fx.problem.dim_x;
    CounterRng data_rng = CounterRng(row.seed).split(1);
    const Dataset data = fx.sample_dataset(cell.n, data_rng);
    const MechanismResult r =
        run_mechanism(c.mechanism, fx, data, {cell.epsilon, cell.delta}, mix64(row.seed));
    if (const auto best = fx.phi_star(data)) row.excess_risk = fx.phi(r.x_out, data) - *best;
    row.grad_norm = fx.grad_phi(r.x_out, data).norm();
    row.spent = r.budget_spent;
    row.dp_valid = r.ledger.dp_valid;
    // Warm start reports the stage-B schedule.
    const Ledger& l = r.ledger.stages.empty() ? r.ledger : r.ledger.stages.back();
    row.ledger = l.params;
    if (!r.ledger.stages.empty()) {
      for (const auto& [k, v] : r.ledger.stages.front().params) {
        if (k == "s" || k == "zeta" || k == "xi") row.ledger[k] = v;
      }
    }
    row.ok = true;
  } catch (const std::exception& e) {
    row.error = e.what();
  }
  return row;
}

namespace internal {

inline std::string fmt(double v) {
  if (std::isnan(v)) return "";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

}  // namespace internal

inline std::string results_header() {
  std::string h =
      "cell,trial,seed,n,d,epsilon,delta,instance,mechanism,status,error,excess_risk,grad_norm,"
      "spent_epsilon,spent_delta,dp_valid";
  for (const auto& col : ledger_columns()) h += ",ledger_" + col;
  return h;
}

inline std::string results_line(const ExperimentConfig& c, const TrialRow& r) {
  using internal::fmt;
  std::ostringstream s;
  s << r.cell << ',' << r.trial << ',' << r.seed << ',' << r.axes.n << ','
    << (r.d > 0 ? std::to_string(r.d) : "") << ',' << fmt(r.axes.epsilon) << ','
    << fmt(r.axes.delta) << ',' << c.instance.name << ',' << c.mechanism.name << ','
    << (r.ok ? "ok" : "error") << ',' << internal::csv_field(r.error) << ','
    << fmt(r.excess_risk) << ',' << fmt(r.grad_norm) << ',' << (r.ok ? fmt(r.spent.epsilon) : "")
    << ',' << (r.ok ? fmt(r.spent.delta) : "") << ',' << (r.ok ? (r.dp_valid ? "1" : "0") : "");
  for (const auto& col : ledger_columns()) {
    const auto it = r.ledger.find(col);
    s << ',' << (it == r.ledger.end() ? "" : fmt(it->second));
  }
  return s.str();
}

struct CellSummary {
  Cell axes;
  int d = 0;
  int trials = 0;
  int ok_trials = 0;
  double mean_excess_risk = std::numeric_limits<double>::quiet_NaN();
  double stderr_excess_risk = std::numeric_limits<double>::quiet_NaN();
  double mean_grad_norm = std::numeric_limits<double>::quiet_NaN();
  double stderr_grad_norm = std::numeric_limits<double>::quiet_NaN();
};

inline std::pair<double, double> mean_and_stderr(const std::vector<double>& v) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (v.empty()) return {nan, nan};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= v.size();
  if (v.size() < 2) return {mean, nan};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (v.size() - 1) / v.size())};
}

struct RunSummary {
  std::vector<TrialRow> rows;
  std::vector<CellSummary> cells;
  int failed_trials = 0;
};

inline RunSummary run_experiment(const ExperimentConfig& c, int workers = 1) {
  const std::vector<Cell> cells = sweep_cells(c);
  const std::size_t jobs = cells.size() * static_cast<std::size_t>(c.trials_per_cell);
  RunSummary out;
  out.rows.resize(jobs);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t job = next++; job < jobs; job = next++) {
      const std::size_t cell = job / c.trials_per_cell;
      const int trial = static_cast<int>(job % c.trials_per_cell);
      out.rows[job] = run_trial(c, cells[cell], cell, trial);
    }
  };
  const int threads = std::max(1, workers);
  if (threads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }

  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    CellSummary s;
    s.axes = cells[ci];
    std::vector<double> risks, norms;
    for (int t = 0; t < c.trials_per_cell; ++t) {
      const TrialRow& r = out.rows[ci * c.trials_per_cell + t];
      ++s.trials;
      if (r.d > 0) s.d = r.d;
      if (!r.ok) continue;
      ++s.ok_trials;
      if (std::isfinite(r.excess_risk)) risks.push_back(r.excess_risk);
      if (std::isfinite(r.grad_norm)) norms.push_back(r.grad_norm);
    }
    std::tie(s.mean_excess_risk, s.stderr_excess_risk) = mean_and_stderr(risks);
    std::tie(s.mean_grad_norm, s.stderr_grad_norm) = mean_and_stderr(norms);
    out.failed_trials += s.trials - s.ok_trials;
    out.cells.push_back(s);
  }
  return out;
}

inline void write_run(const ExperimentConfig& c, const RunSummary& run,
                      const std::filesystem::path& dir) {
  using internal::fmt;
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "results.csv", std::ios::binary);
    out << results_header() << "\r\n";
    for (const auto& r : run.rows) out << results_line(c, r) << "\r\n";
  }
  {
    std::ofstream out(dir / "summary.csv", std::ios::binary);
    out << "cell,n,d,epsilon,delta,trials,ok_trials,mean_excess_risk,stderr_excess_risk,"
           "mean_grad_norm,stderr_grad_norm\r\n";
    for (std::size_t i = 0; i < run.cells.size(); ++i) {
      const CellSummary& s = run.cells[i];
      out << i << ',' << s.axes.n << ',' << (s.d > 0 ? std::to_string(s.d) : "") << ','
          << fmt(s.axes.epsilon) << ',' << fmt(s.axes.delta) << ',' << s.trials << ','
          << s.ok_trials << ',' << fmt(s.mean_excess_risk) << ',' << fmt(s.stderr_excess_risk)
          << ',' << fmt(s.mean_grad_norm) << ',' << fmt(s.stderr_grad_norm) << "\r\n";
    }
  }
}

// ---------------------------------------------------------------------------
// Audit battery

namespace internal {

inline std::vector<Record> swap_candidates(const InstanceFixture& fx, int count,
                                           CounterRng& rng) {
  if (!fx.universe.empty()) return fx.universe;
  return fx.sample_dataset(count, rng);
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

// Worst report across several evaluation points.
inline AuditReport merge_reports(std::string name, const std::vector<AuditReport>& parts) {
  AuditReport out = parts.front();
  out.name = std::move(name);
  out.trials = 0;
  for (const auto& p : parts) {
    out.trials += p.trials;
    if (p.worst_case > out.worst_case) {
      out.worst_case = p.worst_case;
      out.witness = p.witness;
    }
  }
  out.settle();
  return out;
}

template <typename Fn>
void guarded(std::vector<AuditReport>& reports, const std::string& name, Fn&& fn) {
  try {
    fn();
  } catch (const CapacityError& e) {
    reports.push_back(skipped_report(name, e.what()));
  }
}

}  // namespace internal

inline std::vector<AuditReport> run_audits(const ExperimentConfig& c) {
  std::vector<AuditReport> reports;
  if (c.audit.checks.empty()) return reports;
  std::optional<int> d;
  if (c.sweep.count("d")) d = static_cast<int>(c.sweep.at("d").front());
  const InstanceFixture fx = build_instance(c.instance, d);
  const BilevelProblem& p = fx.problem;
  const AssumptionConstants& a = fx.constants;
  const int n = c.audit.n;
  CounterRng rng = CounterRng(c.seed).split(11);
  const Dataset data = fx.sample_dataset(n, rng);
  const std::vector<Record> candidates = internal::swap_candidates(fx, c.audit.swap_samples, rng);
  const std::vector<std::size_t> indices = internal::all_indices(data.size());
  const DerivedConstants dc = derive_constants(a, n);
  const double eps = c.budget.epsilon;
  const double delta = c.budget.delta;
  auto wants = [&](const char* check) {
    return std::find(c.audit.checks.begin(), c.audit.checks.end(), check) != c.audit.checks.end();
  };
  std::vector<Vector> points;
  for (int i = 0; i < c.audit.query_points; ++i) points.push_back(p.domain_x.sample_uniform(rng));
  SamplerOptions law_options;
  law_options.min_cells_per_axis = c.audit.min_cells_per_axis;

  if (wants("sensitivity")) {
    constexpr double kZeta = 1e-9;
    const Vector x0 = p.domain_x.center();
    std::vector<AuditReport> parts;
    for (const Vector& x : points) {
      parts.push_back(empirical_sensitivity(
          "score_sensitivity",
          [&](const Dataset& z) {
            return Vector::Constant(1, evaluate_phi_inexact(p, a, z, x, kZeta) -
                                           evaluate_phi_inexact(p, a, z, x0, kZeta));
          },
          data, candidates, indices, dc.s + 4.0 * kZeta));
    }
    reports.push_back(internal::merge_reports("score_sensitivity", parts));

    const double alpha = dc.C > 0.0 ? std::min(dc.K / (n * dc.C), 1e-8) : 1e-8;
    parts.clear();
    for (const Vector& x : points) {
      parts.push_back(empirical_sensitivity(
          "hypergradient_sensitivity",
          [&](const Dataset& z) {
            const InnerSolveResult inner = solve_lower_level(p, a, z, x, alpha);
            return approx_hypergradient(p, z, x, inner.y).vector;
          },
          data, candidates, indices, 4.0 * dc.K / n));
    }
    reports.push_back(internal::merge_reports("hypergradient_sensitivity", parts));
  }

  if (wants("exact_dp")) {
    internal::guarded(reports, "exp_mech_pure_dp", [&] {
      ExpMechOptions o;
      o.sampler = law_options;
      reports.push_back(exact_dp_audit(
          "exp_mech_pure_dp",
          [&](const Dataset& z) { return exponential_mechanism_law(p, z, a, eps, o).law; }, data,
          candidates, indices, eps, 0.0));
    });
    internal::guarded(reports, "grad_norm_mech_pure_dp", [&] {
      GradNormOptions o;
      o.sampler = law_options;
      reports.push_back(exact_dp_audit(
          "grad_norm_mech_pure_dp",
          [&](const Dataset& z) { return grad_norm_exp_mechanism_law(p, z, a, eps, o).law; },
          data, candidates, indices, eps, 0.0));
    });
    if (delta > 0.0) {
      internal::guarded(reports, "reg_mech_hockey_stick", [&] {
        RegExpMechOptions o;
        o.sampler = law_options;
        reports.push_back(exact_dp_audit(
            "reg_mech_hockey_stick",
            [&](const Dataset& z) {
              return regularized_exp_mechanism_law(p, z, a, eps, delta, o).law;
            },
            data, candidates, indices, eps, delta));
      });
    } else {
      reports.push_back(skipped_report("reg_mech_hockey_stick", "budget.delta is 0"));
    }
  }

  if (wants("sampler_lemmas")) {
    internal::guarded(reports, "sampler_lemmas", [&] {
      // Exponential-mechanism potential on its own accuracy-sized grid.
      const ScoreModel m = exp_mech_score(p, data, a, eps, std::nullopt);
      const ExtendedPotential potential(m.evaluator.eval, p.domain_x, m.lipschitz_l2, std::nullopt);
      const GridSpec grid =
          build_grid(potential.cube(), potential.alpha_inf(), m.xi, GridMode::kExact);
      Vector f(grid.state_count), zeta(grid.state_count);
      CounterRng zrng = rng.split(3);
      for (std::int64_t s = 0; s < grid.state_count; ++s) {
        f(s) = potential(grid.center(s));
        zeta(s) = m.evaluator.zeta_bound * (2.0 * zrng.uniform() - 1.0);
      }
      for (auto& r : verify_sampler_lemmas(f, zeta, grid)) reports.push_back(std::move(r));
    });
  }

  if (wants("negative_controls")) {
    if (delta > 0.0) {
      internal::guarded(reports, "negative_reg_mech_kreg_x100", [&] {
        RegExpMechOptions o;
        o.sampler = law_options;
        o.k_reg *= 100.0;
        AuditReport r = exact_dp_audit(
            "negative_reg_mech_kreg_x100",
            [&](const Dataset& z) {
              return regularized_exp_mechanism_law(p, z, a, eps, delta, o).law;
            },
            data, candidates, indices, eps, delta);
        r.negative_control = true;
        reports.push_back(std::move(r));
      });
    } else {
      reports.push_back(skipped_report("negative_reg_mech_kreg_x100", "budget.delta is 0"));
    }
  }
  return reports;
}

inline bool audits_as_expected(const std::vector<AuditReport>& reports) {
  return std::all_of(reports.begin(), reports.end(),
                     [](const AuditReport& r) { return r.as_expected(); });
}

inline void write_audits(const std::vector<AuditReport>& reports,
                         const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "audits.json");
  out << json(reports).dump(2) << "\n";
}

inline std::string audit_table(const std::vector<AuditReport>& reports) {
  auto shortfmt = [](double v) {
    std::ostringstream o;
    o << std::setprecision(6) << v;
    return o.str();
  };
  std::ostringstream s;
  s << std::left << std::setw(34) << "audit" << std::setw(10) << "result" << std::setw(16)
    << "worst_case" << std::setw(16) << "bound" << "trials\n";
  for (const auto& r : reports) {
    std::string result = r.skipped ? "SKIP" : (r.passed ? "pass" : "fail");
    if (r.negative_control && !r.skipped) result += r.passed ? " (!)" : " (ok)";
    s << std::left << std::setw(34) << r.name << std::setw(10) << result << std::setw(16)
      << shortfmt(r.worst_case) << std::setw(16) << shortfmt(r.bound) << r.trials;
    if (r.skipped) s << "  " << r.note;
    s << "\n";
  }
  return s.str();
}

}  // namespace dpblo
