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

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpblo/gridwalk.hpp"
#include "dpblo/hypergradient.hpp"
#include "dpblo/inner_solver.hpp"
#include "dpblo/problem.hpp"
#include "dpblo/rng.hpp"

namespace dpblo {

struct PrivacyBudget {
  double epsilon = 0;
  double delta = 0;
};

inline void to_json(nlohmann::json& j, const PrivacyBudget& b) {
  j = {{"epsilon", b.epsilon}, {"delta", b.delta}};
}

// Every parameter a mechanism derived or was given. Replaying a ledger with
// the same problem and data reproduces the output bit for bit.
struct Ledger {
  std::string mechanism;
  std::uint64_t seed = 0;
  PrivacyBudget requested;
  PrivacyBudget spent;
  std::map<std::string, double> params;
  std::optional<Vector> initial_point;
  // False when overrides leave the run without its privacy proof.
  bool dp_valid = true;
  std::vector<std::string> notes;
  std::vector<Ledger> stages;

  double param(const std::string& key) const {
    const auto it = params.find(key);
    if (it == params.end()) throw ConfigError("ledger has no parameter " + key);
    return it->second;
  }
  std::optional<double> maybe(const std::string& key) const {
    const auto it = params.find(key);
    if (it == params.end()) return std::nullopt;
    return it->second;
  }
};

inline std::vector<double> to_std(const Vector& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline Vector from_std(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline void to_json(nlohmann::json& j, const Ledger& l) {
  j = {{"mechanism", l.mechanism}, {"seed", l.seed},         {"requested", l.requested},
       {"spent", l.spent},         {"params", l.params},     {"dp_valid", l.dp_valid},
       {"notes", l.notes}};
  if (l.initial_point) j["initial_point"] = to_std(*l.initial_point);
  if (!l.stages.empty()) {
    j["stages"] = nlohmann::json::array();
    for (const auto& s : l.stages) {
      nlohmann::json sj;
      to_json(sj, s);
      j["stages"].push_back(sj);
    }
  }
}

inline void from_json(const nlohmann::json& j, Ledger& l) {
  l.mechanism = j.at("mechanism").get<std::string>();
  l.seed = j.at("seed").get<std::uint64_t>();
  l.requested = {j.at("requested").at("epsilon").get<double>(),
                 j.at("requested").at("delta").get<double>()};
  l.spent = {j.at("spent").at("epsilon").get<double>(), j.at("spent").at("delta").get<double>()};
  l.params.clear();
  for (const auto& item : j.at("params").items()) {
    // Infinite parameters serialize as null.
    l.params[item.key()] = item.value().is_null() ? std::numeric_limits<double>::infinity()
                                                  : item.value().get<double>();
  }
  l.dp_valid = j.at("dp_valid").get<bool>();
  l.notes = j.at("notes").get<std::vector<std::string>>();
  if (j.contains("initial_point")) {
    l.initial_point = from_std(j.at("initial_point").get<std::vector<double>>());
  }
  l.stages.clear();
  if (j.contains("stages")) {
    for (const auto& sj : j.at("stages")) {
      Ledger s;
      from_json(sj, s);
      l.stages.push_back(std::move(s));
    }
  }
}

struct MechanismResult {
  Vector x_out;
  PrivacyBudget budget_spent;
  Ledger ledger;
  std::vector<Vector> trajectory;  // noisy-GD iterates x_1..x_T
};

inline void to_json(nlohmann::json& j, const MechanismResult& r) {
  j = {{"x_out", to_std(r.x_out)}, {"budget_spent", r.budget_spent}, {"ledger", r.ledger}};
  if (!r.trajectory.empty()) {
    auto& t = j["trajectory"] = nlohmann::json::array();
    for (const auto& x : r.trajectory) t.push_back(to_std(x));
  }
}

// ---------------------------------------------------------------------------
// Privacy utilities

// Advanced composition of T mechanisms, each (eps_step, delta_step)-DP.
inline PrivacyBudget advanced_composition(double eps_step, double delta_step, std::int64_t steps,
                                          double delta_prime) {
  const double t = static_cast<double>(steps);
  const double eps = std::sqrt(2.0 * t * std::log(1.0 / delta_prime)) * eps_step +
                     t * eps_step * (std::exp(eps_step) - 1.0);
  return {eps, t * delta_step + delta_prime};
}

inline Vector gaussian_noise(const Vector& v, double sigma, CounterRng& rng) {
  if (!(sigma >= 0.0)) throw ConfigError("noise scale must be >= 0");
  if (sigma == 0.0) return v;
  Vector out = v;
  for (int i = 0; i < out.size(); ++i) out(i) += sigma * rng.normal();
  return out;
}

namespace internal {

inline void check_epsilon(double eps) {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw ConfigError("epsilon must be finite and > 0");
}

inline void check_delta(double delta) {
  if (!(delta > 0.0) || !(delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
}

inline void record_sampler(Ledger& l, const SamplerOptions& o) {
  l.params["restart_cap"] = o.restart_cap;
  l.params["k_mix"] = o.k_mix;
  l.params["min_cells_per_axis"] = o.min_cells_per_axis;
  l.params["state_cap"] = static_cast<double>(o.state_cap);
  if (o.gauge_weight) l.params["gauge_weight"] = *o.gauge_weight;
  if (o.walk_steps) l.params["walk_steps_override"] = static_cast<double>(*o.walk_steps);
}

inline SamplerOptions sampler_from(const Ledger& l) {
  SamplerOptions o;
  o.restart_cap = static_cast<int>(l.param("restart_cap"));
  o.k_mix = l.param("k_mix");
  o.min_cells_per_axis = static_cast<int>(l.param("min_cells_per_axis"));
  o.state_cap = static_cast<std::int64_t>(l.param("state_cap"));
  o.gauge_weight = l.maybe("gauge_weight");
  if (const auto w = l.maybe("walk_steps_override")) o.walk_steps = static_cast<std::int64_t>(*w);
  return o;
}

inline double pick_zeta(double eps_half, std::optional<double> zeta) {
  const double cap = eps_half / 6.0;
  const double value = zeta.value_or(cap);
  if (!(value > 0.0) || value > cap) throw ConfigError("zeta must lie in (0, eps/12]");
  return value;
}

inline void record_overrides(Ledger& l, std::optional<double> xi, std::optional<double> zeta) {
  if (xi) l.params["xi_override"] = *xi;
  if (zeta) l.params["zeta_override"] = *zeta;
}

inline void record_sample(Ledger& l, const SampleResult& s) {
  l.params["sampler_restarts"] = s.restarts;
  l.params["sampler_walk_steps"] = static_cast<double>(s.walk_steps);
  l.params["sampler_short_cube"] = s.short_cube ? 1.0 : 0.0;
  if (s.grid) l.params["grid_cells_per_axis"] = s.grid->cells_per_axis;
}

}  // namespace internal

// A scaled score ready for the sampler: inexact evaluator, its Lipschitz
// constant, and the sampler accuracy. Shared by sampling and exact laws.
struct ScoreModel {
  Evaluator evaluator;
  double lipschitz_l2 = 0;
  double xi = 0;
  std::map<std::string, double> params;
};

// ---------------------------------------------------------------------------
// Exponential mechanism: density proportional to exp(-(eps'/(2s)) Phi) with
// eps' = eps/2. Evaluation error and sampler accuracy are both eps'/6, so the
// implemented law is within Dist_inf eps'/2 of the ideal one.

struct ExpMechOptions {
  std::optional<double> xi;  // at most eps/12
  // Evaluation error bound, at most eps/12. A tighter value shortens the walk
  // through the e^{12 zeta} factor of the mixing bound.
  std::optional<double> zeta;
  SamplerOptions sampler;
};

inline ScoreModel exp_mech_score(const BilevelProblem& p, const Dataset& data,
                                 const AssumptionConstants& a, double eps,
                                 std::optional<double> xi,
                                 std::optional<double> zeta_override = std::nullopt) {
  internal::check_epsilon(eps);
  require_nonempty(data, "exponential_mechanism");
  const DerivedConstants dc = derive_constants(a, static_cast<int>(data.size()));
  if (!(dc.s > 0.0)) throw ConfigError("score sensitivity s must be > 0");
  const double eps_half = eps / 2.0;
  const double zeta = internal::pick_zeta(eps_half, zeta_override);
  const double accuracy = xi.value_or(eps_half / 6.0);
  if (!(accuracy > 0.0) || accuracy > eps_half / 6.0) {
    throw ConfigError("xi must lie in (0, eps/12]");
  }
  const double coef = eps_half / (2.0 * dc.s);

  ScoreModel m;
  m.evaluator.eval = [&p, &a, &data, coef, zeta](const Vector& x) {
    return coef * evaluate_phi_inexact(p, a, data, x, zeta / coef);
  };
  m.evaluator.zeta_bound = zeta;
  m.lipschitz_l2 = coef * dc.L_bar;
  m.evaluator.alpha_lip = m.lipschitz_l2 * std::sqrt(static_cast<double>(p.dim_x));
  m.xi = accuracy;
  m.params = {{"s", dc.s},           {"score_coef", coef}, {"eps_prime", eps_half},
              {"zeta", zeta},        {"xi", accuracy},     {"L_bar", dc.L_bar},
              {"lipschitz_l2", m.lipschitz_l2}};
  return m;
}

inline MechanismResult exponential_mechanism(const BilevelProblem& p, const Dataset& data,
                                             const AssumptionConstants& a, double eps,
                                             std::uint64_t seed,
                                             const ExpMechOptions& options = {}) {
  const ScoreModel m = exp_mech_score(p, data, a, eps, options.xi, options.zeta);
  const SampleResult sample =
      sample_logconcave(m.evaluator, p.domain_x, m.lipschitz_l2, m.xi, seed, options.sampler);
  MechanismResult r;
  r.x_out = sample.point;
  r.budget_spent = {eps, 0.0};
  r.ledger.mechanism = "exponential";
  r.ledger.seed = seed;
  r.ledger.requested = {eps, 0.0};
  r.ledger.spent = r.budget_spent;
  r.ledger.params = m.params;
  internal::record_overrides(r.ledger, options.xi, options.zeta);
  internal::record_sampler(r.ledger, options.sampler);
  internal::record_sample(r.ledger, sample);
  if (options.sampler.walk_steps) {
    r.ledger.dp_valid = false;
    r.ledger.notes.push_back("walk length overridden; sampler accuracy not guaranteed");
  }
  return r;
}

inline GridLaw exponential_mechanism_law(const BilevelProblem& p, const Dataset& data,
                                         const AssumptionConstants& a, double eps,
                                         const ExpMechOptions& options = {}) {
  const ScoreModel m = exp_mech_score(p, data, a, eps, options.xi, options.zeta);
  return exact_grid_law(m.evaluator, p.domain_x, m.lipschitz_l2, m.xi, options.sampler);
}

// ---------------------------------------------------------------------------
// Regularized exponential mechanism: density proportional to
// exp(-k (Phi + mu |x|^2 / 2)). The ideal law is run at (eps/2, delta e^{-eps/4});
// the eps/4 sampler slack doubles into the remaining eps/2 and scales delta.

enum class RegMode { kErm, kPopulation };

struct RegExpMechOptions {
  RegMode mode = RegMode::kErm;
  double k_reg = 0.125;
  std::optional<double> xi;    // at most eps/12
  std::optional<double> zeta;  // at most eps/12
  SamplerOptions sampler;
};

inline ScoreModel reg_exp_mech_score(const BilevelProblem& p, const Dataset& data,
                                     const AssumptionConstants& a, double eps, double delta,
                                     const RegExpMechOptions& options) {
  internal::check_epsilon(eps);
  internal::check_delta(delta);
  require_nonempty(data, "regularized_exp_mechanism");
  if (!(options.k_reg > 0.0)) throw ConfigError("k_reg must be > 0");
  const int n = static_cast<int>(data.size());
  const DerivedConstants dc = derive_constants(a, n);
  if (!(dc.G > 0.0)) throw ConfigError("Lipschitz gap G must be > 0");
  const double eps_half = eps / 2.0;
  const double delta_ideal = delta * std::exp(-eps / 4.0);
  const double zeta = internal::pick_zeta(eps_half, options.zeta);
  const double accuracy = options.xi.value_or(eps_half / 6.0);
  if (!(accuracy > 0.0) || accuracy > eps_half / 6.0) {
    throw ConfigError("xi must lie in (0, eps/12]");
  }
  const double log_inv_delta = std::log(1.0 / delta_ideal);
  const double d = p.dim_x;

  double mu = dc.G * std::sqrt(d * log_inv_delta) / (n * a.D_x * eps_half);
  if (options.mode == RegMode::kPopulation) mu += dc.G / (a.D_x * std::sqrt(n));
  const double k = options.k_reg * mu * n * n * eps_half * eps_half / (dc.G * dc.G * log_inv_delta);

  ScoreModel m;
  m.evaluator.eval = [&p, &a, &data, k, mu, zeta](const Vector& x) {
    return k * (evaluate_phi_inexact(p, a, data, x, zeta / k) + 0.5 * mu * x.squaredNorm());
  };
  m.evaluator.zeta_bound = zeta;
  m.lipschitz_l2 = k * (dc.L_bar + mu * p.domain_x.max_norm());
  m.evaluator.alpha_lip = m.lipschitz_l2 * std::sqrt(d);
  m.xi = accuracy;
  m.params = {{"G", dc.G},
              {"k", k},
              {"mu_reg", mu},
              {"k_reg", options.k_reg},
              {"mode_population", options.mode == RegMode::kPopulation ? 1.0 : 0.0},
              {"eps_prime", eps_half},
              {"delta_prime", delta_ideal},
              {"zeta", zeta},
              {"xi", accuracy},
              {"lipschitz_l2", m.lipschitz_l2}};
  return m;
}

inline MechanismResult regularized_exp_mechanism(const BilevelProblem& p, const Dataset& data,
                                                 const AssumptionConstants& a, double eps,
                                                 double delta, std::uint64_t seed,
                                                 const RegExpMechOptions& options = {}) {
  const ScoreModel m = reg_exp_mech_score(p, data, a, eps, delta, options);
  const SampleResult sample =
      sample_logconcave(m.evaluator, p.domain_x, m.lipschitz_l2, m.xi, seed, options.sampler);
  MechanismResult r;
  r.x_out = sample.point;
  r.budget_spent = {eps, delta};
  r.ledger.mechanism = "regularized_exponential";
  r.ledger.seed = seed;
  r.ledger.requested = {eps, delta};
  r.ledger.spent = r.budget_spent;
  r.ledger.params = m.params;
  internal::record_overrides(r.ledger, options.xi, options.zeta);
  internal::record_sampler(r.ledger, options.sampler);
  internal::record_sample(r.ledger, sample);
  if (options.sampler.walk_steps) {
    r.ledger.dp_valid = false;
    r.ledger.notes.push_back("walk length overridden; sampler accuracy not guaranteed");
  }
  if (options.mode == RegMode::kPopulation) {
    r.ledger.notes.push_back("population guarantee assumes i.i.d. records");
  }
  return r;
}

inline GridLaw regularized_exp_mechanism_law(const BilevelProblem& p, const Dataset& data,
                                             const AssumptionConstants& a, double eps,
                                             double delta, const RegExpMechOptions& options = {}) {
  const ScoreModel m = reg_exp_mech_score(p, data, a, eps, delta, options);
  return exact_grid_law(m.evaluator, p.domain_x, m.lipschitz_l2, m.xi, options.sampler);
}

// ---------------------------------------------------------------------------
// Gradient-norm exponential mechanism: score (eps'/(2G)) |hypergradient|.

struct GradNormOptions {
  std::optional<double> xi;    // at most eps/12
  std::optional<double> zeta;  // at most eps/12
  double inner_alpha_when_exact = 1e-8;  // used when C = 0
  SamplerOptions sampler;
};

inline ScoreModel grad_norm_score(const BilevelProblem& p, const Dataset& data,
                                  const AssumptionConstants& a, double eps,
                                  const GradNormOptions& options) {
  internal::check_epsilon(eps);
  require_nonempty(data, "grad_norm_exp_mechanism");
  const DerivedConstants dc = derive_constants(a, static_cast<int>(data.size()));
  if (!(dc.G > 0.0)) throw ConfigError("Lipschitz gap G must be > 0");
  const double eps_half = eps / 2.0;
  const double zeta = internal::pick_zeta(eps_half, options.zeta);
  const double accuracy = options.xi.value_or(eps_half / 6.0);
  if (!(accuracy > 0.0) || accuracy > eps_half / 6.0) {
    throw ConfigError("xi must lie in (0, eps/12]");
  }
  const double coef = eps_half / (2.0 * dc.G);
  // | |q| - |grad Phi| | <= C alpha, so alpha = zeta / (coef C) keeps the score within zeta.
  const double inner_alpha =
      dc.C > 0.0 ? zeta / (coef * dc.C) : options.inner_alpha_when_exact;

  ScoreModel m;
  m.evaluator.eval = [&p, &a, &data, coef, inner_alpha](const Vector& x) {
    const InnerSolveResult inner = solve_lower_level(p, a, data, x, inner_alpha);
    return coef * approx_hypergradient(p, data, x, inner.y).vector.norm();
  };
  m.evaluator.zeta_bound = zeta;
  m.lipschitz_l2 = coef * dc.beta_phi;
  m.evaluator.alpha_lip = m.lipschitz_l2 * std::sqrt(static_cast<double>(p.dim_x));
  m.xi = accuracy;
  m.params = {{"G", dc.G},          {"score_coef", coef},  {"eps_prime", eps_half},
              {"zeta", zeta},       {"xi", accuracy},      {"inner_alpha", inner_alpha},
              {"beta_phi", dc.beta_phi}, {"lipschitz_l2", m.lipschitz_l2}};
  return m;
}

inline MechanismResult grad_norm_exp_mechanism(const BilevelProblem& p, const Dataset& data,
                                               const AssumptionConstants& a, double eps,
                                               std::uint64_t seed,
                                               const GradNormOptions& options = {}) {
  const ScoreModel m = grad_norm_score(p, data, a, eps, options);
  const SampleResult sample =
      sample_logconcave(m.evaluator, p.domain_x, m.lipschitz_l2, m.xi, seed, options.sampler);
  MechanismResult r;
  r.x_out = sample.point;
  r.budget_spent = {eps, 0.0};
  r.ledger.mechanism = "grad_norm_exponential";
  r.ledger.seed = seed;
  r.ledger.requested = {eps, 0.0};
  r.ledger.spent = r.budget_spent;
  r.ledger.params = m.params;
  r.ledger.params["inner_alpha_when_exact"] = options.inner_alpha_when_exact;
  internal::record_overrides(r.ledger, options.xi, options.zeta);
  internal::record_sampler(r.ledger, options.sampler);
  internal::record_sample(r.ledger, sample);
  if (options.sampler.walk_steps) {
    r.ledger.dp_valid = false;
    r.ledger.notes.push_back("walk length overridden; sampler accuracy not guaranteed");
  }
  return r;
}

inline GridLaw grad_norm_exp_mechanism_law(const BilevelProblem& p, const Dataset& data,
                                           const AssumptionConstants& a, double eps,
                                           const GradNormOptions& options = {}) {
  const ScoreModel m = grad_norm_score(p, data, a, eps, options);
  return exact_grid_law(m.evaluator, p.domain_x, m.lipschitz_l2, m.xi, options.sampler);
}

// ---------------------------------------------------------------------------
// Noisy second-order hypergradient descent (dp_second_order_gd).

struct Alg1Schedule {
  std::int64_t T = 0;
  double sigma = 0;
  double eta = 0;
  double alpha = 0;  // +inf when C = 0
};

inline double alg1_sigma(double K, std::int64_t T, int n, double eps, double delta) {
  return 32.0 * K * std::sqrt(static_cast<double>(T) * std::log(1.0 / delta)) / (n * eps);
}

inline Alg1Schedule alg1_schedule(const DerivedConstants& dc, int n, int d_x, double eps,
                                  double delta, double gap) {
  internal::check_epsilon(eps);
  internal::check_delta(delta);
  if (!(gap > 0.0)) throw ConfigError("optimality gap bound must be > 0");
  if (!(dc.K > 0.0)) throw ConfigError("sensitivity constant K must be > 0");
  const double log_inv_delta = std::log(1.0 / delta);
  const double root_d_log = std::sqrt(d_x * log_inv_delta);
  Alg1Schedule s;
  const double steps =
      std::ceil((n * eps / root_d_log) * (std::sqrt(dc.beta_phi * gap) / dc.K));
  s.T = std::max<std::int64_t>(1, static_cast<std::int64_t>(steps));
  s.sigma = alg1_sigma(dc.K, s.T, n, eps, delta);
  // A linear hyperobjective has beta_phi = 0; the caller must then pick eta.
  s.eta = dc.beta_phi > 0.0 ? 1.0 / (2.0 * dc.beta_phi) : std::numeric_limits<double>::infinity();
  if (dc.C > 0.0) {
    s.alpha = std::min(dc.K / (n * dc.C),
                       (1.0 / dc.C) * std::sqrt(dc.K * std::sqrt(gap * dc.beta_phi) *
                                                root_d_log / (eps * n)));
  } else {
    s.alpha = std::numeric_limits<double>::infinity();
  }
  return s;
}

struct Alg1Options {
  std::optional<std::int64_t> T;
  std::optional<double> eta;
  std::optional<double> alpha;
  std::optional<double> sigma;
  // Required for sigma below the schedule or alpha above K/(nC).
  bool unsafe = false;
  // Upper bound on Phi(x0) - Phi*; defaults to L_bar D_x.
  std::optional<double> gap_upper_bound;
  // Inner accuracy used when the schedule leaves alpha unconstrained (C = 0).
  double inner_alpha_when_unconstrained = 1e-6;
  bool keep_trajectory = true;
};

inline MechanismResult dp_second_order_gd(const BilevelProblem& p, const Dataset& data,
                                          const AssumptionConstants& a, double eps,
                                          double delta, const Vector& x0, std::uint64_t seed,
                                          const Alg1Options& options = {}) {
  require_nonempty(data, "dp_second_order_gd");
  const int n = static_cast<int>(data.size());
  if (x0.size() != p.dim_x) throw ConfigError("x0 has the wrong dimension");
  if (!p.domain_x.contains(x0, 1e-9)) throw ConfigError("x0 lies outside the domain");
  const DerivedConstants dc = derive_constants(a, n);
  const double gap = options.gap_upper_bound.value_or(dc.L_bar * a.D_x);
  const Alg1Schedule schedule = alg1_schedule(dc, n, p.dim_x, eps, delta, gap);

  const std::int64_t T = options.T.value_or(schedule.T);
  if (T < 1) throw ConfigError("T must be >= 1");
  const double required_sigma = alg1_sigma(dc.K, T, n, eps, delta);
  const double sigma = options.sigma.value_or(required_sigma);
  const double eta = options.eta.value_or(schedule.eta);
  const double alpha = options.alpha.value_or(schedule.alpha);
  if (!(sigma >= 0.0) || !(eta > 0.0) || !std::isfinite(eta) || !(alpha > 0.0)) {
    throw ConfigError("need sigma >= 0, finite eta > 0 and alpha > 0");
  }
  const double alpha_cap = dc.C > 0.0 ? dc.K / (n * dc.C) : std::numeric_limits<double>::infinity();
  const bool sigma_ok = sigma >= required_sigma;
  const bool alpha_ok = alpha <= alpha_cap;
  if ((!sigma_ok || !alpha_ok) && !options.unsafe) {
    throw ConfigError(
        "sigma below the schedule or alpha above K/(nC) requires the unsafe flag");
  }
  const double inner_alpha = std::isfinite(alpha) ? alpha : options.inner_alpha_when_unconstrained;

  MechanismResult r;
  Ledger& l = r.ledger;
  l.mechanism = "dp_second_order_gd";
  l.seed = seed;
  l.requested = {eps, delta};
  l.initial_point = x0;
  l.dp_valid = sigma_ok && alpha_ok;
  l.params = {{"K", dc.K},
              {"C", dc.C},
              {"beta_phi", dc.beta_phi},
              {"gap_upper_bound", gap},
              {"T", static_cast<double>(T)},
              {"sigma", sigma},
              {"eta", eta},
              {"alpha", alpha},
              {"inner_alpha", inner_alpha},
              {"schedule_T", static_cast<double>(schedule.T)},
              {"schedule_sigma", schedule.sigma},
              {"schedule_eta", schedule.eta},
              {"schedule_alpha", schedule.alpha},
              {"required_sigma", required_sigma},
              {"unsafe", options.unsafe ? 1.0 : 0.0},
              {"inner_alpha_when_unconstrained", options.inner_alpha_when_unconstrained},
              {"keep_trajectory", options.keep_trajectory ? 1.0 : 0.0}};
  if (options.T) l.params["T_override"] = static_cast<double>(*options.T);
  if (options.eta) l.params["eta_override"] = *options.eta;
  if (options.alpha) l.params["alpha_override"] = *options.alpha;
  if (options.sigma) l.params["sigma_override"] = *options.sigma;
  if (options.gap_upper_bound) l.params["gap_override"] = *options.gap_upper_bound;
  if (!std::isfinite(alpha)) {
    l.notes.push_back("C = 0: inner accuracy unconstrained, solved to inner_alpha");
  }
  if (!l.dp_valid) l.notes.push_back("overrides void the privacy guarantee");

  CounterRng noise_rng = CounterRng(seed).split(1);
  CounterRng pick_rng = CounterRng(seed).split(2);
  Vector x = x0;
  std::optional<Vector> y_prev;
  std::vector<Vector> iterates;
  iterates.reserve(static_cast<std::size_t>(T));
  for (std::int64_t t = 0; t < T; ++t) {
    const InnerSolveResult inner = solve_lower_level(p, a, data, x, inner_alpha, y_prev);
    y_prev = inner.y;
    const Vector q = approx_hypergradient(p, data, x, inner.y).vector;
    x = p.domain_x.project(x - eta * gaussian_noise(q, sigma, noise_rng));
    iterates.push_back(x);
  }
  r.x_out = iterates[pick_rng.below(static_cast<std::uint64_t>(T))];
  if (options.keep_trajectory) r.trajectory = std::move(iterates);
  r.budget_spent = {eps, delta};
  l.spent = r.budget_spent;
  return r;
}

// ---------------------------------------------------------------------------
// Warm start: exponential mechanism at eps/2, then noisy hypergradient descent at
// (eps/2, delta/2) from its output with the gap bound Psi d / (eps n).

struct WarmStartOptions {
  ExpMechOptions stage_a;
  Alg1Options stage_b;
};

inline MechanismResult warm_start(const BilevelProblem& p, const Dataset& data,
                                  const AssumptionConstants& a, double eps, double delta,
                                  std::uint64_t seed, const WarmStartOptions& options = {}) {
  internal::check_epsilon(eps);
  internal::check_delta(delta);
  require_nonempty(data, "warm_start");
  const int n = static_cast<int>(data.size());
  const DerivedConstants dc = derive_constants(a, n);

  const MechanismResult stage_a =
      exponential_mechanism(p, data, a, eps / 2.0, derive_seed(seed, 0, 1), options.stage_a);
  Alg1Options b_options = options.stage_b;
  const bool gap_given = b_options.gap_upper_bound.has_value();
  if (!gap_given) b_options.gap_upper_bound = dc.Psi * p.dim_x / (eps * n);
  const MechanismResult stage_b = dp_second_order_gd(p, data, a, eps / 2.0, delta / 2.0,
                                                     stage_a.x_out, derive_seed(seed, 0, 2),
                                                     b_options);

  MechanismResult r;
  r.x_out = stage_b.x_out;
  r.trajectory = stage_b.trajectory;
  r.budget_spent = {stage_a.budget_spent.epsilon + stage_b.budget_spent.epsilon,
                    stage_a.budget_spent.delta + stage_b.budget_spent.delta};
  Ledger& l = r.ledger;
  l.mechanism = "warm_start";
  l.seed = seed;
  l.requested = {eps, delta};
  l.spent = r.budget_spent;
  l.dp_valid = stage_a.ledger.dp_valid && stage_b.ledger.dp_valid;
  l.params = {{"Psi", dc.Psi},
              {"gap_upper_bound", *b_options.gap_upper_bound},
              {"gap_given", gap_given ? 1.0 : 0.0},
              {"stage_a_epsilon", stage_a.budget_spent.epsilon},
              {"stage_a_delta_allotted", delta / 2.0},
              {"stage_a_delta_spent", stage_a.budget_spent.delta},
              {"stage_b_epsilon", stage_b.budget_spent.epsilon},
              {"stage_b_delta", stage_b.budget_spent.delta}};
  l.notes.push_back("stage A is pure DP; its delta/2 allotment is left unspent");
  l.stages = {stage_a.ledger, stage_b.ledger};
  return r;
}

// ---------------------------------------------------------------------------
// Replay

namespace internal {

inline ExpMechOptions exp_options_from(const Ledger& l) {
  ExpMechOptions o;
  o.xi = l.maybe("xi_override");
  o.zeta = l.maybe("zeta_override");
  o.sampler = sampler_from(l);
  return o;
}

inline Alg1Options alg1_options_from(const Ledger& l) {
  Alg1Options o;
  if (const auto v = l.maybe("T_override")) o.T = static_cast<std::int64_t>(*v);
  o.eta = l.maybe("eta_override");
  o.alpha = l.maybe("alpha_override");
  o.sigma = l.maybe("sigma_override");
  o.gap_upper_bound = l.maybe("gap_override");
  o.unsafe = l.param("unsafe") != 0.0;
  o.inner_alpha_when_unconstrained = l.param("inner_alpha_when_unconstrained");
  o.keep_trajectory = l.param("keep_trajectory") != 0.0;
  return o;
}

}  // namespace internal

// Re-runs the mechanism described by `ledger` on the same problem and data.
inline MechanismResult replay(const BilevelProblem& p, const Dataset& data,
                              const AssumptionConstants& a, const Ledger& ledger) {
  const PrivacyBudget& b = ledger.requested;
  if (ledger.mechanism == "exponential") {
    return exponential_mechanism(p, data, a, b.epsilon, ledger.seed,
                                 internal::exp_options_from(ledger));
  }
  if (ledger.mechanism == "regularized_exponential") {
    RegExpMechOptions o;
    o.mode = ledger.param("mode_population") != 0.0 ? RegMode::kPopulation : RegMode::kErm;
    o.k_reg = ledger.param("k_reg");
    o.xi = ledger.maybe("xi_override");
    o.zeta = ledger.maybe("zeta_override");
    o.sampler = internal::sampler_from(ledger);
    return regularized_exp_mechanism(p, data, a, b.epsilon, b.delta, ledger.seed, o);
  }
  if (ledger.mechanism == "grad_norm_exponential") {
    GradNormOptions o;
    o.xi = ledger.maybe("xi_override");
    o.zeta = ledger.maybe("zeta_override");
    o.inner_alpha_when_exact = ledger.param("inner_alpha_when_exact");
    o.sampler = internal::sampler_from(ledger);
    return grad_norm_exp_mechanism(p, data, a, b.epsilon, ledger.seed, o);
  }
  if (ledger.mechanism == "dp_second_order_gd") {
    if (!ledger.initial_point) throw ConfigError("ledger lacks the initial point");
    return dp_second_order_gd(p, data, a, b.epsilon, b.delta, *ledger.initial_point, ledger.seed,
                              internal::alg1_options_from(ledger));
  }
  if (ledger.mechanism == "warm_start") {
    if (ledger.stages.size() != 2) throw ConfigError("warm-start ledger needs two stages");
    WarmStartOptions o;
    o.stage_a = internal::exp_options_from(ledger.stages[0]);
    o.stage_b = internal::alg1_options_from(ledger.stages[1]);
    // The stage-B gap is derived from Psi unless the caller supplied one.
    if (ledger.param("gap_given") == 0.0) o.stage_b.gap_upper_bound.reset();
    return warm_start(p, data, a, b.epsilon, b.delta, ledger.seed, o);
  }
  throw ConfigError("unknown mechanism in ledger: " + ledger.mechanism);
}

}  // namespace dpblo
