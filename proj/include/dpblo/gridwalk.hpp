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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpblo/domain.hpp"
#include "dpblo/rng.hpp"
#include "dpblo/types.hpp"

namespace dpblo {

inline constexpr std::int64_t kWalkStateCap = std::int64_t{1} << 22;
inline constexpr std::int64_t kExactStateCap = 4096;
inline constexpr std::int64_t kConductanceStateCap = 18;

enum class GridMode { kWalk, kExact };

// Regular grid of cubes covering an axis-aligned cube. States are cell
// indices with axis 0 varying fastest.
struct GridSpec {
  Vector cube_low;
  double tau = 0;    // cube side
  double gamma = 0;  // cell side
  int cells_per_axis = 0;
  int dim = 0;
  std::int64_t state_count = 0;
  double alpha_lip = 0;        // inf-norm Lipschitz constant the grid was sized for
  double target_accuracy = 0;
  double concavity_slack = 0;  // metadata only

  std::vector<int> coords(std::int64_t state) const {
    std::vector<int> c(dim);
    for (int i = 0; i < dim; ++i) {
      c[i] = static_cast<int>(state % cells_per_axis);
      state /= cells_per_axis;
    }
    return c;
  }

  std::int64_t state_of(const std::vector<int>& c) const {
    std::int64_t s = 0;
    for (int i = dim - 1; i >= 0; --i) s = s * cells_per_axis + c[i];
    return s;
  }

  Vector center(std::int64_t state) const {
    Vector x(dim);
    for (int i = 0; i < dim; ++i) {
      x(i) = cube_low(i) + gamma * (static_cast<double>(state % cells_per_axis) + 0.5);
      state /= cells_per_axis;
    }
    return x;
  }

  std::int64_t locate(const Vector& point) const {
    std::vector<int> c(dim);
    for (int i = 0; i < dim; ++i) {
      const double k = std::floor((point(i) - cube_low(i)) / gamma);
      c[i] = static_cast<int>(std::clamp(k, 0.0, static_cast<double>(cells_per_axis - 1)));
    }
    return state_of(c);
  }

  // Direction 2i steps down along axis i, 2i+1 steps up. Empty at the boundary.
  std::optional<std::int64_t> neighbor(std::int64_t state, int direction) const {
    const int axis = direction / 2;
    std::int64_t stride = 1;
    for (int i = 0; i < axis; ++i) stride *= cells_per_axis;
    const int c = static_cast<int>((state / stride) % cells_per_axis);
    if (direction % 2 == 0) {
      if (c == 0) return std::nullopt;
      return state - stride;
    }
    if (c == cells_per_axis - 1) return std::nullopt;
    return state + stride;
  }

  Vector sample_in_cell(std::int64_t state, CounterRng& rng) const {
    Vector x = center(state);
    for (int i = 0; i < dim; ++i) x(i) += gamma * (rng.uniform() - 0.5);
    return x;
  }
};

inline void to_json(nlohmann::json& j, const GridSpec& g) {
  j = {{"cube_low", std::vector<double>(g.cube_low.data(), g.cube_low.data() + g.dim)},
       {"tau", g.tau},
       {"gamma", g.gamma},
       {"cells_per_axis", g.cells_per_axis},
       {"dim", g.dim},
       {"state_count", g.state_count},
       {"alpha_lip", g.alpha_lip},
       {"target_accuracy", g.target_accuracy}};
}

// Covers the cube enclosing `domain` with cells of side
// min(eps/(2 alpha sqrt d), 1/(2 alpha)), snapped so they tile the cube.
inline GridSpec build_grid(const Domain& domain, double alpha_lip, double eps_acc,
                           GridMode mode = GridMode::kWalk, int min_cells_per_axis = 1,
                           std::optional<std::int64_t> state_cap = std::nullopt) {
  if (!(eps_acc > 0.0) || !std::isfinite(eps_acc)) {
    throw ConfigError("grid accuracy must be a finite positive number");
  }
  if (!(alpha_lip >= 0.0) || !std::isfinite(alpha_lip)) {
    throw ConfigError("grid Lipschitz constant must be finite and >= 0");
  }
  const int d = domain.dim();
  if (d < 1) throw ConfigError("grid needs dimension >= 1");
  GridSpec grid;
  grid.dim = d;
  grid.tau = domain.inf_width();
  if (!(grid.tau > 0.0)) throw ConfigError("grid needs a domain of positive width");
  grid.cube_low = domain.center().array() - 0.5 * grid.tau;
  grid.alpha_lip = alpha_lip;
  grid.target_accuracy = eps_acc;

  double cells = 1.0;
  if (alpha_lip > 0.0) {
    const double gamma = std::min(eps_acc / (2.0 * alpha_lip * std::sqrt(d)), 0.5 / alpha_lip);
    // Guard against tau/gamma landing a rounding error above an integer.
    cells = std::max(1.0, std::ceil(grid.tau / gamma * (1.0 - 1e-12)));
  }
  cells = std::max(cells, static_cast<double>(std::max(1, min_cells_per_axis)));
  const std::int64_t cap =
      state_cap.value_or(mode == GridMode::kWalk ? kWalkStateCap : kExactStateCap);
  const double states = std::pow(cells, d);
  if (states > static_cast<double>(cap)) {
    throw CapacityError("grid needs " + std::to_string(states) + " states, cap is " +
                        std::to_string(cap));
  }
  grid.cells_per_axis = static_cast<int>(cells);
  grid.gamma = grid.tau / cells;
  grid.state_count = 1;
  for (int i = 0; i < d; ++i) grid.state_count *= grid.cells_per_axis;
  return grid;
}

// Perturbed function value oracle: eval returns f(theta) + zeta(theta) with
// |zeta| <= zeta_bound.
struct Evaluator {
  std::function<double(const Vector&)> eval;
  double zeta_bound = 0;
  double alpha_lip = 0;  // inf-norm Lipschitz constant of the exact f
};

inline double metropolis_acceptance(double f_from, double f_to) {
  const double rise = f_to - f_from;
  return rise <= 0.0 ? 1.0 : std::exp(-rise);
}

// Lazy Metropolis step on grid states. `potential` maps a state to f'.
template <typename Potential>
std::int64_t walk_step(std::int64_t current, Potential&& potential, const GridSpec& grid,
                       CounterRng& rng) {
  if (rng.uniform() < 0.5) return current;
  const int direction = static_cast<int>(rng.below(2 * static_cast<std::uint64_t>(grid.dim)));
  const auto next = grid.neighbor(current, direction);
  if (!next) return current;
  const double accept = metropolis_acceptance(potential(current), potential(*next));
  if (accept >= 1.0 || rng.uniform() < accept) return *next;
  return current;
}

// Memoizes f' at grid centers so revisited states cost nothing.
class CachedGridPotential {
 public:
  CachedGridPotential(std::function<double(const Vector&)> fn, const GridSpec& grid)
      : fn_(std::move(fn)), grid_(grid) {}

  double operator()(std::int64_t state) {
    const auto it = cache_.find(state);
    if (it != cache_.end()) return it->second;
    const double value = fn_(grid_.center(state));
    cache_.emplace(state, value);
    return value;
  }

  std::size_t evaluations() const { return cache_.size(); }

 private:
  std::function<double(const Vector&)> fn_;
  const GridSpec& grid_;
  std::unordered_map<std::int64_t, double> cache_;
};

struct ChainAnalysis {
  Matrix transition;
  Vector stationary;
  double conductance_phi = std::numeric_limits<double>::quiet_NaN();  // NaN when not enumerated
  double spectral_gap = 0;
  // Spectral data of D^{1/2} P D^{-1/2}, eigenvalues ascending.
  Vector eigenvalues;
  Matrix eigenvectors;

  std::int64_t state_count() const { return stationary.size(); }
};

inline void to_json(nlohmann::json& j, const ChainAnalysis& c) {
  j = {{"states", c.state_count()},
       {"stationary", std::vector<double>(c.stationary.data(),
                                          c.stationary.data() + c.stationary.size())},
       {"conductance", std::isnan(c.conductance_phi) ? nlohmann::json(nullptr)
                                                     : nlohmann::json(c.conductance_phi)},
       {"spectral_gap", c.spectral_gap}};
}

// Gibbs weights exp(-f) normalized, shifted by min f for stability.
inline Vector gibbs_distribution(const Vector& potential) {
  const double floor = potential.minCoeff();
  Vector w = (-(potential.array() - floor)).exp().matrix();
  return w / w.sum();
}

// Exact conductance by enumerating every subset with stationary mass <= 1/2.
inline double conductance_exact(const ChainAnalysis& chain) {
  const std::int64_t n = chain.state_count();
  if (n > kConductanceStateCap) {
    throw CapacityError("conductance enumeration is limited to " +
                        std::to_string(kConductanceStateCap) + " states");
  }
  if (n < 2) return 1.0;
  // flow(S) = sum_{x in S} out(x) - sum_{x, y in S, x != y} pi_x P_xy.
  const Matrix flow = chain.stationary.asDiagonal() * chain.transition;
  Vector out(n);
  for (int x = 0; x < n; ++x) out(x) = flow.row(x).sum() - flow(x, x);

  double best = std::numeric_limits<double>::infinity();
  double cut = 0.0;
  std::uint32_t set = 0;
  const std::uint32_t total = std::uint32_t{1} << n;
  // Gray-code walk toggles one state per subset.
  for (std::uint32_t k = 1; k < total; ++k) {
    const int v = __builtin_ctz(k);
    const std::uint32_t bit = std::uint32_t{1} << v;
    double internal = 0.0;
    for (std::uint32_t rest = set & ~bit; rest; rest &= rest - 1) {
      const int u = __builtin_ctz(rest);
      internal += flow(v, u) + flow(u, v);
    }
    if (set & bit) {
      set &= ~bit;
      cut -= out(v) - internal;
    } else {
      set |= bit;
      cut += out(v) - internal;
    }
    // Mass is summed afresh so the 1/2 threshold does not see drift.
    double mass = 0.0;
    for (std::uint32_t rest = set; rest; rest &= rest - 1) mass += chain.stationary(__builtin_ctz(rest));
    if (mass > 0.0 && mass <= 0.5 + 1e-12) best = std::min(best, std::max(0.0, cut) / mass);
  }
  return best;
}

// Spectral data and (for tiny chains) conductance of a reversible chain.
inline ChainAnalysis analyze_chain(Matrix transition, Vector stationary) {
  ChainAnalysis c;
  c.transition = std::move(transition);
  c.stationary = std::move(stationary);
  const Vector root = c.stationary.cwiseSqrt();
  Matrix sym = root.asDiagonal() * c.transition * root.cwiseInverse().asDiagonal();
  sym = 0.5 * (sym + sym.transpose());
  const Eigen::SelfAdjointEigenSolver<Matrix> solver(sym);
  c.eigenvalues = solver.eigenvalues();
  c.eigenvectors = solver.eigenvectors();
  const auto n = c.eigenvalues.size();
  c.spectral_gap = n >= 2 ? 1.0 - c.eigenvalues(n - 2) : 1.0;
  if (c.state_count() <= kConductanceStateCap) c.conductance_phi = conductance_exact(c);
  return c;
}

// Lazy Metropolis kernel P_xy = min{1, e^{-(f(y)-f(x))}} / (4d) on grid neighbors.
inline ChainAnalysis gibbs_chain(const Vector& potential, const GridSpec& grid) {
  if (grid.state_count > kExactStateCap) {
    throw CapacityError("exact chain analysis is limited to " +
                        std::to_string(kExactStateCap) + " states");
  }
  const std::int64_t n = grid.state_count;
  if (potential.size() != n) throw ConfigError("potential does not match the grid");
  Matrix p = Matrix::Zero(n, n);
  const double move = 1.0 / (4.0 * grid.dim);
  for (std::int64_t x = 0; x < n; ++x) {
    double leave = 0.0;
    for (int dir = 0; dir < 2 * grid.dim; ++dir) {
      const auto y = grid.neighbor(x, dir);
      if (!y) continue;
      const double pxy = move * metropolis_acceptance(potential(x), potential(*y));
      p(x, *y) = pxy;
      leave += pxy;
    }
    p(x, x) = 1.0 - leave;
  }
  return analyze_chain(std::move(p), gibbs_distribution(potential));
}

inline Vector grid_potential(const Evaluator& evaluator, const GridSpec& grid) {
  Vector values(grid.state_count);
  for (std::int64_t s = 0; s < grid.state_count; ++s) values(s) = evaluator.eval(grid.center(s));
  return values;
}

inline ChainAnalysis exact_chain(const Evaluator& evaluator, const GridSpec& grid) {
  if (grid.state_count > kExactStateCap) {
    throw CapacityError("exact chain analysis is limited to " +
                        std::to_string(kExactStateCap) + " states");
  }
  return gibbs_chain(grid_potential(evaluator, grid), grid);
}

// max |log(p/q)|; infinite when supports differ.
inline double linf_distance(const Vector& p, const Vector& q) {
  double worst = 0.0;
  for (int i = 0; i < p.size(); ++i) {
    if (p(i) == q(i)) continue;
    if (p(i) <= 0.0 || q(i) <= 0.0) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, std::abs(std::log(p(i) / q(i))));
  }
  return worst;
}

// max over rows x of Dist_inf(P^t(x, .), pi), from the spectral decomposition
// P^t(x,y)/pi(y) = 1 + sum_{k>=2} lambda_k^t v_k(x) v_k(y) / sqrt(pi(x) pi(y)).
inline double linf_mixing_distance(const ChainAnalysis& chain, std::int64_t steps) {
  const auto n = chain.state_count();
  if (n == 1) return 0.0;
  // Drop the top eigenpair (eigenvalue 1, vector sqrt(pi)).
  const auto m = n - 1;
  Vector powers(m);
  for (int k = 0; k < m; ++k) {
    powers(k) = std::pow(chain.eigenvalues(k), static_cast<double>(steps));
  }
  const Matrix v = chain.eigenvectors.leftCols(m);
  const Vector inv_root = chain.stationary.cwiseSqrt().cwiseInverse();
  const Matrix excess =
      inv_root.asDiagonal() * (v * powers.asDiagonal() * v.transpose()) * inv_root.asDiagonal();
  double worst = 0.0;
  for (int x = 0; x < n; ++x) {
    for (int y = 0; y < n; ++y) {
      const double e = excess(x, y);
      if (!(e > -1.0)) return std::numeric_limits<double>::infinity();
      worst = std::max(worst, std::abs(std::log1p(e)));
    }
  }
  return worst;
}

// Step count for the walk to reach Dist_inf <= eps_acc:
// ceil(k_mix e^{12 zeta} (a tau d / eps)^2 e^eps max(d ln(a tau sqrt(d)/eps), a tau)).
inline std::int64_t mixing_time_bound(double alpha_lip, double tau, int d, double eps_acc,
                                      double zeta_bound, double k_mix = 64.0) {
  const double scale = alpha_lip * tau;
  const double log_branch = d * std::log(scale * std::sqrt(d) / eps_acc);
  const double value = k_mix * std::exp(12.0 * zeta_bound) *
                       (scale * scale * d * d / (eps_acc * eps_acc)) * std::exp(eps_acc) *
                       std::max(log_branch, scale);
  constexpr double kMax = 9.0e18;
  if (!(value < kMax)) return static_cast<std::int64_t>(kMax);
  return static_cast<std::int64_t>(std::ceil(value));
}

struct SamplerOptions {
  int restart_cap = 64;
  double k_mix = 64.0;
  // Weight of the gauge penalty outside the body; default 2 L diameter.
  std::optional<double> gauge_weight;
  int min_cells_per_axis = 1;
  // Replaces the mixing bound; leaves the theory's accuracy claim unbacked.
  std::optional<std::int64_t> walk_steps;
  std::int64_t state_cap = kWalkStateCap;
};

// f extended from the body C to its enclosing cube:
// f(proj_C t) + L dist(t, C) + w max(0, gauge(t) - 1).
class ExtendedPotential {
 public:
  ExtendedPotential(std::function<double(const Vector&)> fn, Domain body, double lipschitz_l2,
                    std::optional<double> gauge_weight)
      : fn_(std::move(fn)), body_(std::move(body)), lipschitz_(lipschitz_l2) {
    if (!(lipschitz_l2 >= 0.0) || !std::isfinite(lipschitz_l2)) {
      throw ConfigError("Lipschitz constant must be finite and >= 0");
    }
    if (!body_.fills_enclosing_cube()) {
      gauge_weight_ = gauge_weight.value_or(2.0 * lipschitz_l2 * body_.diameter());
    }
    // proj and dist have orthogonal gradients, so together they are sqrt(2) L-Lipschitz.
    const double extension = body_.fills_enclosing_cube() ? lipschitz_ : std::sqrt(2.0) * lipschitz_;
    extended_l2_ = extension + (gauge_weight_ > 0.0 ? gauge_weight_ * body_.gauge_lipschitz() : 0.0);
  }

  double operator()(const Vector& theta) const {
    if (body_.contains(theta, 0.0)) return fn_(theta);
    double value = fn_(body_.project(theta)) + lipschitz_ * body_.distance(theta);
    if (gauge_weight_ > 0.0) value += gauge_weight_ * std::max(0.0, body_.gauge(theta) - 1.0);
    return value;
  }

  const Domain& body() const { return body_; }
  Domain cube() const { return body_.enclosing_cube(); }
  double gauge_weight() const { return gauge_weight_; }
  double lipschitz_l2() const { return extended_l2_; }
  double alpha_inf() const { return extended_l2_ * std::sqrt(static_cast<double>(body_.dim())); }

 private:
  std::function<double(const Vector&)> fn_;
  Domain body_;
  double lipschitz_;
  double gauge_weight_ = 0.0;
  double extended_l2_ = 0.0;
};

struct SampleResult {
  Vector point;
  int restarts = 0;
  std::int64_t walk_steps = 0;  // per attempt
  bool short_cube = false;
  std::optional<GridSpec> grid;
};

// Grid-walk sampler for exp(-f) on `domain` given an inexact evaluator of a
// convex, L_lip2-Lipschitz f. Output law is within Dist_inf 2 zeta + xi of
// the target.
inline SampleResult sample_logconcave(const Evaluator& evaluator, const Domain& domain,
                                      double lipschitz_l2, double xi, std::uint64_t seed,
                                      const SamplerOptions& options = {}) {
  if (!(xi > 0.0)) throw ConfigError("sampler accuracy xi must be > 0");
  const ExtendedPotential potential(evaluator.eval, domain, lipschitz_l2, options.gauge_weight);
  const Domain cube = potential.cube();
  const double alpha = potential.alpha_inf();
  CounterRng rng(seed);

  SampleResult result;
  result.short_cube = alpha * cube.inf_width() < 1.0;
  if (result.short_cube) {
    const double f_center = potential(cube.center());
    for (int attempt = 0; attempt < options.restart_cap; ++attempt) {
      result.restarts = attempt;
      const Vector theta = cube.sample_uniform(rng);
      const double accept = std::min(1.0, std::exp(-(potential(theta) - f_center) - 1.0));
      if (rng.uniform() < accept && domain.contains(theta)) {
        result.point = theta;
        return result;
      }
    }
    throw SamplerError("short-cube rejection exceeded its restart cap");
  }

  GridSpec grid = build_grid(cube, alpha, xi, GridMode::kWalk, options.min_cells_per_axis,
                             options.state_cap);
  result.walk_steps = options.walk_steps.value_or(mixing_time_bound(
      alpha, grid.tau, grid.dim, xi, evaluator.zeta_bound, options.k_mix));
  CachedGridPotential cached([&](const Vector& t) { return potential(t); }, grid);
  const std::int64_t start = grid.locate(domain.center());
  for (int attempt = 0; attempt < options.restart_cap; ++attempt) {
    result.restarts = attempt;
    std::int64_t state = start;
    for (std::int64_t t = 0; t < result.walk_steps; ++t) state = walk_step(state, cached, grid, rng);
    const Vector theta = grid.sample_in_cell(state, rng);
    const double accept = std::min(1.0, std::exp(-(potential(theta) - cached(state)) - 1.0));
    if (rng.uniform() < accept && domain.contains(theta)) {
      result.point = theta;
      result.grid = std::move(grid);
      return result;
    }
  }
  throw SamplerError("grid-walk rejection exceeded its restart cap");
}

// Stationary law of the sampler's walk on the grid it would use, computed
// exactly. This is the discretized output law audited for privacy.
struct GridLaw {
  GridSpec grid;
  Vector potential;
  Vector law;
};

inline GridLaw exact_grid_law(const Evaluator& evaluator, const Domain& domain,
                              double lipschitz_l2, double xi, const SamplerOptions& options = {}) {
  if (!(xi > 0.0)) throw ConfigError("sampler accuracy xi must be > 0");
  const ExtendedPotential potential(evaluator.eval, domain, lipschitz_l2, options.gauge_weight);
  GridLaw out;
  out.grid = build_grid(potential.cube(), potential.alpha_inf(), xi, GridMode::kExact,
                        options.min_cells_per_axis);
  out.potential.resize(out.grid.state_count);
  for (std::int64_t s = 0; s < out.grid.state_count; ++s) {
    out.potential(s) = potential(out.grid.center(s));
  }
  out.law = gibbs_distribution(out.potential);
  return out;
}

}  // namespace dpblo
