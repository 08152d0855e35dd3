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

// Acceptance gate. Runs the thirteen acceptance criteria and prints one
// PASS/FAIL line per criterion.
//
//   acceptance                  all criteria
//   acceptance --criterion N    only criterion N
//
// Exit status is 0 iff every selected criterion passed.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dpblo/dpblo.hpp"

namespace dpblo {
namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects failed checks; the first few are kept for the report line.
class Verdict {
 public:
  void require(bool ok, const std::string& what) {
    ++checks_;
    if (ok) return;
    ++failures_;
    if (failures_ <= 3) notes_ << (failures_ > 1 ? "; " : "") << what;
  }
  void note(const std::string& what) { extra_ << (extra_.tellp() > 0 ? "; " : "") << what; }
  Outcome outcome() const {
    std::ostringstream s;
    s << checks_ - failures_ << "/" << checks_ << " checks";
    if (!extra_.str().empty()) s << "; " << extra_.str();
    if (failures_ > 0) s << "; first failures: " << notes_.str();
    return {failures_ == 0, s.str()};
  }

 private:
  int checks_ = 0;
  int failures_ = 0;
  std::ostringstream notes_;
  std::ostringstream extra_;
};

std::string num(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::vector<std::size_t> Indices(std::size_t n) {
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = i;
  return out;
}

// Every dataset in {-1, +1}^4 with d = 1.
std::vector<Dataset> AllSignDatasets() {
  std::vector<Dataset> bases;
  for (unsigned mask = 0; mask < 16; ++mask) {
    Dataset z;
    for (int i = 0; i < 4; ++i) z.push_back(Record::Constant(1, (mask >> i & 1u) ? 1.0 : -1.0));
    bases.push_back(z);
  }
  return bases;
}

Vector RandomUnit(int d, CounterRng& rng) {
  Vector v(d);
  for (int i = 0; i < d; ++i) v(i) = rng.normal();
  return v / v.norm();
}

// ---------------------------------------------------------------------------

Outcome PureDpAudit() {
  Stopwatch clock;
  Verdict v;
  const InstanceFixture fx = make_hard_instance(1.0, 1.0, 2.0, 1.0, 1);
  const std::vector<Dataset> bases = AllSignDatasets();
  // The default evaluation slack is loose enough that the law can come out
  // flat; a tight slack is audited as well so the check is not vacuous.
  for (const auto& [eps, zeta] :
       {std::pair<double, std::optional<double>>{0.5, std::nullopt}, {1.0, std::nullopt},
        {2.0, std::nullopt}, {0.5, 1e-6}, {1.0, 1e-6}, {2.0, 1e-6}}) {
    ExpMechOptions o;
    o.zeta = zeta;
    o.sampler.min_cells_per_axis = 16;
    const auto law = [&](const Dataset& z) {
      return exponential_mechanism_law(fx.problem, z, fx.constants, eps, o);
    };
    const auto cells = law(bases[0]).grid.state_count;
    v.require(cells <= 64, "eps " + num(eps) + " grid has " + std::to_string(cells) + " cells");
    const AuditReport r = exact_dp_audit(
        "exp", [&](const Dataset& z) { return law(z).law; }, bases, fx.universe, Indices(4), eps,
        0.0);
    v.require(r.trials == 16 * 4 * 2, "enumeration incomplete");
    v.require(r.worst_case <= eps * (1.0 + 1e-9),
              "eps " + num(eps) + " log ratio " + num(r.worst_case));
    v.note("eps " + num(eps) + (zeta ? " tight" : "") + ": max log ratio " +
           num(r.worst_case) + " on " + std::to_string(cells) + " cells");
  }
  const double t = clock.seconds();
  v.require(t < 10.0, "runtime " + num(t) + " s");
  v.note(num(t) + " s");
  return v.outcome();
}

Outcome ApproximateDpAudit() {
  Stopwatch clock;
  Verdict v;
  const InstanceFixture fx = make_hard_instance(1.0, 1.0, 2.0, 1.0, 1);
  const std::vector<Dataset> bases = AllSignDatasets();
  for (const auto& [eps, delta] : {std::pair{1.0, 1e-3}, std::pair{2.0, 1e-4}}) {
    for (const auto& [scale, zeta] :
         {std::pair<double, std::optional<double>>{1.0, std::nullopt}, {100.0, std::nullopt},
          {1.0, 1e-6}, {100.0, 1e-6}}) {
      RegExpMechOptions o;
      o.k_reg *= scale;
      o.zeta = zeta;
      o.sampler.min_cells_per_axis = 16;
      const auto law = [&](const Dataset& z) {
        return regularized_exp_mechanism_law(fx.problem, z, fx.constants, eps, delta, o).law;
      };
      const AuditReport r = exact_dp_audit("reg", law, bases, fx.universe, Indices(4), eps, delta);
      const std::string tag = "(" + num(eps) + ", " + num(delta) + ") K_reg x" + num(scale) +
                              (zeta ? " tight" : "");
      if (scale == 1.0) {
        v.require(r.passed, tag + " hockey-stick " + num(r.worst_case));
      } else {
        v.require(!r.passed, tag + " negative control passed with " + num(r.worst_case));
      }
      v.note(tag + ": " + num(r.worst_case));
    }
  }
  const double t = clock.seconds();
  v.require(t < 30.0, "runtime " + num(t) + " s");
  v.note(num(t) + " s");
  return v.outcome();
}

// Random chains of at most 18 states: paths and small 2-D grids with random
// potentials and uniform perturbations of size zeta.
struct PerturbedChain {
  double zeta = 0;
  ChainAnalysis original;
  ChainAnalysis perturbed;
};

std::vector<PerturbedChain> SmallChainCorpus() {
  CounterRng rng(20260315);
  std::vector<PerturbedChain> corpus;
  for (int trial = 0; trial < 150; ++trial) {
    const double zeta = std::array{0.05, 0.2, 0.5}[trial % 3];
    const GridSpec g =
        trial % 2 ? build_grid(Domain::Cube(Vector::Zero(1), 1.0), 0.0, 1.0, GridMode::kExact,
                               2 + static_cast<int>(rng.below(17)))
                  : build_grid(Domain::Cube(Vector::Zero(2), 1.0), 0.0, 1.0, GridMode::kExact,
                               2 + static_cast<int>(rng.below(3)));
    const auto n = g.state_count;
    Vector f(n), fp(n);
    const double spread = 0.5 + 5.0 * rng.uniform();
    for (int i = 0; i < n; ++i) f(i) = spread * rng.uniform();
    for (int i = 0; i < n; ++i) fp(i) = f(i) + zeta * (2.0 * rng.uniform() - 1.0);
    corpus.push_back({zeta, gibbs_chain(f, g), gibbs_chain(fp, g)});
  }
  return corpus;
}

Outcome ConductanceLemma() {
  Verdict v;
  const auto corpus = SmallChainCorpus();
  double tightest = std::numeric_limits<double>::infinity();
  for (const auto& c : corpus) {
    v.require(c.original.state_count() <= 18, "chain above 18 states");
    const double lower = std::exp(-6.0 * c.zeta) * c.original.conductance_phi;
    v.require(c.perturbed.conductance_phi >= lower - 1e-12,
              "phi' " + num(c.perturbed.conductance_phi) + " < " + num(lower));
    tightest = std::min(tightest, c.perturbed.conductance_phi / c.original.conductance_phi *
                                      std::exp(6.0 * c.zeta));
  }
  v.note(std::to_string(corpus.size()) + " chains; min phi'/(e^{-6 zeta} phi) " + num(tightest));
  return v.outcome();
}

Outcome DistanceLemma() {
  Verdict v;
  const auto corpus = SmallChainCorpus();
  double worst = 0.0;
  for (const auto& c : corpus) {
    const double dist = linf_distance(c.perturbed.stationary, c.original.stationary);
    v.require(dist <= 2.0 * c.zeta + 1e-12, "Dist " + num(dist) + " > 2 zeta " + num(2 * c.zeta));
    worst = std::max(worst, dist / (2.0 * c.zeta));
  }
  // Two states, one pushed up and one down: the bound is attained.
  const GridSpec two = build_grid(Domain::Cube(Vector::Zero(1), 1.0), 0.0, 1.0, GridMode::kExact, 2);
  for (double zeta : {0.05, 0.2, 0.5}) {
    Vector f(2), fp(2);
    f << 0.0, 40.0;
    fp << zeta, 40.0 - zeta;
    const double dist = linf_distance(gibbs_chain(fp, two).stationary, gibbs_chain(f, two).stationary);
    v.require(std::abs(dist - 2.0 * zeta) <= 1e-12, "2-state witness " + num(dist));
  }
  v.note(std::to_string(corpus.size()) + " chains; max Dist/(2 zeta) " + num(worst));
  return v.outcome();
}

Outcome MixingBound() {
  Stopwatch clock;
  Verdict v;
  CounterRng rng(77);
  int chains = 0;
  std::int64_t largest = 0;
  double worst_ratio = 0.0;
  struct Shape {
    int d;
    double tau;
    double alpha;
  };
  const std::vector<Shape> shapes = {{1, 1.0, 0.5}, {1, 1.0, 2.0}, {1, 1.0, 8.0},
                                     {2, 1.0, 1.0}, {2, 0.1, 1.0}};
  for (double acc : {0.1, 0.01}) {
    for (const Shape& shape : shapes) {
      if (shape.d == 2 && (acc == 0.1) != (shape.tau == 1.0)) continue;
      const Domain cube = Domain::Cube(Vector::Zero(shape.d), shape.tau);
      const GridSpec g = build_grid(cube, shape.alpha, acc, GridMode::kExact);
      for (int kind = 0; kind < 2; ++kind) {
        // Convex, alpha-Lipschitz in the inf-norm: a cone or a linear ramp.
        const Vector c = cube.sample_uniform(rng);
        Vector w = Vector::Zero(shape.d);
        w(static_cast<int>(rng.below(shape.d))) = rng.uniform() < 0.5 ? -1.0 : 1.0;
        Vector f(g.state_count);
        for (std::int64_t s = 0; s < g.state_count; ++s) {
          const Vector x = g.center(s);
          f(s) = kind == 0 ? shape.alpha * (x - c).lpNorm<Eigen::Infinity>()
                           : shape.alpha * w.dot(x);
        }
        for (double zeta : {0.0, 0.05}) {
          Vector fp = f;
          for (int i = 0; i < fp.size(); ++i) fp(i) += zeta * (2.0 * rng.uniform() - 1.0);
          const ChainAnalysis chain = gibbs_chain(fp, g);
          const auto t = mixing_time_bound(shape.alpha, g.tau, shape.d, acc, zeta);
          const double dist = linf_mixing_distance(chain, t);
          ++chains;
          largest = std::max(largest, g.state_count);
          worst_ratio = std::max(worst_ratio, dist / acc);
          v.require(dist <= acc, std::to_string(g.state_count) + " states at accuracy " +
                                     num(acc) + ": " + num(dist));
        }
      }
    }
  }
  const double t = clock.seconds();
  v.require(t < 120.0, "runtime " + num(t) + " s");
  v.note(std::to_string(chains) + " chains up to " + std::to_string(largest) +
         " states; max distance/accuracy " + num(worst_ratio) + "; " + num(t) + " s");
  return v.outcome();
}

Outcome HypergradientCorrectness() {
  Verdict v;
  struct Case {
    InstanceFixture fx;
    double tolerance;
  };
  const std::vector<Case> cases = {{make_quadratic_instance(3, 2, 31), 1e-4},
                                   {make_ridge_hyperparam_instance(3, 32), 1e-3}};
  CounterRng rng(33);
  for (const Case& c : cases) {
    const BilevelProblem& p = c.fx.problem;
    const Dataset data = c.fx.sample_dataset(16, rng);
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      const Vector x = p.domain_x.sample_uniform(rng);
      const InnerSolveResult inner = solve_lower_level(p, c.fx.constants, data, x, 1e-10);
      const Vector q = approx_hypergradient(p, data, x, inner.y).vector;
      const Vector fd = finite_diff_phi_gradient(p, c.fx.constants, data, x, 1e-4, 1e-11);
      const double rel = (q - fd).norm() / fd.norm();
      worst = std::max(worst, rel);
      v.require(rel <= c.tolerance, c.fx.name + " relative error " + num(rel));
    }
    v.note(c.fx.name + " max relative error " + num(worst));
  }
  return v.outcome();
}

Outcome BiasConstant() {
  Verdict v;
  CounterRng rng(41);
  // The quadratic fixture has C = 0: the hypergradient is exact for every y.
  // Equality is then checked up to floating-point rounding.
  const InstanceFixture quad = make_quadratic_instance(3, 3, 42);
  const InstanceFixture ridge = make_ridge_hyperparam_instance(3, 43);
  for (const InstanceFixture* fx : {&quad, &ridge}) {
    const BilevelProblem& p = fx->problem;
    const Dataset data = fx->sample_dataset(12, rng);
    const double C = derive_constants(fx->constants, static_cast<int>(data.size())).C;
    double worst_excess = -std::numeric_limits<double>::infinity();
    int trials = 0;
    for (double r : {1e-1, 1e-2, 1e-3}) {
      for (int i = 0; i < 20; ++i) {
        const Vector x = p.domain_x.sample_uniform(rng);
        const Vector ystar = fx->y_star(x, data);
        const Vector y = ystar + r * RandomUnit(p.dim_y, rng);
        const Vector grad = fx->grad_phi(x, data);
        const double bias = (approx_hypergradient(p, data, x, y).vector - grad).norm();
        const double bound = C * (y - ystar).norm();
        const double rounding = 1e-12 * (1.0 + grad.norm());
        v.require(bias <= bound + rounding,
                  fx->name + " r " + num(r) + ": " + num(bias) + " > " + num(bound));
        worst_excess = std::max(worst_excess, bias - bound);
        ++trials;
      }
    }
    v.note(fx->name + " C " + num(C) + ", " + std::to_string(trials) +
           " trials, max(bias - C r) " + num(worst_excess));
  }
  return v.outcome();
}

Outcome SensitivityBounds() {
  Verdict v;
  CounterRng rng(51);
  {
    const InstanceFixture fx = make_hard_instance(1.0, 1.0, 2.0, 1.0, 3);
    const double s = derive_constants(fx.constants, 4).s;
    const Vector x0 = fx.problem.domain_x.center();
    double worst = 0.0;
    int swaps = 0;
    for (int b = 0; b < 8; ++b) {
      const Dataset data = sample_hard_dataset(4, 3, rng);
      for (int k = 0; k < 8; ++k) {
        const Vector x = fx.problem.domain_x.sample_uniform(rng);
        const double base = fx.phi(x, data) - fx.phi(x0, data);
        for (std::size_t i = 0; i < 4; ++i) {
          for (const Record& z : fx.universe) {
            Dataset swapped = data;
            swapped[i] = z;
            const double dev = std::abs(base - fx.phi(x, swapped) + fx.phi(x0, swapped));
            worst = std::max(worst, dev);
            ++swaps;
            v.require(dev <= s * (1.0 + 1e-12), "hard score deviation " + num(dev));
          }
        }
      }
    }
    v.require(fx.universe.size() == 8, "hard universe is not 8 records");
    v.note("score: " + std::to_string(swaps) + " swaps, max " + num(worst) + " vs s " + num(s));
  }
  const InstanceFixture fixtures[] = {make_quadratic_instance(2, 2, 52),
                                      make_hard_instance(1.0, 1.0, 2.0, 1.0, 3)};
  for (const InstanceFixture& fx : fixtures) {
    const int n = 4;
    const BilevelProblem& p = fx.problem;
    const DerivedConstants dc = derive_constants(fx.constants, n);
    const double alpha = dc.C > 0.0 ? std::min(dc.K / (n * dc.C), 1e-8) : 1e-8;
    const Dataset data = fx.sample_dataset(n, rng);
    const std::vector<Record> candidates = internal::swap_candidates(fx, 16, rng);
    auto q = [&](const Dataset& z, const Vector& x) {
      const InnerSolveResult inner = solve_lower_level(p, fx.constants, z, x, alpha);
      return approx_hypergradient(p, z, x, inner.y).vector;
    };
    double worst = 0.0;
    int swaps = 0;
    for (int k = 0; k < 4; ++k) {
      const Vector x = p.domain_x.sample_uniform(rng);
      const Vector base = q(data, x);
      for (std::size_t i = 0; i < data.size(); ++i) {
        for (const Record& z : candidates) {
          Dataset swapped = data;
          swapped[i] = z;
          const double dev = (q(swapped, x) - base).norm();
          worst = std::max(worst, dev);
          ++swaps;
          v.require(dev <= 4.0 * dc.K / n * (1.0 + 1e-12), fx.name + " q_t deviation " + num(dev));
        }
      }
    }
    v.require(swaps >= 64, "too few swaps");
    v.note(fx.name + " q_t: " + std::to_string(swaps) + " swaps, max " + num(worst) +
           " vs 4K/n " + num(4.0 * dc.K / n));
  }
  return v.outcome();
}

Outcome StabilityFacts() {
  Verdict v;
  CounterRng rng(61);
  const double alpha = 1e-9;
  const InstanceFixture fixtures[] = {make_hard_instance(1.0, 1.0, 2.0, 1.0, 2),
                                      make_quadratic_instance(2, 3, 62)};
  for (const InstanceFixture& fx : fixtures) {
    const BilevelProblem& p = fx.problem;
    const AssumptionConstants& a = fx.constants;
    double worst_data = 0.0, worst_x = 0.0;
    for (int draw = 0; draw < 200; ++draw) {
      const int n = 2 + static_cast<int>(rng.below(15));
      const Dataset data = fx.sample_dataset(n, rng);
      Dataset swapped = data;
      swapped[rng.below(n)] = fx.sample_dataset(1, rng)[0];
      const Vector x = p.domain_x.sample_uniform(rng);
      const Vector x2 = p.domain_x.sample_uniform(rng);
      const Vector y = solve_lower_level(p, a, data, x, alpha).y;
      const Vector y_swapped = solve_lower_level(p, a, swapped, x, alpha).y;
      const Vector y_moved = solve_lower_level(p, a, data, x2, alpha).y;
      const double data_bound = 2.0 * a.L_gy / (a.mu_g * n) + 2.0 * alpha;
      const double x_bound = a.beta_gxy / a.mu_g * (x - x2).norm() + 2.0 * alpha;
      const double data_gap = (y - y_swapped).norm();
      const double x_gap = (y - y_moved).norm();
      v.require(data_gap <= data_bound, fx.name + " data move " + num(data_gap));
      v.require(x_gap <= x_bound, fx.name + " x move " + num(x_gap));
      worst_data = std::max(worst_data, data_gap / data_bound);
      worst_x = std::max(worst_x, x_gap / x_bound);
    }
    v.note(fx.name + " max ratios " + num(worst_data) + " (data), " + num(worst_x) + " (x)");
  }
  return v.outcome();
}

// Least-squares slope of log y against log x.
double LogLogSlope(const std::vector<double>& x, const std::vector<double>& y) {
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= x.size();
  my /= y.size();
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
    sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
  }
  return sxy / sxx;
}

Outcome ExpMechRate() {
  Stopwatch clock;
  Verdict v;
  const int d = 2;
  const double eps = 1.0;
  const int trials = 50;
  const InstanceFixture fx = make_hard_instance(1.0, 1.0, 2.0, 1.0, d);
  const std::vector<double> ns = {8, 16, 32, 64, 128};
  std::vector<double> means;
  std::ostringstream table;
  for (double n_value : ns) {
    const int n = static_cast<int>(n_value);
    double total = 0.0;
    for (int t = 0; t < trials; ++t) {
      CounterRng rng(derive_seed(1010, static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(t)));
      const Dataset data = sample_hard_dataset(n, d, rng);
      const MechanismResult r = exponential_mechanism(
          fx.problem, data, fx.constants, eps, derive_seed(2020, static_cast<std::uint64_t>(n),
                                                           static_cast<std::uint64_t>(t)));
      total += fx.phi(r.x_out, data) - *fx.phi_star(data);
    }
    const double mean = total / trials;
    means.push_back(mean);
    const double psi = derive_constants(fx.constants, n).Psi;
    const double cap = 10.0 * psi * d / (eps * n);
    v.require(mean <= cap, "n " + std::to_string(n) + " mean " + num(mean) + " > " + num(cap));
    table << (table.tellp() > 0 ? ", " : "") << n << ":" << num(mean);
  }
  for (std::size_t i = 1; i < means.size(); ++i) {
    v.require(means[i] < means[i - 1], "not decreasing at n " + num(ns[i]));
  }
  const double slope = LogLogSlope(ns, means);
  v.require(slope >= -1.4 && slope <= -0.6, "slope " + num(slope));
  const double t = clock.seconds();
  v.require(t < 300.0, "runtime " + num(t) + " s");
  v.note("means " + table.str() + "; slope " + num(slope) + "; " + num(t) + " s");
  return v.outcome();
}

RidgeOptions WellConditionedRidge() {
  RidgeOptions o;
  o.floor = 1.0;
  o.x_low = 0.0;
  o.x_high = 1.0;
  o.target_x = 0.5;
  return o;
}

Outcome Alg1Trend() {
  Stopwatch clock;
  Verdict v;
  const InstanceFixture fx = make_ridge_hyperparam_instance(2, 1, WellConditionedRidge());
  const BilevelProblem& p = fx.problem;
  const double eps = 1.0, delta = 1e-5;
  const int trials = 30;
  std::vector<double> last_means, output_means;
  std::ostringstream table;
  for (int n : {100, 1000, 10000}) {
    double last_total = 0.0, output_total = 0.0;
    for (int t = 0; t < trials; ++t) {
      CounterRng rng(derive_seed(7070, static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(t)));
      const Dataset data = fx.sample_dataset(n, rng);
      const MechanismResult r =
          dp_second_order_gd(p, data, fx.constants, eps, delta, p.domain_x.center(),
                             derive_seed(8080, static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(t)));
      last_total += fx.grad_phi(r.trajectory.back(), data).norm();
      output_total += fx.grad_phi(r.x_out, data).norm();
    }
    last_means.push_back(last_total / trials);
    output_means.push_back(output_total / trials);
    table << (table.tellp() > 0 ? ", " : "") << "eps n " << n << ": " << num(last_means.back())
          << " (output " << num(output_means.back()) << ")";
  }
  for (std::size_t i = 1; i < last_means.size(); ++i) {
    v.require(last_means[i] < last_means[i - 1],
              "mean grad norm not decreasing at step " + std::to_string(i));
  }

  // Noiseless control on the same fixture. This instance has an interior,
  // well-conditioned optimum at n = 1000, so plain gradient norm is the right
  // stationarity measure.
  CounterRng rng(2);
  const Dataset data = fx.sample_dataset(1000, rng);
  Alg1Options control;
  control.sigma = 0.0;
  control.unsafe = true;
  control.T = 200;
  control.alpha = 1e-10;
  control.eta = 300.0;
  const MechanismResult r =
      dp_second_order_gd(p, data, fx.constants, eps, delta, p.domain_x.center(), 73, control);
  const double control_norm = fx.grad_phi(r.trajectory.back(), data).norm();
  v.require(control_norm <= 1e-6, "noiseless control " + num(control_norm));
  const double t = clock.seconds();
  v.require(t < 300.0, "runtime " + num(t) + " s");
  v.note(table.str() + "; noiseless control " + num(control_norm) + "; " + num(t) + " s");
  return v.outcome();
}

Outcome ScheduleFidelity() {
  Verdict v;
  CounterRng rng(81);
  const InstanceFixture quad = make_quadratic_instance(2, 2, 82);
  const InstanceFixture ridge = make_ridge_hyperparam_instance(2, 83);
  for (int draw = 0; draw < 20; ++draw) {
    const InstanceFixture& fx = draw % 2 ? ridge : quad;
    const int n = 4 + static_cast<int>(rng.below(29));
    const double eps = 0.2 + 2.0 * rng.uniform();
    const double delta = std::pow(10.0, -2.0 - 6.0 * rng.uniform());
    const Dataset data = fx.sample_dataset(n, rng);
    const Vector x0 = fx.problem.domain_x.sample_uniform(rng);
    Alg1Options o;
    o.keep_trajectory = false;
    const MechanismResult r =
        dp_second_order_gd(fx.problem, data, fx.constants, eps, delta, x0, rng(), o);
    const Ledger& l = r.ledger;

    // Independent recomputation of the schedule.
    const DerivedConstants dc = derive_constants(fx.constants, n);
    const int d = fx.problem.dim_x;
    const double gap = dc.L_bar * fx.constants.D_x;
    const double log_inv_delta = std::log(1.0 / delta);
    const double root_d_log = std::sqrt(d * log_inv_delta);
    const auto T = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(
               std::ceil((n * eps / root_d_log) * (std::sqrt(dc.beta_phi * gap) / dc.K))));
    const double sigma = 32.0 * dc.K * std::sqrt(static_cast<double>(T) * log_inv_delta) / (n * eps);
    const double eta = 1.0 / (2.0 * dc.beta_phi);
    const double alpha =
        std::min(dc.K / (n * dc.C),
                 (1.0 / dc.C) * std::sqrt(dc.K * std::sqrt(gap * dc.beta_phi) * root_d_log / (eps * n)));
    const std::string tag = fx.name + " draw " + std::to_string(draw);
    v.require(l.param("T") == static_cast<double>(T), tag + " T");
    v.require(l.param("sigma") == sigma, tag + " sigma");
    v.require(l.param("eta") == eta, tag + " eta");
    v.require(l.param("alpha") == alpha, tag + " alpha");
    v.require(l.dp_valid, tag + " not dp_valid");
  }

  const InstanceFixture hard = make_hard_instance(1.0, 1.0, 2.0, 1.0, 1);
  for (int draw = 0; draw < 20; ++draw) {
    const int n = 4 + static_cast<int>(rng.below(29));
    const double eps = 0.5 + 3.0 * rng.uniform();
    const double delta = std::pow(10.0, -2.0 - 6.0 * rng.uniform());
    const Dataset data = sample_hard_dataset(n, 1, rng);
    WarmStartOptions o;
    o.stage_a.zeta = 0.01;
    o.stage_b.eta = 0.5;
    o.stage_b.keep_trajectory = false;
    const MechanismResult r = warm_start(hard.problem, data, hard.constants, eps, delta, rng(), o);
    const Ledger& a = r.ledger.stages.at(0);
    const Ledger& b = r.ledger.stages.at(1);
    const double spent_eps = a.spent.epsilon + b.spent.epsilon;
    const double spent_delta = a.spent.delta + b.spent.delta;
    const std::string tag = "warm start draw " + std::to_string(draw);
    v.require(spent_eps <= eps && spent_delta <= delta, tag + " stages exceed the budget");
    v.require(r.budget_spent.epsilon == spent_eps && r.budget_spent.delta == spent_delta,
              tag + " total disagrees with stages");
  }
  v.note("20 noisy-GD schedules, 20 warm-start splits");
  return v.outcome();
}

Outcome Determinism() {
  Verdict v;
  CounterRng rng(91);
  const InstanceFixture hard1 = make_hard_instance(1.0, 1.0, 2.0, 1.0, 1);
  const InstanceFixture hard2 = make_hard_instance(1.0, 1.0, 2.0, 1.0, 2);
  const InstanceFixture quad = make_quadratic_instance(2, 2, 92);
  const InstanceFixture ridge = make_ridge_hyperparam_instance(2, 93);
  for (int c = 0; c < 50; ++c) {
    const int kind = c % 5;
    const double eps = 0.5 + 1.5 * rng.uniform();
    const double delta = std::pow(10.0, -3.0 - 3.0 * rng.uniform());
    const std::uint64_t seed = rng();
    const int n = 4 + static_cast<int>(rng.below(13));
    const InstanceFixture* fx = nullptr;
    MechanismResult r;
    Dataset data;
    if (kind == 0) {
      fx = c % 2 ? &hard1 : &hard2;
      data = fx->sample_dataset(n, rng);
      ExpMechOptions o;
      o.zeta = 0.01;
      r = exponential_mechanism(fx->problem, data, fx->constants, eps, seed, o);
    } else if (kind == 1) {
      fx = &quad;
      data = fx->sample_dataset(n, rng);
      RegExpMechOptions o;
      o.zeta = 0.01;
      if (c % 2) o.mode = RegMode::kPopulation;
      r = regularized_exp_mechanism(fx->problem, data, fx->constants, eps, delta, seed, o);
    } else if (kind == 2) {
      fx = &quad;
      data = fx->sample_dataset(n, rng);
      GradNormOptions o;
      o.zeta = 0.01;
      r = grad_norm_exp_mechanism(fx->problem, data, fx->constants, eps, seed, o);
    } else if (kind == 3) {
      fx = c % 2 ? &ridge : &quad;
      data = fx->sample_dataset(n, rng);
      r = dp_second_order_gd(fx->problem, data, fx->constants, eps, delta,
                             fx->problem.domain_x.sample_uniform(rng), seed);
    } else {
      fx = &hard1;
      data = fx->sample_dataset(n, rng);
      WarmStartOptions o;
      o.stage_a.zeta = 0.01;
      o.stage_b.eta = 0.5;
      r = warm_start(fx->problem, data, fx->constants, eps, delta, seed, o);
    }
    const MechanismResult direct = replay(fx->problem, data, fx->constants, r.ledger);
    const Ledger parsed = nlohmann::json(r.ledger).get<Ledger>();
    const MechanismResult via_json = replay(fx->problem, data, fx->constants, parsed);
    const std::string tag = "case " + std::to_string(c) + " " + r.ledger.mechanism;
    v.require(direct.x_out == r.x_out, tag + " replay differs");
    v.require(via_json.x_out == r.x_out, tag + " JSON replay differs");
  }
  v.note("50 cases, 10 per mechanism, replayed directly and through JSON");
  return v.outcome();
}

const std::vector<std::pair<std::string, std::function<Outcome()>>>& Criteria() {
  static const std::vector<std::pair<std::string, std::function<Outcome()>>> all = {
      {"exact pure-DP audit of the exponential mechanism", PureDpAudit},
      {"exact approximate-DP audit of the regularized mechanism", ApproximateDpAudit},
      {"conductance under perturbation", ConductanceLemma},
      {"stationary distance under perturbation", DistanceLemma},
      {"mixing-time bound validity", MixingBound},
      {"hypergradient against finite differences", HypergradientCorrectness},
      {"hypergradient bias constant", BiasConstant},
      {"sensitivity bounds", SensitivityBounds},
      {"lower-level stability", StabilityFacts},
      {"exponential-mechanism rate", ExpMechRate},
      {"noisy-GD utility trend", Alg1Trend},
      {"noisy-GD schedule fidelity", ScheduleFidelity},
      {"replay determinism", Determinism},
  };
  return all;
}

}  // namespace
}  // namespace dpblo

int main(int argc, char** argv) {
  const auto& criteria = dpblo::Criteria();
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--criterion" && i + 1 < argc) {
      selected.push_back(std::atoi(argv[++i]));
    } else {
      std::cerr << "usage: acceptance [--criterion N]...\n";
      return 2;
    }
  }
  if (selected.empty()) {
    for (std::size_t i = 1; i <= criteria.size(); ++i) selected.push_back(static_cast<int>(i));
  }
  bool all_pass = true;
  for (int id : selected) {
    if (id < 1 || id > static_cast<int>(criteria.size())) {
      std::cerr << "no criterion " << id << "\n";
      return 2;
    }
    const auto& [name, check] = criteria[id - 1];
    dpblo::Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    all_pass = all_pass && o.pass;
    std::cout << "criterion " << id << " [" << name << "]: " << (o.pass ? "PASS" : "FAIL")
              << " (" << o.detail << ")" << std::endl;
  }
  return all_pass ? 0 : 1;
}
