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
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpblo/domain.hpp"
#include "dpblo/rng.hpp"
#include "dpblo/types.hpp"

namespace dpblo {

// Upper level f(x, y; z) and strongly convex lower level g(x, y; z). The
// empirical objectives are dataset averages of these per-record callbacks.
struct BilevelProblem {
  using Scalar = std::function<double(const Vector& x, const Vector& y, const Record& z)>;
  using Gradient = std::function<Vector(const Vector& x, const Vector& y, const Record& z)>;
  using Hessian = std::function<Matrix(const Vector& x, const Vector& y, const Record& z)>;

  int dim_x = 0;
  int dim_y = 0;
  Scalar f;
  Gradient grad_f_x;
  Gradient grad_f_y;
  Scalar g;
  Gradient grad_g_y;
  Hessian hess_g_xy;  // dim_x by dim_y
  Hessian hess_g_yy;  // dim_y by dim_y
  Domain domain_x = Domain::Ball(Vector(), 0.0);
  // Compact set holding every lower-level minimizer.
  Domain domain_y = Domain::Ball(Vector(), 0.0);

  Domain y_box() const { return Domain::Box(domain_y.low(), domain_y.high()); }
};

namespace internal {

template <typename Fn>
auto dataset_mean(const Dataset& data, Fn&& per_record) {
  auto total = per_record(data.front());
  for (std::size_t i = 1; i < data.size(); ++i) total += per_record(data[i]);
  return decltype(total)(total / static_cast<double>(data.size()));
}

}  // namespace internal

inline double mean_f(const BilevelProblem& p, const Dataset& data, const Vector& x,
                     const Vector& y) {
  return internal::dataset_mean(data, [&](const Record& z) { return p.f(x, y, z); });
}
inline Vector mean_grad_f_x(const BilevelProblem& p, const Dataset& data, const Vector& x,
                            const Vector& y) {
  return internal::dataset_mean(data, [&](const Record& z) { return p.grad_f_x(x, y, z); });
}
inline Vector mean_grad_f_y(const BilevelProblem& p, const Dataset& data, const Vector& x,
                            const Vector& y) {
  return internal::dataset_mean(data, [&](const Record& z) { return p.grad_f_y(x, y, z); });
}
inline Vector mean_grad_g_y(const BilevelProblem& p, const Dataset& data, const Vector& x,
                            const Vector& y) {
  return internal::dataset_mean(data, [&](const Record& z) { return p.grad_g_y(x, y, z); });
}
inline Matrix mean_hess_g_xy(const BilevelProblem& p, const Dataset& data, const Vector& x,
                             const Vector& y) {
  return internal::dataset_mean(data, [&](const Record& z) { return p.hess_g_xy(x, y, z); });
}
inline Matrix mean_hess_g_yy(const BilevelProblem& p, const Dataset& data, const Vector& x,
                             const Vector& y) {
  return internal::dataset_mean(data, [&](const Record& z) { return p.hess_g_yy(x, y, z); });
}

inline double spectral_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  return Eigen::JacobiSVD<Matrix>(m).singularValues()(0);
}

// Lipschitz, smoothness and strong-convexity constants declared by the caller.
struct AssumptionConstants {
  double L_fx = 0, L_fy = 0, mu_g = 0, L_gy = 0;
  double beta_fyy = 0, beta_fxx = 0, beta_fxy = 0, beta_gxy = 0, beta_gyy = 0;
  double M_gxy = 0, M_gyy = 0, C_gxy = 0, C_gyy = 0;
  double D_x = 0, D_y = 0;

  // Field order matches the JSON keys.
  auto fields() const {
    return std::vector<std::pair<const char*, double>>{
        {"L_fx", L_fx},       {"L_fy", L_fy},         {"mu_g", mu_g},
        {"L_gy", L_gy},       {"beta_fyy", beta_fyy}, {"beta_fxx", beta_fxx},
        {"beta_fxy", beta_fxy}, {"beta_gxy", beta_gxy}, {"beta_gyy", beta_gyy},
        {"M_gxy", M_gxy},     {"M_gyy", M_gyy},       {"C_gxy", C_gxy},
        {"C_gyy", C_gyy},     {"D_x", D_x},           {"D_y", D_y}};
  }

  void validate() const {
    for (const auto& [name, value] : fields()) {
      if (!std::isfinite(value) || value < 0.0) {
        throw ConfigError(std::string("constant ") + name + " must be finite and >= 0");
      }
    }
    if (!(mu_g > 0.0)) throw ConfigError("mu_g must be > 0");
    if (!(D_x > 0.0) || !(D_y > 0.0)) throw ConfigError("D_x and D_y must be > 0");
    if (D_y > (L_gy / mu_g) * (1.0 + 1e-12)) {
      throw ConfigError("D_y exceeds L_gy / mu_g");
    }
  }
};

inline void to_json(nlohmann::json& j, const AssumptionConstants& a) {
  j = nlohmann::json::object();
  for (const auto& [name, value] : a.fields()) j[name] = value;
}

inline void from_json(const nlohmann::json& j, AssumptionConstants& a) {
  if (!j.is_object()) throw ConfigError("assumption constants must be a JSON object");
  AssumptionConstants out;
  double* slots[] = {&out.L_fx,     &out.L_fy,     &out.mu_g,     &out.L_gy,  &out.beta_fyy,
                     &out.beta_fxx, &out.beta_fxy, &out.beta_gxy, &out.beta_gyy,
                     &out.M_gxy,    &out.M_gyy,    &out.C_gxy,    &out.C_gyy, &out.D_x,
                     &out.D_y};
  const auto names = out.fields();
  for (const auto& item : j.items()) {
    const auto it = std::find_if(names.begin(), names.end(),
                                 [&](const auto& f) { return item.key() == f.first; });
    if (it == names.end()) throw ConfigError("unknown constant: " + item.key());
    if (!item.value().is_number()) throw ConfigError("constant " + item.key() + " must be a number");
    *slots[it - names.begin()] = item.value().get<double>();
  }
  for (const auto& [name, value] : names) {
    if (!j.contains(name)) throw ConfigError(std::string("missing constant: ") + name);
  }
  a = out;
}

struct DerivedConstants {
  double s = 0;         // score sensitivity of the exponential mechanism
  double G = 0;         // Lipschitz constant used by the regularized mechanism
  double C = 0;         // hypergradient bias per unit of lower-level error
  double K = 0;         // hypergradient sensitivity is at most 4K/n
  double beta_phi = 0;  // smoothness of the hyperobjective
  double L_bar = 0;     // hypergradient norm bound
  double Psi = 0;       // warm-start excess risk scale
};

inline DerivedConstants derive_constants(const AssumptionConstants& a, int n) {
  a.validate();
  if (n < 1) throw ConfigError("n must be >= 1");
  const double mu = a.mu_g;
  const double mu2 = mu * mu;
  const double mu3 = mu2 * mu;
  DerivedConstants d;
  d.s = (2.0 / n) * (a.L_fx * a.D_x + a.L_fy * a.D_y) + 4.0 * a.L_fy * a.L_gy / mu;
  d.G = a.L_fx + a.L_fy * a.beta_gxy / mu + a.L_gy * a.beta_fxy / mu;
  d.C = a.beta_fxy + a.beta_fyy * a.beta_gxy / mu +
        a.L_fy * (a.C_gxy / mu + a.C_gyy * a.beta_gxy / mu2);
  d.L_bar = a.L_fx + a.beta_gxy * a.L_fy / mu;
  d.K = 2.0 * (a.beta_fxy * a.L_gy / mu + 2.0 * d.L_bar +
               a.beta_gxy * a.beta_fyy * a.L_gy / mu2 + a.L_fy * a.C_gxy * a.L_gy / mu2 +
               a.L_fy * a.beta_gxy * a.L_gy * a.C_gyy / mu3 +
               a.L_fy * a.beta_gyy * a.beta_gxy / mu2);
  d.beta_phi = a.beta_fxx + 2.0 * a.beta_fxy * a.beta_gxy / mu +
               a.beta_gxy * a.beta_gxy * a.beta_fyy / mu2 +
               (a.L_fy * a.beta_gxy / mu2) * (a.M_gyy + a.C_gyy * a.beta_gxy / mu) +
               a.L_fy * a.C_gxy * a.beta_gxy / mu2 + a.L_fy * a.M_gxy / mu;
  d.Psi = a.L_fx * a.D_x + a.L_fy * a.D_y + a.L_fy * a.L_gy / mu;
  return d;
}

inline void to_json(nlohmann::json& j, const DerivedConstants& d) {
  j = {{"s", d.s},         {"G", d.G},         {"C", d.C},    {"K", d.K},
       {"beta_phi", d.beta_phi}, {"L_bar", d.L_bar}, {"Psi", d.Psi}};
}

// Worst observed ratio of an empirical quantity to its declared bound.
struct ProbeEntry {
  std::string constant;
  double declared = 0;
  double worst_ratio = 0;
  bool violated = false;
  // Witness of the worst ratio.
  Vector x, x_other, y, y_other;
  std::size_t record_index = 0;
};

struct ProbeReport {
  std::vector<ProbeEntry> entries;

  bool any_violation() const {
    return std::any_of(entries.begin(), entries.end(), [](const auto& e) { return e.violated; });
  }
  const ProbeEntry* find(const std::string& name) const {
    for (const auto& e : entries) {
      if (e.constant == name) return &e;
    }
    return nullptr;
  }
};

// Random spot checks of the declared constants. Can falsify, never certify.
inline ProbeReport probe_assumptions(const BilevelProblem& p, const AssumptionConstants& a,
                                     const Dataset& data, int trials, std::uint64_t seed) {
  ProbeReport report;
  if (trials <= 0) return report;
  require_nonempty(data, "probe_assumptions");
  constexpr double kSlack = 1e-6;

  std::vector<ProbeEntry> entries;
  auto entry = [&](const std::string& name, double declared) -> ProbeEntry& {
    for (auto& e : entries) {
      if (e.constant == name) return e;
    }
    ProbeEntry e;
    e.constant = name;
    e.declared = declared;
    entries.push_back(e);
    return entries.back();
  };
  // observed <= declared * scale + slack is the inequality under test.
  auto check = [&](const std::string& name, double declared, double observed, double scale,
                   const Vector& x, const Vector& x2, const Vector& y, const Vector& y2,
                   std::size_t index) {
    ProbeEntry& e = entry(name, declared);
    const double budget = declared * scale;
    double ratio;
    if (budget > 0.0) {
      ratio = observed / budget;
    } else {
      ratio = observed > kSlack ? std::numeric_limits<double>::infinity() : 0.0;
    }
    if (ratio > e.worst_ratio || (e.x.size() == 0)) {
      e.worst_ratio = std::max(e.worst_ratio, ratio);
      e.x = x;
      e.x_other = x2;
      e.y = y;
      e.y_other = y2;
      e.record_index = index;
    }
    if (observed > budget + kSlack) e.violated = true;
  };

  const Vector none;
  check("D_x", a.D_x, p.domain_x.diameter(), 1.0, none, none, none, none, 0);
  check("D_y", a.D_y, p.domain_y.diameter(), 1.0, none, none, none, none, 0);

  CounterRng rng(seed);
  for (int t = 0; t < trials; ++t) {
    const Vector x = p.domain_x.sample_uniform(rng);
    const Vector x2 = p.domain_x.sample_uniform(rng);
    const Vector y = p.domain_y.sample_uniform(rng);
    const Vector y2 = p.domain_y.sample_uniform(rng);
    const std::size_t i = rng.below(data.size());
    const Record& z = data[i];
    const double dx = (x - x2).norm();
    const double dy = (y - y2).norm();

    const Vector fx = p.grad_f_x(x, y, z);
    const Vector fy = p.grad_f_y(x, y, z);
    check("L_fx", a.L_fx, fx.norm(), 1.0, x, x, y, y, i);
    check("L_fy", a.L_fy, fy.norm(), 1.0, x, x, y, y, i);
    check("L_gy", a.L_gy, p.grad_g_y(x, y, z).norm(), 1.0, x, x, y, y, i);

    const Matrix hyy = p.hess_g_yy(x, y, z);
    const Matrix hxy = p.hess_g_xy(x, y, z);
    const double lambda_min =
        Eigen::SelfAdjointEigenSolver<Matrix>(0.5 * (hyy + hyy.transpose()),
                                              Eigen::EigenvaluesOnly)
            .eigenvalues()
            .minCoeff();
    {
      // mu_g is a lower bound, so the ratio is declared over observed.
      ProbeEntry& e = entry("mu_g", a.mu_g);
      const double ratio = lambda_min > 0.0 ? a.mu_g / lambda_min
                                            : std::numeric_limits<double>::infinity();
      if (ratio > e.worst_ratio || e.x.size() == 0) {
        e.worst_ratio = std::max(e.worst_ratio, ratio);
        e.x = x;
        e.y = y;
        e.record_index = i;
      }
      if (a.mu_g > lambda_min + kSlack) e.violated = true;
    }
    check("beta_gyy", a.beta_gyy, spectral_norm(hyy), 1.0, x, x, y, y, i);
    check("beta_gxy", a.beta_gxy, spectral_norm(hxy), 1.0, x, x, y, y, i);

    check("beta_fxx", a.beta_fxx, (fx - p.grad_f_x(x2, y, z)).norm(), dx, x, x2, y, y, i);
    check("beta_fyy", a.beta_fyy, (fy - p.grad_f_y(x, y2, z)).norm(), dy, x, x, y, y2, i);
    check("beta_fxy", a.beta_fxy, (fx - p.grad_f_x(x, y2, z)).norm(), dy, x, x, y, y2, i);
    check("beta_fxy", a.beta_fxy, (fy - p.grad_f_y(x2, y, z)).norm(), dx, x, x2, y, y, i);
    check("M_gxy", a.M_gxy, spectral_norm(hxy - p.hess_g_xy(x2, y, z)), dx, x, x2, y, y, i);
    check("M_gyy", a.M_gyy, spectral_norm(hyy - p.hess_g_yy(x2, y, z)), dx, x, x2, y, y, i);
    check("C_gxy", a.C_gxy, spectral_norm(hxy - p.hess_g_xy(x, y2, z)), dy, x, x, y, y2, i);
    check("C_gyy", a.C_gyy, spectral_norm(hyy - p.hess_g_yy(x, y2, z)), dy, x, x, y, y2, i);
  }
  report.entries = std::move(entries);
  return report;
}

}  // namespace dpblo
