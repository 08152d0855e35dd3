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
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dpblo/domain.hpp"
#include "dpblo/problem.hpp"
#include "dpblo/rng.hpp"
#include "dpblo/types.hpp"

namespace dpblo {

// A bilevel problem with closed-form lower-level solution and hyperobjective.
struct InstanceFixture {
  std::string name;
  BilevelProblem problem;
  AssumptionConstants constants;
  std::function<Vector(const Vector& x, const Dataset& data)> y_star;
  std::function<double(const Vector& x, const Dataset& data)> phi;
  std::function<Vector(const Vector& x, const Dataset& data)> grad_phi;
  // Empty when no closed form exists.
  std::function<std::optional<Vector>(const Dataset& data)> x_star;
  std::function<Dataset(int n, CounterRng& rng)> sample_dataset;
  // Finite record universe when there is one (hard instance).
  std::vector<Record> universe;

  std::optional<double> phi_star(const Dataset& data) const {
    if (!x_star) return std::nullopt;
    const auto best = x_star(data);
    if (!best) return std::nullopt;
    return phi(*best, data);
  }
};

namespace internal {

inline Vector random_unit(int d, CounterRng& rng) {
  Vector v(d);
  do {
    for (int i = 0; i < d; ++i) v(i) = rng.normal();
  } while (v.norm() == 0.0);
  return v / v.norm();
}

inline Vector mean_record(const Dataset& data) {
  return dataset_mean(data, [](const Record& z) { return Vector(z); });
}

}  // namespace internal

// ---------------------------------------------------------------------------
// Lower-bound instance: f = -L <y, z>, g = (mu/2)|y - r x|^2 with r = D_y/D_x,
// over a ball of diameter D_x and records in {+-1/sqrt(d)}^d.

inline Dataset sample_hard_dataset(int n, int d, CounterRng& rng) {
  if (n < 1 || d < 1) throw ConfigError("hard dataset needs n, d >= 1");
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Dataset data(n, Record(d));
  for (auto& z : data) {
    for (int i = 0; i < d; ++i) z(i) = (rng() >> 63) ? scale : -scale;
  }
  return data;
}

inline InstanceFixture make_hard_instance(double L_fy, double mu_g, double D_x, double D_y,
                                          int d) {
  if (!(L_fy > 0.0) || !(mu_g > 0.0) || !(D_x > 0.0) || !(D_y > 0.0) || d < 1) {
    throw ConfigError("hard instance needs positive scales and d >= 1");
  }
  const double ratio = D_y / D_x;
  InstanceFixture fx;
  fx.name = "hard";
  BilevelProblem& p = fx.problem;
  p.dim_x = p.dim_y = d;
  p.f = [L_fy](const Vector&, const Vector& y, const Record& z) { return -L_fy * y.dot(z); };
  p.grad_f_x = [d](const Vector&, const Vector&, const Record&) { return Vector(Vector::Zero(d)); };
  p.grad_f_y = [L_fy](const Vector&, const Vector&, const Record& z) { return Vector(-L_fy * z); };
  p.g = [mu_g, ratio](const Vector& x, const Vector& y, const Record&) {
    return 0.5 * mu_g * (y - ratio * x).squaredNorm();
  };
  p.grad_g_y = [mu_g, ratio](const Vector& x, const Vector& y, const Record&) {
    return Vector(mu_g * (y - ratio * x));
  };
  p.hess_g_xy = [mu_g, ratio, d](const Vector&, const Vector&, const Record&) {
    return Matrix(-mu_g * ratio * Matrix::Identity(d, d));
  };
  p.hess_g_yy = [mu_g, d](const Vector&, const Vector&, const Record&) {
    return Matrix(mu_g * Matrix::Identity(d, d));
  };
  p.domain_x = Domain::Ball(Vector::Zero(d), D_x / 2.0);
  p.domain_y = Domain::Ball(Vector::Zero(d), D_y / 2.0);

  AssumptionConstants& a = fx.constants;
  a.L_fy = L_fy;
  a.mu_g = mu_g;
  a.L_gy = mu_g * D_y;
  a.beta_gxy = mu_g * ratio;
  a.beta_gyy = mu_g;
  a.D_x = D_x;
  a.D_y = D_y;

  fx.y_star = [ratio](const Vector& x, const Dataset&) { return Vector(ratio * x); };
  fx.phi = [L_fy, ratio](const Vector& x, const Dataset& data) {
    return -L_fy * ratio * x.dot(internal::mean_record(data));
  };
  fx.grad_phi = [L_fy, ratio](const Vector&, const Dataset& data) {
    return Vector(-L_fy * ratio * internal::mean_record(data));
  };
  fx.x_star = [D_x, d](const Dataset& data) -> std::optional<Vector> {
    const Vector mean = internal::mean_record(data);
    const double norm = mean.norm();
    if (norm == 0.0) return Vector(Vector::Zero(d));
    return Vector((D_x / 2.0) * mean / norm);
  };
  fx.sample_dataset = [d](int n, CounterRng& rng) { return sample_hard_dataset(n, d, rng); };

  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  if (d <= 16) {
    for (std::uint32_t mask = 0; mask < (std::uint32_t{1} << d); ++mask) {
      Record z(d);
      for (int i = 0; i < d; ++i) z(i) = (mask >> i & 1u) ? scale : -scale;
      fx.universe.push_back(z);
    }
  }
  return fx;
}

// ---------------------------------------------------------------------------
// Convex quadratic: f = |x - a|^2/2 + <b, y>, g = |y - M x - c|^2/2. A record
// stacks [a; b; c].

struct QuadraticOptions {
  double radius_x = 2.0;
  double radius_a = 1.0;
  double radius_b = 0.5;
  double radius_c = 0.5;
  double coupling = 0.8;  // spectral norm of M
  bool zero_b = false;
};

inline InstanceFixture make_quadratic_instance(int d_x, int d_y, std::uint64_t seed,
                                               const QuadraticOptions& o = {}) {
  if (d_x < 1 || d_y < 1) throw ConfigError("quadratic instance needs dims >= 1");
  if (!(o.radius_x > 0.0) || !(o.radius_c > 0.0) || o.radius_a < 0.0 || o.radius_b < 0.0 ||
      o.coupling < 0.0 || o.coupling > 1.0) {
    throw ConfigError("quadratic instance options out of range");
  }
  CounterRng rng(seed);
  Matrix coupling = Matrix::Zero(d_y, d_x);
  if (o.coupling > 0.0) {
    for (int i = 0; i < d_y; ++i) {
      for (int j = 0; j < d_x; ++j) coupling(i, j) = rng.normal();
    }
    coupling *= o.coupling / spectral_norm(coupling);
  }
  const double radius_y = o.coupling * o.radius_x + o.radius_c;
  const double radius_b = o.zero_b ? 0.0 : o.radius_b;

  InstanceFixture fx;
  fx.name = "quadratic";
  auto part_a = [d_x](const Record& z) { return z.head(d_x); };
  auto part_b = [d_x, d_y](const Record& z) { return z.segment(d_x, d_y); };
  auto part_c = [d_x, d_y](const Record& z) { return z.tail(d_y); };

  BilevelProblem& p = fx.problem;
  p.dim_x = d_x;
  p.dim_y = d_y;
  p.f = [=](const Vector& x, const Vector& y, const Record& z) {
    return 0.5 * (x - part_a(z)).squaredNorm() + part_b(z).dot(y);
  };
  p.grad_f_x = [=](const Vector& x, const Vector&, const Record& z) {
    return Vector(x - part_a(z));
  };
  p.grad_f_y = [=](const Vector&, const Vector&, const Record& z) { return Vector(part_b(z)); };
  p.g = [=](const Vector& x, const Vector& y, const Record& z) {
    return 0.5 * (y - coupling * x - part_c(z)).squaredNorm();
  };
  p.grad_g_y = [=](const Vector& x, const Vector& y, const Record& z) {
    return Vector(y - coupling * x - part_c(z));
  };
  p.hess_g_xy = [=](const Vector&, const Vector&, const Record&) {
    return Matrix(-coupling.transpose());
  };
  p.hess_g_yy = [d_y](const Vector&, const Vector&, const Record&) {
    return Matrix(Matrix::Identity(d_y, d_y));
  };
  p.domain_x = Domain::Ball(Vector::Zero(d_x), o.radius_x);
  p.domain_y = Domain::Ball(Vector::Zero(d_y), radius_y);

  AssumptionConstants& a = fx.constants;
  a.L_fx = o.radius_x + o.radius_a;
  a.L_fy = radius_b;
  a.mu_g = 1.0;
  a.L_gy = 2.0 * radius_y;
  a.beta_fxx = 1.0;
  a.beta_gxy = o.coupling;
  a.beta_gyy = 1.0;
  a.D_x = 2.0 * o.radius_x;
  a.D_y = 2.0 * radius_y;

  auto means = [=](const Dataset& data) {
    const Vector m = internal::mean_record(data);
    return std::array<Vector, 3>{part_a(m), part_b(m), part_c(m)};
  };
  fx.y_star = [=](const Vector& x, const Dataset& data) {
    return Vector(coupling * x + means(data)[2]);
  };
  fx.phi = [=](const Vector& x, const Dataset& data) {
    const auto [ma, mb, mc] = means(data);
    double spread = 0.0;
    for (const auto& z : data) spread += 0.5 * (x - part_a(z)).squaredNorm();
    return spread / data.size() + mb.dot(coupling * x + mc);
  };
  fx.grad_phi = [=](const Vector& x, const Dataset& data) {
    const auto [ma, mb, mc] = means(data);
    return Vector(x - ma + coupling.transpose() * mb);
  };
  const Domain domain_x = p.domain_x;
  fx.x_star = [=](const Dataset& data) -> std::optional<Vector> {
    const auto [ma, mb, mc] = means(data);
    return domain_x.project(ma - coupling.transpose() * mb);
  };
  fx.sample_dataset = [=](int n, CounterRng& r) {
    if (n < 1) throw ConfigError("dataset size must be >= 1");
    Dataset data;
    data.reserve(n);
    for (int i = 0; i < n; ++i) {
      Record z(d_x + 2 * d_y);
      z << o.radius_a * internal::random_unit(d_x, r), radius_b * internal::random_unit(d_y, r),
          o.radius_c * internal::random_unit(d_y, r);
      data.push_back(std::move(z));
    }
    return data;
  };
  return fx;
}

// ---------------------------------------------------------------------------
// Ridge hyperparameter tuning. Lower level: ridge regression with per-feature
// penalties w_j = softplus(x_j) + floor. Upper level: squared validation error.
// A record stacks [u; v; u_val; v_val] with unit-norm features.

enum class RidgeValidation {
  // Validation labels shrunk so the population optimum sits at target_x.
  kInteriorTarget,
  // Validation pairs copy the training pairs.
  kDuplicate,
};

struct RidgeOptions {
  double floor = 1e-2;
  double x_low = -2.0;
  double x_high = 2.0;
  double label_noise = 0.1;
  double target_x = 0.0;
  RidgeValidation validation = RidgeValidation::kInteriorTarget;
};

inline double softplus(double t) { return t > 30.0 ? t : std::log1p(std::exp(t)); }
inline double logistic(double t) { return 1.0 / (1.0 + std::exp(-t)); }

inline InstanceFixture make_ridge_hyperparam_instance(int feature_dim, std::uint64_t seed,
                                                      const RidgeOptions& o = {}) {
  if (feature_dim < 1) throw ConfigError("ridge instance needs feature_dim >= 1");
  if (!(o.floor > 0.0) || !(o.x_high > o.x_low) || o.label_noise < 0.0) {
    throw ConfigError("ridge instance options out of range");
  }
  const int dim = feature_dim;
  CounterRng rng(seed);
  const Vector truth = internal::random_unit(dim, rng);
  const double w_min = softplus(o.x_low) + o.floor;
  const double w_max = softplus(o.x_high) + o.floor;
  const double radius = 1.0 / w_min;

  auto weights = [o](const Vector& x) {
    Vector w(x.size());
    for (int j = 0; j < x.size(); ++j) w(j) = softplus(x(j)) + o.floor;
    return w;
  };
  auto u_tr = [dim](const Record& z) { return z.head(dim); };
  auto v_tr = [dim](const Record& z) { return z(dim); };
  auto u_val = [dim](const Record& z) { return z.segment(dim + 1, dim); };
  auto v_val = [dim](const Record& z) { return z(2 * dim + 1); };

  InstanceFixture fx;
  fx.name = "ridge";
  BilevelProblem& p = fx.problem;
  p.dim_x = p.dim_y = dim;
  p.f = [=](const Vector&, const Vector& y, const Record& z) {
    const double r = u_val(z).dot(y) - v_val(z);
    return 0.5 * r * r;
  };
  p.grad_f_x = [dim](const Vector&, const Vector&, const Record&) {
    return Vector(Vector::Zero(dim));
  };
  p.grad_f_y = [=](const Vector&, const Vector& y, const Record& z) {
    return Vector((u_val(z).dot(y) - v_val(z)) * u_val(z));
  };
  p.g = [=](const Vector& x, const Vector& y, const Record& z) {
    const double r = u_tr(z).dot(y) - v_tr(z);
    return 0.5 * r * r + 0.5 * weights(x).dot(y.cwiseProduct(y));
  };
  p.grad_g_y = [=](const Vector& x, const Vector& y, const Record& z) {
    return Vector((u_tr(z).dot(y) - v_tr(z)) * u_tr(z) + weights(x).cwiseProduct(y));
  };
  p.hess_g_xy = [](const Vector& x, const Vector& y, const Record&) {
    Vector diag(x.size());
    for (int j = 0; j < x.size(); ++j) diag(j) = logistic(x(j)) * y(j);
    return Matrix(diag.asDiagonal());
  };
  p.hess_g_yy = [=](const Vector& x, const Vector&, const Record& z) {
    Matrix h = u_tr(z) * u_tr(z).transpose();
    h.diagonal() += weights(x);
    return h;
  };
  p.domain_x = Domain::Box(Vector::Constant(dim, o.x_low), Vector::Constant(dim, o.x_high));
  p.domain_y = Domain::Ball(Vector::Zero(dim), radius);

  AssumptionConstants& a = fx.constants;
  a.L_fy = radius + 1.0;
  a.mu_g = w_min;
  a.L_gy = radius + 1.0 + w_max * radius;
  a.beta_fyy = 1.0;
  a.beta_gxy = radius;
  a.beta_gyy = 1.0 + w_max;
  a.M_gxy = radius / 4.0;  // logistic' <= 1/4
  a.M_gyy = 1.0;
  a.C_gxy = 1.0;
  a.D_x = (o.x_high - o.x_low) * std::sqrt(static_cast<double>(dim));
  a.D_y = 2.0 * radius;

  // Normal equations (A + W) y = b of the averaged training loss.
  auto solve = [=](const Vector& x, const Dataset& data) {
    Matrix lhs = Matrix::Zero(dim, dim);
    Vector rhs = Vector::Zero(dim);
    for (const auto& z : data) {
      lhs += u_tr(z) * u_tr(z).transpose();
      rhs += v_tr(z) * u_tr(z);
    }
    lhs /= static_cast<double>(data.size());
    rhs /= static_cast<double>(data.size());
    lhs.diagonal() += weights(x);
    return std::make_pair(Eigen::LLT<Matrix>(lhs), rhs);
  };
  fx.y_star = [=](const Vector& x, const Dataset& data) {
    const auto [llt, rhs] = solve(x, data);
    return Vector(llt.solve(rhs));
  };
  fx.phi = [=](const Vector& x, const Dataset& data) {
    const auto [llt, rhs] = solve(x, data);
    const Vector y = llt.solve(rhs);
    double total = 0.0;
    for (const auto& z : data) {
      const double r = u_val(z).dot(y) - v_val(z);
      total += 0.5 * r * r;
    }
    return total / data.size();
  };
  // Implicit differentiation of the validation loss through the ridge solution.
  fx.grad_phi = [=](const Vector& x, const Dataset& data) {
    const auto [llt, rhs] = solve(x, data);
    const Vector y = llt.solve(rhs);
    Vector residual_grad = Vector::Zero(dim);
    for (const auto& z : data) residual_grad += (u_val(z).dot(y) - v_val(z)) * u_val(z);
    residual_grad /= static_cast<double>(data.size());
    const Vector adjoint = llt.solve(residual_grad);
    Vector grad(dim);
    for (int j = 0; j < dim; ++j) grad(j) = -logistic(x(j)) * y(j) * adjoint(j);
    return grad;
  };
  const double shrink = 1.0 + dim * (softplus(o.target_x) + o.floor);
  fx.sample_dataset = [=](int n, CounterRng& r) {
    if (n < 1) throw ConfigError("dataset size must be >= 1");
    Dataset data;
    data.reserve(n);
    for (int i = 0; i < n; ++i) {
      const Vector u = internal::random_unit(dim, r);
      const double v = std::clamp(u.dot(truth) + o.label_noise * r.normal(), -1.0, 1.0);
      Vector u2 = u;
      double v2 = v;
      if (o.validation == RidgeValidation::kInteriorTarget) {
        u2 = internal::random_unit(dim, r);
        v2 = std::clamp(u2.dot(truth) / shrink, -1.0, 1.0);
      }
      Record z(2 * dim + 2);
      z << u, v, u2, v2;
      data.push_back(std::move(z));
    }
    return data;
  };
  return fx;
}

}  // namespace dpblo
