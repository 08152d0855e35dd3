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
#include <limits>

#include "dpblo/rng.hpp"
#include "dpblo/types.hpp"

namespace dpblo {

// Compact convex set: a Euclidean ball or an axis-aligned box.
class Domain {
 public:
  enum class Kind { kBall, kBox };

  static Domain Ball(Vector center, double radius) {
    if (!(radius >= 0.0) || !std::isfinite(radius)) {
      throw ConfigError("ball radius must be a finite nonnegative number");
    }
    Domain d(Kind::kBall, std::move(center));
    d.radius_ = radius;
    d.half_widths_ = Vector::Constant(d.center_.size(), radius);
    return d;
  }

  static Domain Box(const Vector& low, const Vector& high) {
    if (low.size() != high.size()) throw ConfigError("box bounds differ in dimension");
    if (!((high - low).array() >= 0.0).all() || !low.allFinite() || !high.allFinite()) {
      throw ConfigError("box bounds must be finite with low <= high");
    }
    Domain d(Kind::kBox, 0.5 * (low + high));
    d.half_widths_ = 0.5 * (high - low);
    d.radius_ = d.half_widths_.norm();
    return d;
  }

  static Domain Cube(const Vector& center, double side) {
    return Box(center.array() - 0.5 * side, center.array() + 0.5 * side);
  }

  Kind kind() const { return kind_; }
  int dim() const { return static_cast<int>(center_.size()); }
  const Vector& center() const { return center_; }
  const Vector& half_widths() const { return half_widths_; }
  // Ball radius; for a box, the circumradius.
  double radius() const { return radius_; }

  double diameter() const { return 2.0 * radius_; }
  double inf_width() const { return dim() == 0 ? 0.0 : 2.0 * half_widths_.maxCoeff(); }
  Vector low() const { return center_ - half_widths_; }
  Vector high() const { return center_ + half_widths_; }

  // Largest Euclidean norm of a point in the set.
  double max_norm() const {
    if (kind_ == Kind::kBall) return center_.norm() + radius_;
    return (center_.cwiseAbs() + half_widths_).norm();
  }

  Vector project(const Vector& x) const {
    if (kind_ == Kind::kBox) return x.cwiseMax(low()).cwiseMin(high());
    const Vector offset = x - center_;
    const double norm = offset.norm();
    if (norm <= radius_) return x;
    return center_ + (radius_ / norm) * offset;
  }

  double distance(const Vector& x) const { return (x - project(x)).norm(); }

  bool contains(const Vector& x, double tol = 1e-12) const {
    if (kind_ == Kind::kBox) {
      return ((x - center_).cwiseAbs().array() <= half_widths_.array() + tol).all();
    }
    return (x - center_).norm() <= radius_ + tol;
  }

  // Minkowski gauge about the center; the set is {gauge <= 1}.
  double gauge(const Vector& x) const {
    const Vector offset = x - center_;
    if (kind_ == Kind::kBall) {
      if (radius_ == 0.0) return offset.norm() == 0.0 ? 0.0 : kInf;
      return offset.norm() / radius_;
    }
    double g = 0.0;
    for (int i = 0; i < dim(); ++i) {
      const double a = std::abs(offset(i));
      if (half_widths_(i) == 0.0) {
        if (a > 0.0) return kInf;
      } else {
        g = std::max(g, a / half_widths_(i));
      }
    }
    return g;
  }

  // Euclidean Lipschitz constant of gauge().
  double gauge_lipschitz() const {
    const double r = kind_ == Kind::kBall ? radius_ : half_widths_.minCoeff();
    return r > 0.0 ? 1.0 / r : kInf;
  }

  // True when the set is exactly its enclosing isotropic cube.
  bool fills_enclosing_cube() const {
    if (kind_ == Kind::kBall) return dim() == 1;  // a 1-D ball is an interval
    return (half_widths_.maxCoeff() - half_widths_.minCoeff()) == 0.0;
  }

  // Smallest axis-aligned cube about the center containing the set.
  Domain enclosing_cube() const { return Cube(center_, inf_width()); }

  Vector sample_uniform(CounterRng& rng) const {
    Vector x(dim());
    if (kind_ == Kind::kBox) {
      for (int i = 0; i < dim(); ++i) {
        x(i) = center_(i) + half_widths_(i) * (2.0 * rng.uniform() - 1.0);
      }
      return x;
    }
    for (int i = 0; i < dim(); ++i) x(i) = rng.normal();
    const double norm = x.norm();
    const double r = radius_ * std::pow(rng.uniform(), 1.0 / std::max(1, dim()));
    if (norm == 0.0) return center_;
    return center_ + (r / norm) * x;
  }

 private:
  static constexpr double kInf = std::numeric_limits<double>::infinity();

  Domain(Kind kind, Vector center) : kind_(kind), center_(std::move(center)) {}

  Kind kind_;
  Vector center_;
  Vector half_widths_;
  double radius_ = 0.0;
};

}  // namespace dpblo
