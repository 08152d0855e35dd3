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

#include "dpblo/inner_solver.hpp"
#include "dpblo/problem.hpp"

namespace dpblo {

struct Hypergradient {
  Vector vector;
  double linear_solve_residual = 0;
};

// grad_x F - H_xy H_yy^{-1} grad_y F with every term averaged over the data.
inline Hypergradient approx_hypergradient(const BilevelProblem& p, const Dataset& data,
                                          const Vector& x, const Vector& y) {
  require_nonempty(data, "approx_hypergradient");
  const Vector gx = mean_grad_f_x(p, data, x, y);
  const Vector gy = mean_grad_f_y(p, data, x, y);
  const Matrix hxy = mean_hess_g_xy(p, data, x, y);
  const Matrix hyy = mean_hess_g_yy(p, data, x, y);

  const double scale = 1.0 + hyy.cwiseAbs().maxCoeff();
  if ((hyy - hyy.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale) {
    throw LinearSolveError("lower-level Hessian is not symmetric");
  }
  const Eigen::LLT<Matrix> llt(0.5 * (hyy + hyy.transpose()));
  if (llt.info() != Eigen::Success) {
    throw LinearSolveError("lower-level Hessian is not positive definite");
  }
  const Vector w = llt.solve(gy);
  Hypergradient out;
  out.linear_solve_residual = (hyy * w - gy).norm();
  if (!(out.linear_solve_residual <= 1e-8 * (1.0 + gy.norm()))) {
    throw LinearSolveError("lower-level Hessian solve is ill-conditioned");
  }
  out.vector = gx - hxy * w;
  return out;
}

// Central differences of the inexact hyperobjective. Test oracle only.
inline Vector finite_diff_phi_gradient(const BilevelProblem& p, const AssumptionConstants& a,
                                       const Dataset& data, const Vector& x, double h,
                                       double zeta) {
  if (!(h > 0.0)) throw ConfigError("finite-difference step must be > 0");
  if (!(zeta > 0.0) || zeta > h * h) throw ConfigError("need 0 < zeta <= h^2");
  Vector grad(x.size());
  for (int i = 0; i < x.size(); ++i) {
    Vector up = x;
    Vector down = x;
    up(i) += h;
    down(i) -= h;
    grad(i) = (evaluate_phi_inexact(p, a, data, up, zeta) -
               evaluate_phi_inexact(p, a, data, down, zeta)) /
              (2.0 * h);
  }
  return grad;
}

}  // namespace dpblo
