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
#include <limits>
#include <optional>
#include <string>

#include "dpblo/problem.hpp"

namespace dpblo {

struct InnerSolveResult {
  Vector y;
  double certified_error = 0;  // grad_norm / mu_g, bounds the distance to the minimizer
  int iterations = 0;
  double grad_norm = 0;
};

// Iteration budget for gradient descent with step 1/beta_gyy to shrink the
// gradient from beta_gyy * diam to mu_g * alpha, plus slack.
inline int default_inner_iterations(const AssumptionConstants& a, double y_diameter,
                                    double alpha) {
  const double ratio = a.beta_gyy / a.mu_g;
  const double log_term = std::log(a.beta_gyy * y_diameter / (a.mu_g * alpha));
  const double iters = std::ceil(ratio * std::max(0.0, log_term)) + 16.0;
  return iters > 1e9 ? 1'000'000'000 : static_cast<int>(iters);
}

// Full-batch gradient descent on the lower-level average, stopped by the
// strong-convexity certificate |grad| / mu_g <= alpha.
inline InnerSolveResult solve_lower_level(const BilevelProblem& p, const AssumptionConstants& a,
                                          const Dataset& data, const Vector& x, double alpha,
                                          const std::optional<Vector>& warm_start = std::nullopt,
                                          std::optional<int> max_iters = std::nullopt) {
  require_nonempty(data, "solve_lower_level");
  if (!(alpha > 0.0)) throw ConfigError("inner accuracy alpha must be > 0");
  if (!(a.mu_g > 0.0) || !(a.beta_gyy > 0.0)) {
    throw ConfigError("inner solve needs mu_g > 0 and beta_gyy > 0");
  }
  const int budget =
      max_iters.value_or(default_inner_iterations(a, p.y_box().diameter(), alpha));
  const double step = 1.0 / a.beta_gyy;

  InnerSolveResult out;
  out.y = warm_start.value_or(p.domain_y.center());
  for (int it = 0;; ++it) {
    const Vector grad = mean_grad_g_y(p, data, x, out.y);
    out.grad_norm = grad.norm();
    out.certified_error = out.grad_norm / a.mu_g;
    out.iterations = it;
    if (out.certified_error <= alpha) return out;
    if (it >= budget || !std::isfinite(out.grad_norm)) break;
    out.y -= step * grad;
  }
  throw ConvergenceError("inner solver missed accuracy " + std::to_string(alpha) + " after " +
                         std::to_string(out.iterations) + " iterations (certificate " +
                         std::to_string(out.certified_error) +
                         "); mu_g or beta_gyy may be misdeclared");
}

// Hyperobjective value within zeta: solve to alpha = zeta / L_fy, then average f.
inline double evaluate_phi_inexact(const BilevelProblem& p, const AssumptionConstants& a,
                                   const Dataset& data, const Vector& x, double zeta) {
  if (!(zeta > 0.0)) throw ConfigError("zeta must be > 0");
  require_nonempty(data, "evaluate_phi_inexact");
  if (a.L_fy == 0.0) {
    // f ignores y, any point will do.
    return mean_f(p, data, x, p.domain_y.center());
  }
  const InnerSolveResult inner = solve_lower_level(p, a, data, x, zeta / a.L_fy);
  return mean_f(p, data, x, inner.y);
}

}  // namespace dpblo
