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

#include <cmath>

#include <gtest/gtest.h>

#include "dpblo/inner_solver.hpp"
#include "dpblo/instances.hpp"
#include "testing.hpp"

namespace dpblo {
namespace {

TEST(InnerSolverTest, CertificateBoundsDistanceToMinimizer) {
  const InstanceFixture fixtures[] = {make_quadratic_instance(3, 2, 1),
                                      make_ridge_hyperparam_instance(3, 2),
                                      make_hard_instance(1.0, 0.5, 2.0, 1.0, 3)};
  CounterRng rng(17);
  for (const auto& fx : fixtures) {
    const Dataset data = fx.sample_dataset(12, rng);
    for (double alpha : {1e-2, 1e-6, 1e-10}) {
      for (int i = 0; i < 10; ++i) {
        const Vector x = fx.problem.domain_x.sample_uniform(rng);
        const InnerSolveResult r = solve_lower_level(fx.problem, fx.constants, data, x, alpha);
        EXPECT_LE(r.certified_error, alpha);
        EXPECT_LE((r.y - fx.y_star(x, data)).norm(), alpha * (1.0 + 1e-9) + 1e-14) << fx.name;
      }
    }
  }
}

TEST(InnerSolverTest, WarmStartAtMinimizerNeedsNoIterations) {
  const InstanceFixture fx = make_quadratic_instance(2, 2, 5);
  CounterRng rng(3);
  const Dataset data = fx.sample_dataset(6, rng);
  const Vector x = fx.problem.domain_x.sample_uniform(rng);
  const InnerSolveResult r =
      solve_lower_level(fx.problem, fx.constants, data, x, 1e-8, fx.y_star(x, data));
  EXPECT_EQ(r.iterations, 0);
}

TEST(InnerSolverTest, ExhaustedBudgetThrows) {
  const InstanceFixture fx = make_ridge_hyperparam_instance(2, 9);
  CounterRng rng(3);
  const Dataset data = fx.sample_dataset(6, rng);
  const Vector x = Vector::Constant(2, 1.0);
  EXPECT_THROW(solve_lower_level(fx.problem, fx.constants, data, x, 1e-12, std::nullopt, 1),
               ConvergenceError);
}

TEST(InnerSolverTest, RejectsBadArguments) {
  const InstanceFixture fx = make_quadratic_instance(2, 2, 5);
  CounterRng rng(3);
  const Dataset data = fx.sample_dataset(6, rng);
  const Vector x = Vector::Zero(2);
  EXPECT_THROW(solve_lower_level(fx.problem, fx.constants, data, x, 0.0), ConfigError);
  EXPECT_THROW(solve_lower_level(fx.problem, fx.constants, {}, x, 1e-3), ConfigError);
  EXPECT_THROW(evaluate_phi_inexact(fx.problem, fx.constants, data, x, -1.0), ConfigError);
}

TEST(InnerSolverTest, InexactPhiWithinZeta) {
  const InstanceFixture fixtures[] = {make_quadratic_instance(2, 3, 4),
                                      make_ridge_hyperparam_instance(2, 4),
                                      make_hard_instance(2.0, 1.0, 2.0, 0.5, 2)};
  CounterRng rng(23);
  for (const auto& fx : fixtures) {
    const Dataset data = fx.sample_dataset(10, rng);
    for (double zeta : {1e-3, 1e-8}) {
      for (int i = 0; i < 10; ++i) {
        const Vector x = fx.problem.domain_x.sample_uniform(rng);
        const double got = evaluate_phi_inexact(fx.problem, fx.constants, data, x, zeta);
        EXPECT_LE(std::abs(got - fx.phi(x, data)), zeta * (1.0 + 1e-9)) << fx.name;
      }
    }
  }
}

TEST(InnerSolverTest, ZeroUpperCouplingSkipsSolve) {
  QuadraticOptions o;
  o.zero_b = true;
  const InstanceFixture fx = make_quadratic_instance(2, 2, 8, o);
  ASSERT_EQ(fx.constants.L_fy, 0.0);
  CounterRng rng(1);
  const Dataset data = fx.sample_dataset(5, rng);
  const Vector x = Vector::Constant(2, 0.3);
  EXPECT_NEAR(evaluate_phi_inexact(fx.problem, fx.constants, data, x, 1e-9), fx.phi(x, data),
              1e-14);
}

}  // namespace
}  // namespace dpblo
