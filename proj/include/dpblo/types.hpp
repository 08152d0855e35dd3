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

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dpblo {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// A record is an opaque feature vector; only the problem callbacks read it.
using Record = Eigen::VectorXd;
using Dataset = std::vector<Record>;

// Invalid user input: bad constants, budgets, schedules or config files.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Inner solver ran out of iterations before certifying its accuracy.
class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The lower-level Hessian was not positive definite.
class LinearSolveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Grid or chain too large for the requested mode.
class CapacityError : public std::length_error {
 public:
  using std::length_error::length_error;
};

// Rejection loop exhausted its restart budget.
class SamplerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require_nonempty(const Dataset& data, const char* where) {
  if (data.empty()) {
    throw ConfigError(std::string(where) + ": dataset must contain at least one record");
  }
}

}  // namespace dpblo
