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
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpblo/gridwalk.hpp"
#include "dpblo/mechanisms.hpp"
#include "dpblo/types.hpp"

namespace dpblo {

struct AuditReport {
  std::string name;
  bool passed = false;
  double worst_case = 0;
  double bound = 0;
  nlohmann::json witness;
  std::int64_t trials = 0;
  std::string note;
  bool skipped = false;
  // Negative controls are expected to fail.
  bool negative_control = false;

  void settle() { passed = !skipped && worst_case <= bound * (1.0 + 1e-9); }
  // A negative control is healthy when it fails.
  bool as_expected() const { return skipped || (negative_control ? !passed : passed); }
};

inline void to_json(nlohmann::json& j, const AuditReport& r) {
  auto finite_or_null = [](double v) {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
  };
  j = {{"name", r.name},
       {"passed", r.passed},
       {"worst_case", finite_or_null(r.worst_case)},
       {"bound", finite_or_null(r.bound)},
       {"witness", r.witness},
       {"trials", r.trials},
       {"note", r.note},
       {"skipped", r.skipped},
       {"negative_control", r.negative_control},
       {"as_expected", r.as_expected()}};
}

inline AuditReport skipped_report(std::string name, std::string why) {
  AuditReport r;
  r.name = std::move(name);
  r.skipped = true;
  r.note = std::move(why);
  return r;
}

// Largest deviation of `query` over single-record swaps of `data`. Only a lower
// bound on the true sensitivity.
inline AuditReport empirical_sensitivity(
    std::string name, const std::function<Vector(const Dataset&)>& query, const Dataset& data,
    const std::vector<Record>& candidates, const std::vector<std::size_t>& indices,
    double bound) {
  if (candidates.empty() || indices.empty()) {
    throw ConfigError("sensitivity audit needs candidates and indices");
  }
  AuditReport r;
  r.name = std::move(name);
  r.bound = bound;
  r.note = "enumerated swaps give a lower bound on the true sensitivity";
  const Vector base = query(data);
  Dataset swapped = data;
  for (const std::size_t i : indices) {
    if (i >= data.size()) throw ConfigError("swap index out of range");
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      swapped[i] = candidates[c];
      const double deviation = (query(swapped) - base).norm();
      ++r.trials;
      if (deviation > r.worst_case || r.witness.is_null()) {
        r.worst_case = std::max(r.worst_case, deviation);
        r.witness = {{"index", i}, {"candidate", c}, {"record", to_std(candidates[c])}};
      }
    }
    swapped[i] = data[i];
  }
  r.settle();
  return r;
}

// sup_S P(S) - e^eps Q(S) for discrete laws.
inline double hockey_stick(const Vector& p, const Vector& q, double eps) {
  return (p.array() - std::exp(eps) * q.array()).max(0.0).sum();
}

// Exact privacy audit of a discrete output law over every swap of every base
// dataset. Pure audits (delta = 0) bound |log P/Q| by eps; approximate audits
// bound the hockey-stick divergence at eps, both directions, by delta.
inline AuditReport exact_dp_audit(std::string name,
                                  const std::function<Vector(const Dataset&)>& law,
                                  const std::vector<Dataset>& bases,
                                  const std::vector<Record>& candidates,
                                  const std::vector<std::size_t>& indices, double eps,
                                  double delta) {
  if (bases.empty() || candidates.empty() || indices.empty()) {
    throw ConfigError("privacy audit needs datasets, candidates and indices");
  }
  AuditReport r;
  r.name = std::move(name);
  const bool pure = delta == 0.0;
  r.bound = pure ? eps : delta;
  r.note = pure ? "max |log ratio| of exact grid laws" : "hockey-stick divergence of exact grid laws";
  for (std::size_t b = 0; b < bases.size(); ++b) {
    const Dataset& data = bases[b];
    const Vector p = law(data);
    Dataset swapped = data;
    for (const std::size_t i : indices) {
      if (i >= data.size()) throw ConfigError("swap index out of range");
      for (std::size_t c = 0; c < candidates.size(); ++c) {
        swapped[i] = candidates[c];
        const Vector q = law(swapped);
        if (q.size() != p.size()) throw ConfigError("laws of adjacent datasets differ in size");
        const double value = pure ? linf_distance(p, q)
                                  : std::max(hockey_stick(p, q, eps), hockey_stick(q, p, eps));
        ++r.trials;
        if (value > r.worst_case || r.witness.is_null()) {
          r.worst_case = std::max(r.worst_case, value);
          r.witness = {{"base", b}, {"index", i}, {"candidate", c},
                       {"record", to_std(candidates[c])}};
        }
      }
      swapped[i] = data[i];
    }
  }
  r.settle();
  return r;
}

inline AuditReport exact_dp_audit(std::string name,
                                  const std::function<Vector(const Dataset&)>& law,
                                  const Dataset& data, const std::vector<Record>& candidates,
                                  const std::vector<std::size_t>& indices, double eps,
                                  double delta) {
  return exact_dp_audit(std::move(name), law, std::vector<Dataset>{data}, candidates, indices,
                        eps, delta);
}

// Checks the three perturbed-chain facts on the grid walk for f and f + zeta:
// conductance shrinks by at most e^{-6 zeta}, stationary laws stay within
// Dist_inf 2 zeta, and the mixing bound reaches the grid's target accuracy.
inline std::vector<AuditReport> verify_sampler_lemmas(const Vector& f_values,
                                                      const Vector& zeta_values,
                                                      const GridSpec& grid) {
  if (f_values.size() != grid.state_count || zeta_values.size() != grid.state_count) {
    throw ConfigError("values do not match the grid");
  }
  const double zeta = zeta_values.cwiseAbs().maxCoeff();
  const ChainAnalysis original = gibbs_chain(f_values, grid);
  const ChainAnalysis perturbed = gibbs_chain(f_values + zeta_values, grid);
  std::vector<AuditReport> reports;

  if (grid.state_count <= kConductanceStateCap) {
    AuditReport r;
    r.name = "conductance_under_perturbation";
    r.worst_case = std::exp(-6.0 * zeta) * original.conductance_phi;
    r.bound = perturbed.conductance_phi;
    r.trials = 1;
    r.witness = {{"phi", original.conductance_phi},
                 {"phi_perturbed", perturbed.conductance_phi}, {"zeta", zeta}};
    if (original.conductance_phi == 0.0) r.note = "reducible chain: conductance 0";
    r.settle();
    reports.push_back(std::move(r));
  } else {
    reports.push_back(skipped_report("conductance_under_perturbation",
                                     "more than 18 states; subset enumeration skipped"));
  }

  {
    AuditReport r;
    r.name = "stationary_distance";
    r.worst_case = linf_distance(perturbed.stationary, original.stationary);
    r.bound = 2.0 * zeta;
    r.trials = 1;
    r.witness = {{"zeta", zeta}};
    r.settle();
    reports.push_back(std::move(r));
  }

  {
    AuditReport r;
    r.name = "mixing_time_bound";
    const std::int64_t steps = mixing_time_bound(grid.alpha_lip, grid.tau, grid.dim,
                                                 grid.target_accuracy, zeta);
    r.worst_case = linf_mixing_distance(perturbed, steps);
    r.bound = grid.target_accuracy;
    r.trials = 1;
    r.witness = {{"steps", steps}, {"spectral_gap", perturbed.spectral_gap}};
    r.settle();
    reports.push_back(std::move(r));
  }
  return reports;
}

}  // namespace dpblo
