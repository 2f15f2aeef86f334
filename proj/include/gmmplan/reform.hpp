// Copyright 2026 The gmmplan Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Second-order cone images of per-mode chance and CVaR constraints.
//
// For delta ~ N(mu, Sigma) and x_tilde = [x; 1], the constraint
// P(delta^T x_tilde <= 0) >= 1 - eps holds exactly when
//
//     gamma * sqrt(x_tilde^T Sigma x_tilde) + mu^T x_tilde <= 0
//
// with gamma = Psi^{-1}(1 - eps); the CVaR constraint at level eps uses
// gamma = phi(Psi^{-1}(1 - eps)) / eps instead. With estimated moments the
// cone coefficient is inflated by sqrt(1 + r2) and the projected mean bound
// r1 is added on the same quadratic form.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmmplan/gmm.hpp"
#include "gmmplan/robustify.hpp"
#include "gmmplan/stats.hpp"

namespace gmmplan::reform {

/// Uniform risk allocation over time steps and obstacles; every mode of an
/// obstacle inherits the per-constraint budget.
struct RiskConfig {
  double epsilon = 0.05;
  double beta = 1e-3;
  int horizon = 1;
  int num_obstacles = 1;
  std::vector<std::vector<double>> mode_weights;  // per obstacle
  double per_constraint = 0.05;                   // eps / (T * J)

  /// Budget of constraint (t, j); identical for all t, j.
  double constraint_risk(int /*t*/, int /*j*/) const { return per_constraint; }
  /// Budget of mode k of constraint (t, j); identical for all k.
  double mode_risk(int /*t*/, int /*j*/, int /*k*/) const { return per_constraint; }
};

inline RiskConfig allocate_uniform(double epsilon, int horizon, int num_obstacles,
                                   std::vector<std::vector<double>> weights, double beta = 1e-3) {
  if (!(epsilon > 0.0 && epsilon < 0.5)) {
    throw std::domain_error("epsilon must lie in (0,0.5)");
  }
  if (horizon < 1 || num_obstacles < 1) {
    throw std::domain_error("allocate_uniform: horizon and obstacle count must be >= 1");
  }
  if (static_cast<int>(weights.size()) != num_obstacles) {
    throw std::invalid_argument("allocate_uniform: one weight vector per obstacle required");
  }
  for (const auto& w : weights) {
    double total = 0.0;
    for (double v : w) {
      if (!(v > 0.0)) throw std::invalid_argument("mode weights must be positive");
      total += v;
    }
    if (w.empty() || std::fabs(total - 1.0) > 1e-12) {
      throw std::invalid_argument("weights must sum to 1");
    }
  }
  const double share = epsilon / (static_cast<double>(horizon) * num_obstacles);
  if (!(share < 0.5)) throw std::domain_error("infeasible allocation: eps/(T*J) must be < 0.5");
  RiskConfig cfg;
  cfg.epsilon = epsilon;
  cfg.beta = beta;
  cfg.horizon = horizon;
  cfg.num_obstacles = num_obstacles;
  cfg.mode_weights = std::move(weights);
  cfg.per_constraint = share;
  return cfg;
}

namespace detail {
inline void require_mode_risk(double eps, const char* who) {
  if (!(eps > 0.0 && eps <= 0.5)) {
    throw std::domain_error(std::string(who) + ": mode risk must lie in (0, 0.5]");
  }
}
}  // namespace detail

/// Psi^{-1}(1 - eps).
inline double gamma_chance(double eps) {
  detail::require_mode_risk(eps, "gamma_chance");
  return eps == 0.5 ? 0.0 : stats::normal_quantile(1.0 - eps);
}

/// phi(Psi^{-1}(1 - eps)) / eps, with phi the standard normal density.
inline double gamma_cvar(double eps) {
  detail::require_mode_risk(eps, "gamma_cvar");
  return stats::normal_pdf(gamma_chance(eps)) / eps;
}

/// One deterministic constraint
///   (gamma + offset) * sqrt(x^T cov x) + norm_offset * ||x||_2 + mean^T x <= 0.
/// `norm_offset` is nonzero only for the whole-vector mean bound variant.
struct SocTerm {
  double gamma = 0.0;
  Vector mean;
  Matrix cov;
  double offset = 0.0;
  double norm_offset = 0.0;

  double cone_coefficient() const { return gamma + offset; }

  double lhs(const Vector& x) const {
    const double q = std::max(0.0, x.dot(cov * x));
    return cone_coefficient() * std::sqrt(q) + norm_offset * x.norm() + mean.dot(x);
  }
};

/// How the mean estimation error is compensated when moments are estimated.
enum class MeanBound {
  kProjected,    // r1 on sqrt(x^T Sigma_hat x)
  kWholeVector,  // R1 on ||x||_2
};

struct RobustOptions {
  int sample_count = 0;
  double beta = 1e-3;
  MeanBound mean_bound = MeanBound::kProjected;
};

/// Builds the SOC term from (exact or estimated) moments. With `robust` set
/// the cone coefficient becomes gamma*sqrt(1 + r2) and the mean bound is
/// added.
inline SocTerm build_soc_term(const Vector& mean, const Matrix& cov, double gamma,
                              const std::optional<RobustOptions>& robust = std::nullopt) {
  if (cov.rows() != mean.size() || cov.cols() != mean.size()) {
    throw std::invalid_argument("build_soc_term: dimension mismatch");
  }
  if (!(gamma >= 0.0)) throw std::domain_error("build_soc_term: gamma must be non-negative");
  if (mean.size() > 0 && min_eigenvalue(0.5 * (cov + cov.transpose())) < -1e-10) {
    throw std::domain_error("build_soc_term: covariance is not positive semidefinite");
  }
  SocTerm term{gamma, mean, cov, 0.0, 0.0};
  if (!robust) return term;
  const auto& r = *robust;
  term.gamma = gamma * std::sqrt(1.0 + robust::r2(r.sample_count, r.beta));
  if (r.mean_bound == MeanBound::kProjected) {
    term.offset = robust::r1_coefficient(r.sample_count, r.beta);
  } else {
    Matrix ridged = cov;
    if (min_eigenvalue(ridged) < kCovarianceRidge) {
      ridged.diagonal().array() += kCovarianceRidge;
    }
    term.norm_offset =
        robust::r1_prior_bound(r.sample_count, r.beta, static_cast<int>(mean.size()), ridged);
  }
  return term;
}

/// Fraction of draws delta ~ N(mean, cov) with delta^T x > 0.
inline double check_chance_constraint_mc(const Vector& mean, const Matrix& cov, const Vector& x,
                                         std::size_t samples, std::uint64_t seed) {
  const Matrix factor = psd_factor(cov);
  std::size_t violations = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    SubstreamRng rng(seed, i);
    violations += draw_gaussian(mean, factor, rng).dot(x) > 0.0;
  }
  return static_cast<double>(violations) / static_cast<double>(samples);
}

}  // namespace gmmplan::reform
