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

// Concentration bounds for moments estimated from N samples of a Gaussian.
//
// For a fixed direction x, the projected mean error |mu_hat^T x - mu^T x| is
// bounded by r1_coefficient(N, beta) * sqrt(x^T Sigma_hat x) with probability
// 1 - beta, and x^T Sigma x <= (1 + r2(N, beta)) x^T Sigma_hat x with
// probability 1 - beta. The older whole-vector bound on ||mu_hat - mu||_2 is
// kept as r1_prior_bound for comparison.

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "gmmplan/gmm.hpp"
#include "gmmplan/stats.hpp"

namespace gmmplan::robust {

struct RobustificationTerms {
  double r1_coefficient = 0.0;
  double r2 = 0.0;
  double beta = 0.0;
  int sample_count = 0;
};

namespace detail {
inline void require_samples(int n_k, int min, const char* who) {
  if (n_k < min) {
    throw std::domain_error(std::string(who) + ": need at least " + std::to_string(min) +
                            " samples, got " + std::to_string(n_k));
  }
}
}  // namespace detail

/// sqrt(T^2_{1, N-1}(1 - beta) / N). Multiply by sqrt(x^T Sigma_hat x).
inline double r1_coefficient(int n_k, double beta) {
  detail::require_samples(n_k, 3, "r1_coefficient");
  return std::sqrt(stats::hotelling_t2_quantile(1.0 - beta, 1, n_k - 1) / n_k);
}

/// Relative covariance inflation from the two-sided chi-squared interval.
inline double r2(int n_k, double beta) {
  detail::require_samples(n_k, 3, "r2");
  const double dof = n_k - 1;
  const double hi = stats::chi2_quantile(1.0 - 0.5 * beta, n_k - 1);
  const double lo = stats::chi2_quantile(0.5 * beta, n_k - 1);
  return std::max(std::fabs(1.0 - dof / hi), std::fabs(1.0 - dof / lo));
}

inline RobustificationTerms terms(int n_k, double beta) {
  return {r1_coefficient(n_k, beta), r2(n_k, beta), beta, n_k};
}

/// Whole-vector mean bound sqrt(T^2_{dim, N-1}(1 - beta) * lambda_max(Sigma_hat) / N),
/// i.e. the Hotelling ellipsoid enclosed in a ball.
inline double r1_prior_bound(int n_k, double beta, int dim, const Matrix& sigma_hat) {
  detail::require_samples(n_k, dim + 2, "r1_prior_bound");
  if (sigma_hat.rows() != dim || sigma_hat.cols() != dim) {
    throw std::invalid_argument("r1_prior_bound: covariance must be dim x dim");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma_hat, Eigen::EigenvaluesOnly);
  if (!(eig.eigenvalues()(0) > 0.0)) {
    throw std::domain_error("r1_prior_bound: covariance is singular; apply the ridge first");
  }
  const double lambda_max = eig.eigenvalues()(dim - 1);
  return std::sqrt(stats::hotelling_t2_quantile(1.0 - beta, dim, n_k - 1) * lambda_max / n_k);
}

struct BoundConstants {
  double c1 = 0.0;  // whole-vector bound constant
  double c2 = 0.0;  // projected bound constant
};

inline BoundConstants compare_bound_constants(int dim, int n_k, double beta) {
  detail::require_samples(n_k, dim + 1, "compare_bound_constants");
  return {std::sqrt(stats::hotelling_t2_quantile(1.0 - beta, dim, n_k - 1) / n_k),
          std::sqrt(stats::hotelling_t2_quantile(1.0 - beta, 1, n_k - 1) / n_k)};
}

/// sqrt(x^T x * lambda_max(Sigma_hat)): the state-dependent factor of the
/// whole-vector bound.
inline double h1(const Vector& x, const Matrix& sigma_hat) {
  return std::sqrt(x.squaredNorm() * max_eigenvalue(sigma_hat));
}

/// sqrt(x^T Sigma_hat x): the state-dependent factor of the projected bound.
inline double h2(const Vector& x, const Matrix& sigma_hat) {
  return std::sqrt(std::max(0.0, x.dot(sigma_hat * x)));
}

struct BoundComparison {
  int dim = 0;
  int n_k = 0;
  double beta = 0.0;
  BoundConstants constants;
  bool c1_at_least_c2 = false;
};

/// Evaluates C1 and C2 over a grid. A point where C1 < C2 is reported in the
/// result, not thrown.
inline std::vector<BoundComparison> sweep_bound_constants(const std::vector<int>& dims,
                                                          const std::vector<int>& sample_counts,
                                                          const std::vector<double>& betas) {
  std::vector<BoundComparison> out;
  for (int d : dims) {
    for (int n : sample_counts) {
      for (double b : betas) {
        const auto c = compare_bound_constants(d, n, b);
        // Equal in exact arithmetic when d == 1.
        out.push_back({d, n, b, c, c.c1 >= c.c2 * (1.0 - 1e-12)});
      }
    }
  }
  return out;
}

}  // namespace gmmplan::robust
