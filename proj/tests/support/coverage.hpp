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

// Monte Carlo coverage experiment for the projected moment bounds.

#include <vector>

#include "gmmplan/gmm.hpp"
#include "gmmplan/robustify.hpp"

namespace gmmplan::testing {

struct CoverageResult {
  double mean_per_direction = 0.0;  // pooled over trials and directions
  double cov_per_direction = 0.0;
  double mean_joint = 0.0;  // all directions at once (informational)
  double cov_joint = 0.0;
};

inline CoverageResult bound_coverage(int dim, int n_k, double beta, int trials, int directions,
                                     std::uint64_t seed) {
  SubstreamRng setup(seed, 0, 1);
  std::normal_distribution<double> normal;
  Matrix a(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) a(i, j) = normal(setup);
  const Matrix sigma = a * a.transpose() + Matrix::Identity(dim, dim);
  Vector mu(dim);
  for (int i = 0; i < dim; ++i) mu(i) = normal(setup);
  std::vector<Vector> dirs;
  for (int d = 0; d < directions; ++d) {
    Vector x(dim);
    for (int i = 0; i < dim; ++i) x(i) = normal(setup);
    dirs.push_back(x);
  }
  const double c = robust::r1_coefficient(n_k, beta);
  const double r2 = robust::r2(n_k, beta);
  GmmDistribution g({{1.0, mu, sigma}});
  CoverageResult out;
  for (int t = 0; t < trials; ++t) {
    const auto est = estimate_moments(sample(g, n_k, seed * 1000003ULL + t)).modes[0];
    int ok_mean = 0, ok_cov = 0;
    for (const auto& x : dirs) {
      const double s_hat = x.dot(est.covariance * x);
      ok_mean += std::fabs(est.mean.dot(x) - mu.dot(x)) <= c * std::sqrt(s_hat);
      ok_cov += x.dot(sigma * x) <= (1.0 + r2) * s_hat;
    }
    out.mean_per_direction += static_cast<double>(ok_mean) / directions;
    out.cov_per_direction += static_cast<double>(ok_cov) / directions;
    out.mean_joint += ok_mean == directions;
    out.cov_joint += ok_cov == directions;
  }
  out.mean_per_direction /= trials;
  out.cov_per_direction /= trials;
  out.mean_joint /= trials;
  out.cov_joint /= trials;
  return out;
}

}  // namespace gmmplan::testing
