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

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gmmplan/rng.hpp"

namespace gmmplan {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Raised when a mode has too few labeled samples to estimate its moments.
class InsufficientSamplesError : public std::runtime_error {
 public:
  InsufficientSamplesError(int mode, int have, int need)
      : std::runtime_error("mode " + std::to_string(mode + 1) + " has " + std::to_string(have) +
                           " samples, need at least " + std::to_string(need)),
        mode_(mode) {}
  int mode() const { return mode_; }

 private:
  int mode_;
};

/// Returns a factor L with L * L^T == cov, valid for singular PSD matrices.
inline Matrix psd_factor(const Matrix& cov) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal();
}

inline double min_eigenvalue(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m, Eigen::EigenvaluesOnly);
  return eig.eigenvalues()(0);
}

inline double max_eigenvalue(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m, Eigen::EigenvaluesOnly);
  return eig.eigenvalues()(m.rows() - 1);
}

struct GaussianMode {
  double weight = 1.0;
  Vector mean;
  Matrix covariance;
};

/// A K-mode Gaussian mixture. Immutable once constructed; the constructor
/// enforces positive weights summing to one and symmetric PSD covariances.
class GmmDistribution {
 public:
  explicit GmmDistribution(std::vector<GaussianMode> modes) : modes_(std::move(modes)) {
    if (modes_.empty()) throw std::invalid_argument("GMM needs at least one mode");
    const auto n = modes_.front().mean.size();
    double total = 0.0;
    for (std::size_t k = 0; k < modes_.size(); ++k) {
      const auto& m = modes_[k];
      const std::string tag = "mode " + std::to_string(k + 1) + ": ";
      if (!(m.weight > 0.0)) throw std::invalid_argument(tag + "weight must be positive");
      if (m.mean.size() != n || m.covariance.rows() != n || m.covariance.cols() != n) {
        throw std::invalid_argument(tag + "dimension mismatch");
      }
      if ((m.covariance - m.covariance.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
        throw std::invalid_argument(tag + "covariance must be symmetric");
      }
      if (n > 0 && min_eigenvalue(m.covariance) < -1e-10) {
        throw std::invalid_argument(tag + "covariance must be positive semidefinite");
      }
      total += m.weight;
    }
    if (std::fabs(total - 1.0) > 1e-12) throw std::invalid_argument("weights must sum to 1");
    factors_.reserve(modes_.size());
    for (const auto& m : modes_) factors_.push_back(psd_factor(m.covariance));
  }

  int num_modes() const { return static_cast<int>(modes_.size()); }
  int dim() const { return static_cast<int>(modes_.front().mean.size()); }
  const std::vector<GaussianMode>& modes() const { return modes_; }
  const GaussianMode& mode(int k) const { return modes_.at(k); }
  const Matrix& factor(int k) const { return factors_.at(k); }

  std::vector<double> weights() const {
    std::vector<double> w;
    for (const auto& m : modes_) w.push_back(m.weight);
    return w;
  }

  Vector mean() const {
    Vector mu = Vector::Zero(dim());
    for (const auto& m : modes_) mu += m.weight * m.mean;
    return mu;
  }

  /// Law of total covariance: within-mode spread plus spread of the means.
  Matrix covariance() const {
    const Vector mu = mean();
    Matrix cov = Matrix::Zero(dim(), dim());
    for (const auto& m : modes_) {
      const Vector d = m.mean - mu;
      cov += m.weight * (m.covariance + d * d.transpose());
    }
    return cov;
  }

  /// Moment-matched single Gaussian.
  GmmDistribution collapse() const {
    Matrix cov = covariance();
    cov = 0.5 * (cov + cov.transpose());
    return GmmDistribution({GaussianMode{1.0, mean(), cov}});
  }

 private:
  std::vector<GaussianMode> modes_;
  std::vector<Matrix> factors_;
};

/// Categorical draw over `weights` using one uniform from `rng`.
inline int draw_mode(std::span<const double> weights, SubstreamRng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < weights.size(); ++k) {
    acc += weights[k];
    if (u < acc) return static_cast<int>(k);
  }
  return static_cast<int>(weights.size()) - 1;
}

/// mean + factor * z with z standard normal.
inline Vector draw_gaussian(const Vector& mean, const Matrix& factor, SubstreamRng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector z(factor.cols());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
  return mean + factor * z;
}

/// One draw with its (0-based) mode label.
struct LabeledSample {
  Vector value;
  int mode = 0;
};

struct LabeledSampleSet {
  int num_modes = 1;
  std::vector<LabeledSample> samples;

  std::vector<int> counts() const {
    std::vector<int> c(num_modes, 0);
    for (const auto& s : samples) ++c.at(s.mode);
    return c;
  }
  std::size_t size() const { return samples.size(); }
};

/// Draws `count` labeled samples. Sample i uses substream (seed, i) only.
inline LabeledSampleSet sample(const GmmDistribution& gmm, std::size_t count,
                               std::uint64_t seed) {
  if (count == 0) throw std::domain_error("sample: count must be positive");
  LabeledSampleSet out;
  out.num_modes = gmm.num_modes();
  out.samples.resize(count);
  const auto weights = gmm.weights();
  for (std::size_t i = 0; i < count; ++i) {
    SubstreamRng rng(seed, i);
    const int k = draw_mode(weights, rng);
    out.samples[i] = LabeledSample{draw_gaussian(gmm.mode(k).mean, gmm.factor(k), rng), k};
  }
  return out;
}

/// Ridge added to a sample covariance whose smallest eigenvalue is below it.
inline constexpr double kCovarianceRidge = 1e-9;

struct ModeEstimate {
  Vector mean;
  Matrix covariance;  // unbiased, divisor count - 1
  int count = 0;
  bool ridged = false;
};

struct EstimatedMoments {
  std::vector<ModeEstimate> modes;
};

/// Sample mean and unbiased covariance of `values` (at least two), with the
/// ridge policy applied.
inline ModeEstimate estimate_mode(std::span<const Vector> values) {
  if (values.size() < 2) throw std::domain_error("estimate_mode: need at least two samples");
  const auto n = values.front().size();
  ModeEstimate m;
  m.count = static_cast<int>(values.size());
  m.mean = Vector::Zero(n);
  for (const auto& v : values) m.mean += v;
  m.mean /= m.count;
  m.covariance = Matrix::Zero(n, n);
  for (const auto& v : values) {
    const Vector d = v - m.mean;
    m.covariance.noalias() += d * d.transpose();
  }
  m.covariance /= (m.count - 1);
  m.covariance = 0.5 * (m.covariance + m.covariance.transpose());
  if (min_eigenvalue(m.covariance) < kCovarianceRidge) {
    m.covariance.diagonal().array() += kCovarianceRidge;
    m.ridged = true;
  }
  return m;
}

/// Per-mode moments from labeled samples. Every mode needs at least dim + 2
/// samples so that the Hotelling quantile used downstream exists.
inline EstimatedMoments estimate_moments(const LabeledSampleSet& set) {
  if (set.samples.empty()) throw std::domain_error("estimate_moments: empty sample set");
  const auto n = static_cast<int>(set.samples.front().value.size());
  const auto counts = set.counts();
  for (int k = 0; k < set.num_modes; ++k) {
    if (counts[k] < n + 2) throw InsufficientSamplesError(k, counts[k], n + 2);
  }
  std::vector<std::vector<Vector>> by_mode(set.num_modes);
  for (int k = 0; k < set.num_modes; ++k) by_mode[k].reserve(counts[k]);
  for (const auto& s : set.samples) by_mode[s.mode].push_back(s.value);
  EstimatedMoments out;
  for (const auto& values : by_mode) out.modes.push_back(estimate_mode(values));
  return out;
}

}  // namespace gmmplan
