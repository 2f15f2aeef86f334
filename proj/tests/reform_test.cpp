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

#include "gmmplan/reform.hpp"

#include <gtest/gtest.h>

#include <boost/math/distributions/normal.hpp>

using namespace gmmplan;
using namespace gmmplan::reform;
namespace bm = boost::math;

namespace {

double oracle_q(double p) { return bm::quantile(bm::normal_distribution<>(), p); }
double oracle_pdf(double z) { return bm::pdf(bm::normal_distribution<>(), z); }

Matrix random_psd(int n, std::uint64_t seed) {
  SubstreamRng rng(seed, 0);
  std::normal_distribution<double> g;
  Matrix a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = g(rng);
  return a * a.transpose() / n + 0.1 * Matrix::Identity(n, n);
}

Vector random_vec(int n, std::uint64_t seed) {
  SubstreamRng rng(seed, 1);
  std::normal_distribution<double> g;
  Vector v(n);
  for (int i = 0; i < n; ++i) v(i) = g(rng);
  return v;
}

}  // namespace

TEST(AllocateUniform, PerConstraintShare) {
  const auto cfg = allocate_uniform(0.05, 8, 2, {{0.5, 0.3, 0.2}, {1.0}});
  EXPECT_DOUBLE_EQ(cfg.per_constraint, 0.003125);
  for (int t = 0; t < 8; ++t)
    for (int j = 0; j < 2; ++j) EXPECT_DOUBLE_EQ(cfg.constraint_risk(t, j), 0.003125);
  EXPECT_DOUBLE_EQ(allocate_uniform(0.05, 1, 1, {{1.0}}).per_constraint, 0.05);
}

TEST(AllocateUniform, ModeBudgetsSatisfyWeightedSum) {
  const std::vector<double> w = {0.2, 0.5, 0.3};
  const auto cfg = allocate_uniform(0.04, 4, 1, {w});
  double weighted = 0.0;
  for (int k = 0; k < 3; ++k) {
    EXPECT_DOUBLE_EQ(cfg.mode_risk(0, 0, k), cfg.constraint_risk(0, 0));
    weighted += w[k] * cfg.mode_risk(0, 0, k);
  }
  EXPECT_NEAR(weighted, cfg.constraint_risk(0, 0), 1e-18);
}

TEST(AllocateUniform, RejectsBadInput) {
  EXPECT_THROW(allocate_uniform(0.6, 8, 2, {{1.0}, {1.0}}), std::domain_error);
  EXPECT_THROW(allocate_uniform(0.0, 8, 2, {{1.0}, {1.0}}), std::domain_error);
  EXPECT_THROW(allocate_uniform(0.05, 8, 1, {{0.5, 0.6}}), std::invalid_argument);
  EXPECT_THROW(allocate_uniform(0.05, 0, 1, {{1.0}}), std::domain_error);
}

TEST(Gamma, ChanceValues) {
  EXPECT_NEAR(gamma_chance(0.05), 1.6448536, 1e-7);
  EXPECT_NEAR(gamma_chance(0.003125), oracle_q(1 - 0.003125), 1e-9);
  EXPECT_NEAR(gamma_chance(0.003125), 2.7343688, 1e-6);
  EXPECT_GT(gamma_chance(0.4999999), 0.0);
  EXPECT_LT(gamma_chance(0.4999999), 1e-5);
}

TEST(Gamma, CvarValues) {
  EXPECT_NEAR(gamma_cvar(0.05), 2.0627128, 1e-6);
  EXPECT_NEAR(gamma_cvar(0.05), oracle_pdf(oracle_q(0.95)) / 0.05, 1e-9);
  EXPECT_NEAR(gamma_cvar(0.5), 0.7978846, 1e-7);
  EXPECT_THROW(gamma_cvar(0.0), std::domain_error);
  EXPECT_THROW(gamma_chance(0.7), std::domain_error);
}

TEST(Gamma, CvarDominatesChance) {
  for (int i = 1; i < 500; ++i) {
    const double e = i / 1000.0;
    ASSERT_GT(gamma_cvar(e), gamma_chance(e)) << e;
  }
}

TEST(SocTerm, ZeroCovarianceIsLinear) {
  const Vector mu = random_vec(4, 1);
  const auto t = build_soc_term(mu, Matrix::Zero(4, 4), 2.0);
  const Vector x = random_vec(4, 2);
  EXPECT_NEAR(t.lhs(x), mu.dot(x), 1e-14);
}

TEST(SocTerm, IdentityGivesNorm) {
  const auto t = build_soc_term(Vector::Zero(3), Matrix::Identity(3, 3), 1.0);
  const Vector x = random_vec(3, 3);
  EXPECT_NEAR(t.lhs(x), x.norm(), 1e-14);
}

TEST(SocTerm, RobustConvergesToKnownMoments) {
  const Matrix s = random_psd(4, 5);
  const Vector mu = random_vec(4, 6);
  const Vector x = random_vec(4, 7);
  const auto exact = build_soc_term(mu, s, gamma_chance(0.01));
  double prev = 1e9;
  for (int n : {100, 10000, 1000000}) {
    const auto rob = build_soc_term(mu, s, gamma_chance(0.01), RobustOptions{n, 1e-3});
    const double gap = rob.lhs(x) - exact.lhs(x);
    EXPECT_GT(gap, 0.0);
    EXPECT_LT(gap, prev);
    prev = gap;
  }
  EXPECT_LT(prev, 0.02 * std::sqrt(x.dot(s * x)));
}

TEST(SocTerm, RobustCoefficientLayout) {
  const Matrix s = random_psd(3, 8);
  const auto rob = build_soc_term(Vector::Zero(3), s, 2.0, RobustOptions{500, 1e-3});
  EXPECT_NEAR(rob.gamma, 2.0 * std::sqrt(1.0 + robust::r2(500, 1e-3)), 1e-14);
  EXPECT_NEAR(rob.offset, robust::r1_coefficient(500, 1e-3), 1e-14);
  EXPECT_EQ(rob.norm_offset, 0.0);
}

TEST(SocTerm, RejectsIndefiniteCovariance) {
  Matrix s = Matrix::Identity(2, 2);
  s(1, 1) = -1.0;
  EXPECT_THROW(build_soc_term(Vector::Zero(2), s, 1.0), std::domain_error);
}

TEST(SocTerm, CvarAndRobustDominance) {
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + trial % 4;
    const Matrix s = random_psd(n, 100 + trial);
    const Vector mu = random_vec(n, 200 + trial);
    const Vector x = random_vec(n, 300 + trial);
    const double eps = 0.001 + 0.4 * (trial / 100.0);
    const auto chance = build_soc_term(mu, s, gamma_chance(eps));
    const auto cvar = build_soc_term(mu, s, gamma_cvar(eps));
    const auto rob = build_soc_term(mu, s, gamma_chance(eps), RobustOptions{30 + trial, 1e-3});
    const auto prior = build_soc_term(mu, s, gamma_chance(eps),
                                      RobustOptions{30 + trial, 1e-3, MeanBound::kWholeVector});
    EXPECT_GE(cvar.lhs(x), chance.lhs(x));
    EXPECT_GE(rob.lhs(x), chance.lhs(x));
    EXPECT_GE(prior.lhs(x) - prior.norm_offset * x.norm() + rob.offset * std::sqrt(x.dot(s * x)),
              rob.lhs(x) - 1e-12);
  }
}

TEST(ChanceMc, SanityCases) {
  const Vector x = (Vector(3) << 1.0, 0.5, 1.0).finished();
  const Matrix tiny = 1e-6 * Matrix::Identity(3, 3);
  EXPECT_EQ(check_chance_constraint_mc(-10.0 * x, tiny, x, 10000, 1), 0.0);
  const Matrix s = random_psd(3, 9);
  // Mean orthogonal to x: symmetric about zero.
  const Vector mu = (Vector(3) << 1.0, -2.0, 0.0).finished();
  EXPECT_NEAR(check_chance_constraint_mc(mu, s, x, 100000, 2), 0.5, 4.0 * std::sqrt(0.25 / 1e5));
}

TEST(ChanceMc, ActiveBoundaryHitsRiskLevel) {
  for (int trial = 0; trial < 5; ++trial) {
    const int n = 3;
    const double eps = 0.01 + 0.02 * trial;
    const Matrix s = random_psd(n, 400 + trial);
    Vector mu = random_vec(n, 500 + trial);
    const Vector x = random_vec(n, 600 + trial);
    const auto term = build_soc_term(mu, s, gamma_chance(eps));
    mu -= term.lhs(x) / x.squaredNorm() * x;
    ASSERT_NEAR(build_soc_term(mu, s, gamma_chance(eps)).lhs(x), 0.0, 1e-12);
    const std::size_t draws = 100000;
    const double rate = check_chance_constraint_mc(mu, s, x, draws, 700 + trial);
    EXPECT_NEAR(rate, eps, 4.0 * std::sqrt(eps * (1 - eps) / draws));
  }
}
