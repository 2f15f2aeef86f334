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

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <chrono>
#include <cstdio>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "gmmplan/conic.hpp"
#include "gmmplan/mip.hpp"
#include "gmmplan/reform.hpp"
#include "gmmplan/robustify.hpp"
#include "gmmplan/scene.hpp"
#include "gmmplan/stats.hpp"
#include "gmmplan/validate.hpp"
#include "support/conic_oracle.hpp"
#include "support/coverage.hpp"
#include "support/mip_instances.hpp"

namespace {

using namespace gmmplan;
using mip::Method;

constexpr Method kMethods[4] = {Method::kMta, Method::kMra, Method::kCvar, Method::kCvarr};

int failures = 0;

void verdict(int id, bool ok, const std::string& what, const std::string& detail) {
  std::printf("criterion %d %s: %s [%s]\n", id, ok ? "PASS" : "FAIL", what.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

struct Planned {
  mip::BnbReport report;
  double seconds = 0.0;
};

Planned plan(const scene::PlanProblem& pb, Method m, reform::MeanBound mb = reform::MeanBound::kProjected,
             bool collapse = false) {
  mip::BuildOptions o;
  o.method = m;
  o.mean_bound = mb;
  o.collapse_modes = collapse;
  const auto t0 = std::chrono::steady_clock::now();
  Planned p;
  p.report = mip::solve_bnb(mip::build(pb, o));
  p.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return p;
}

bool optimal(const Planned& p) { return p.report.status == mip::BnbStatus::kOptimal; }

validate::ValidationReport check(const scene::PlanProblem& pb, const Planned& p, std::uint64_t seed) {
  validate::ValidateOptions o;
  o.samples = 100000;
  o.seed = seed;
  return validate::validate(pb, p.report.trajectory, o);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// 1. Feasibility, risk level and runtime on the 3-mode scene.
void criterion1() {
  const auto pb = scene::generate_scene("intersection_3mode", 1);
  bool ok = pb.horizon() == 8 && pb.dynamics.dt == 0.5 && pb.obstacles.size() == 2 && pb.sampling.n_samples == 1000;
  std::string detail;
  double slowest = 0.0, worst_rate = 0.0;
  for (auto m : kMethods) {
    const auto p = plan(pb, m);
    slowest = std::max(slowest, p.seconds);
    if (!optimal(p)) {
      ok = false;
      detail += std::string(mip::to_string(m)) + " " + mip::to_string(p.report.status) + "; ";
      continue;
    }
    const auto v = check(pb, p, 0xacce55);
    worst_rate = std::max(worst_rate, v.vrate);
    ok = ok && v.vrate < 0.05 && p.seconds <= 10.0;
    detail += std::string(mip::to_string(m)) + " vrate " + fmt("%.5f", v.vrate) + " " + fmt("%.2fs", p.seconds) + "; ";
  }
  verdict(1, ok, "four methods feasible, joint VRate < 0.05 over 1e5 draws, <= 10 s per plan",
          detail + "max vrate " + fmt("%.5f", worst_rate) + ", slowest " + fmt("%.3f s", slowest));
}

// 2. Cost nesting on 10 seeds of each template.
void criterion2() {
  bool ok = true;
  int scenes = 0;
  std::string detail;
  for (const char* tpl : {"intersection_3mode", "intersection_2mode"}) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const auto pb = scene::generate_scene(tpl, seed);
      std::map<Method, double> c;
      bool all = true;
      for (auto m : kMethods) {
        const auto p = plan(pb, m);
        all = all && optimal(p);
        c[m] = p.report.cost;
      }
      ++scenes;
      const double tol = 1e-6;
      const bool nested = all && c[Method::kMta] <= c[Method::kMra] + tol && c[Method::kMra] <= c[Method::kCvarr] + tol &&
                          c[Method::kMta] <= c[Method::kCvar] + tol && c[Method::kCvar] <= c[Method::kCvarr] + tol;
      if (!nested) {
        ok = false;
        detail += std::string(tpl) + " seed " + std::to_string(seed) + " out of order; ";
      }
    }
  }
  verdict(2, ok, "cost(MTA) <= cost(MRA), cost(CVaR) <= cost(CVaRR) within 1e-6",
          detail + std::to_string(scenes) + " scenes checked");
}

// 3. Median violation amount, CVaRR vs MTA, over 20 scenes where both plans
// show violations.
void criterion3() {
  std::vector<double> mta, cvarr;
  int tried = 0;
  for (std::uint64_t seed = 1; mta.size() < 20 && seed <= 200; ++seed) {
    for (const char* tpl : {"intersection_3mode", "intersection_2mode"}) {
      if (mta.size() >= 20) break;
      ++tried;
      const auto pb = scene::generate_scene(tpl, seed);
      const auto a = plan(pb, Method::kMta), b = plan(pb, Method::kCvarr);
      if (!optimal(a) || !optimal(b)) continue;
      const auto va = check(pb, a, 0x5eed + seed), vb = check(pb, b, 0x5eed + seed);
      if (va.violations == 0 || vb.violations == 0) continue;
      mta.push_back(va.e_vamt_m);
      cvarr.push_back(vb.e_vamt_m);
    }
  }
  const bool enough = mta.size() == 20;
  const double m1 = enough ? median(mta) : 0.0, m2 = enough ? median(cvarr) : 0.0;
  verdict(3, enough && m2 <= m1, "median E{VAmt}(CVaRR) <= median E{VAmt}(MTA) over 20 scenes with violations",
          "MTA " + fmt("%.4f m", m1) + ", CVaRR " + fmt("%.4f m", m2) + ", scenes " + std::to_string(mta.size()) +
              " of " + std::to_string(tried) + " tried");
}

// 4. Multimodal advantage on a well separated 3-mode scene.
void criterion4() {
  const auto pb = scene::generate_scene("intersection_3mode", 1);
  const double sep = scene::mode_separation(pb.obstacles[0]);
  const auto gmm = plan(pb, Method::kMta);
  const auto uni = plan(pb, Method::kMta, reform::MeanBound::kProjected, true);
  const bool uni_worse = uni.report.status == mip::BnbStatus::kInfeasible ||
                         (optimal(uni) && uni.report.cost >= gmm.report.cost + 1.0);
  verdict(4, sep >= 6.0 && optimal(gmm) && uni_worse,
          "K=1 collapse infeasible or >= 1.0 costlier while the mixture plan is feasible",
          "separation " + fmt("%.2f sigma", sep) + ", mixture cost " + fmt("%.4f", gmm.report.cost) + ", collapsed " +
              mip::to_string(uni.report.status));
}

// 5. Boundary-active chance constraints hit their risk level.
void criterion5() {
  std::mt19937_64 rng(55);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const std::size_t draws = 1000000;
  int passed = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + trial % 3;
    Matrix a(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) a(i, j) = u(rng);
    const Matrix s = a * a.transpose() + 0.1 * Matrix::Identity(n, n);
    Vector mu(n), x(n);
    for (int i = 0; i < n; ++i) {
      mu(i) = u(rng);
      x(i) = u(rng);
    }
    const double eps = 0.005 + 0.095 * (0.5 + 0.5 * u(rng));
    // Shift the mean along x until the constraint is exactly active.
    const double lhs = reform::build_soc_term(mu, s, reform::gamma_chance(eps)).lhs(x);
    mu -= lhs / x.squaredNorm() * x;
    const double rate = reform::check_chance_constraint_mc(mu, s, x, draws, 5000 + trial);
    const double z = std::fabs(rate - eps) / std::sqrt(eps * (1.0 - eps) / draws);
    worst = std::max(worst, z);
    passed += z <= 4.0;
  }
  verdict(5, passed == 50, "MC violation of boundary-active constraints within 4 binomial sd of eps (1e6 draws)",
          std::to_string(passed) + "/50 within, worst " + fmt("%.2f sd", worst));
}

// 6. Coverage of the mean and covariance bounds.
void criterion6() {
  const auto r = testing::bound_coverage(3, 100, 0.05, 2000, 20, 6006);
  const double floor = 0.95 - 3.0 * std::sqrt(0.05 * 0.95 / 2000.0);
  verdict(6, r.mean_per_direction >= floor && r.cov_per_direction >= floor,
          "mean and covariance bound coverage >= " + fmt("%.4f", floor) + " (beta 0.05, N 100, dim 3, 2000 trials)",
          "mean " + fmt("%.4f", r.mean_per_direction) + ", covariance " + fmt("%.4f", r.cov_per_direction) +
              " per fixed direction; all 20 directions jointly " + fmt("%.4f", r.mean_joint) + " / " +
              fmt("%.4f", r.cov_joint));
}

// 7. C1 >= C2 on the grid, and the whole-vector bound loses feasibility
// where the projected one keeps it.
void criterion7() {
  const auto grid = robust::sweep_bound_constants({1, 2, 3, 5, 8}, {10, 100, 1000, 10000}, {1e-4, 1e-3, 1e-2, 1e-1});
  int ordered = 0;
  for (const auto& g : grid) ordered += g.c1_at_least_c2;
  std::string detail = std::to_string(ordered) + "/" + std::to_string(grid.size()) + " grid points with C1 >= C2; ";
  bool found = false;
  struct Frame {
    const char* name;
    scene::Vec2 origin;
  };
  for (const Frame& f : {Frame{"local frame", {0.0, 0.0}}, Frame{"map frame", {400.0, 1100.0}}}) {
    const auto pb = scene::translate(scene::generate_scene("intersection_3mode", 1), f.origin);
    for (auto m : {Method::kMra, Method::kCvarr}) {
      const auto proj = plan(pb, m, reform::MeanBound::kProjected);
      const auto whole = plan(pb, m, reform::MeanBound::kWholeVector);
      const bool hit = optimal(proj) && whole.report.status == mip::BnbStatus::kInfeasible;
      found = found || hit;
      detail += std::string(f.name) + " " + mip::to_string(m) + ": r1 " + mip::to_string(proj.report.status) +
                ", R1 " + mip::to_string(whole.report.status) + "; ";
    }
  }
  verdict(7, ordered == static_cast<int>(grid.size()) && found,
          "C1 >= C2 on the grid and R1 infeasible where r1 is feasible on an acceptance scene", detail);
}

// 8. Branch-and-bound vs enumeration, conic solver vs oracles.
void criterion8() {
  int matched = 0, feasible = 0, branched = 0;
  double worst = 0.0;
  for (unsigned seed = 0; seed < 100; ++seed) {
    Method m;
    const auto pb = testing::small_plan_problem(8000 + seed, &m);
    mip::BuildOptions o;
    o.method = m;
    const auto model = mip::build(pb, o);
    if (model.num_binaries() > 12) continue;
    const auto r = mip::solve_bnb(model);
    const double want = mip::enumerate_assignments(model);
    branched += r.nodes > 1;
    if (!std::isfinite(want)) {
      matched += r.status == mip::BnbStatus::kInfeasible;
      continue;
    }
    ++feasible;
    const double err = r.status == mip::BnbStatus::kOptimal ? std::fabs(r.cost - want) : conic::kInf;
    worst = std::max(worst, err);
    matched += err <= 1e-6;
  }
  int conic_ok = 0;
  double conic_worst = 0.0;
  for (int trial = 0; trial < 40; ++trial) {
    const auto p = testing::random_small_program(1000 + trial);
    const auto s = conic::solve(p);
    const double err = s.status == conic::Status::kOptimal ? std::fabs(s.objective - testing::grid_minimize(p)) : conic::kInf;
    conic_worst = std::max(conic_worst, err);
    conic_ok += err <= 1e-4;
  }
  // Closed form: minimize -y subject to y <= -1.645.
  conic::ConicProgram cf(1);
  cf.cost << -1.0;
  cf.inequalities.push_back({{{0, 1.0}}, -1.645});
  const auto cs = conic::solve(cf);
  const bool closed = cs.status == conic::Status::kOptimal && std::fabs(cs.y(0) + 1.645) <= 1e-4;
  verdict(8, matched == 100 && conic_ok == 40 && closed,
          "B&B equals SOS1 enumeration within 1e-6 on 100 instances; conic matches oracles within 1e-4",
          std::to_string(matched) + "/100 matched (" + std::to_string(feasible) + " feasible, " +
              std::to_string(branched) + " branched), worst " + fmt("%.2e", worst) + "; conic " +
              std::to_string(conic_ok) + "/40, worst " + fmt("%.2e", conic_worst));
}

// 9. Statistics kernel against Boost.Math.
void criterion9() {
  namespace bm = boost::math;
  const bm::normal_distribution<> nd(0.0, 1.0);
  const double q = stats::normal_quantile(0.95), q_ref = bm::quantile(nd, 0.95);
  const double cv = reform::gamma_cvar(0.05), cv_ref = bm::pdf(nd, q_ref) / 0.05;
  const double c2 = stats::chi2_quantile(0.95, 1), c2_ref = bm::quantile(bm::chi_squared_distribution<>(1.0), 0.95);
  bool ok = std::fabs(q - q_ref) <= 1e-6 && std::fabs(cv - cv_ref) <= 1e-6 && std::fabs(c2 - c2_ref) <= 1e-6;
  ok = ok && std::fabs(q - 1.6448536) <= 1e-6 && std::fabs(cv - 2.0627128) <= 1e-6 && std::fabs(c2 - 3.8414588) <= 1e-6;
  SubstreamRng rng(909, 0, 0);
  std::normal_distribution<double> g;
  std::vector<double> draws(1000000);
  for (auto& v : draws) v = g(rng);
  const double emp = validate::empirical_cvar(draws, 0.05);
  ok = ok && std::fabs(emp - 2.0627) <= 0.01;
  verdict(9, ok, "quantiles within 1e-6 of Boost.Math; empirical CVaR of 1e6 N(0,1) draws within 0.01 of 2.0627",
          "z " + fmt("%.9f", q) + ", gamma_cvar " + fmt("%.9f", cv) + ", chi2 " + fmt("%.9f", c2) + ", empirical " +
              fmt("%.5f", emp));
}

}  // namespace

int main() {
  criterion1();
  criterion2();
  criterion3();
  criterion4();
  criterion5();
  criterion6();
  criterion7();
  criterion8();
  criterion9();
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
