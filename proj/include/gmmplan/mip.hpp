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

// Mixed-integer SOC model of the planning problem and a best-first
// branch-and-bound over its SOS1 groups.
//
// For every step t, obstacle j and mode k one face i of the obstacle must be
// cleared. With w_ijk^t = 1 selecting the face,
//
//     LHS_ijk^t(x_t) <= M (1 - w_ijk^t),    sum_i w_ijk^t = 1,
//
// where LHS is the SOC image of the per-mode chance or CVaR constraint. A
// node fixes some groups to a face; the remaining groups keep their binaries
// relaxed to [0, 1].

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmmplan/conic.hpp"
#include "gmmplan/reform.hpp"
#include "gmmplan/scene.hpp"
#include "json.hpp"

namespace gmmplan::mip {

using scene::Interval;
using scene::PlanProblem;

enum class Method { kMta, kMra, kCvar, kCvarr };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::kMta: return "mta";
    case Method::kMra: return "mra";
    case Method::kCvar: return "cvar";
    case Method::kCvarr: return "cvarr";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "mta") return Method::kMta;
  if (s == "mra") return Method::kMra;
  if (s == "cvar") return Method::kCvar;
  if (s == "cvarr") return Method::kCvarr;
  throw std::invalid_argument("unknown method '" + s + "' (expected mta, mra, cvar or cvarr)");
}

inline bool is_robust(Method m) { return m == Method::kMra || m == Method::kCvarr; }
inline bool is_cvar(Method m) { return m == Method::kCvar || m == Method::kCvarr; }

struct BuildOptions {
  Method method = Method::kMta;
  reform::MeanBound mean_bound = reform::MeanBound::kProjected;
  /// Replace every obstacle mixture by its single-mode moment match.
  bool collapse_modes = false;
  std::optional<double> big_m;  // overrides the scene value and certification
};

/// One face constraint LHS(x_t) <= M (1 - w); row b belongs to binary b.
struct FaceRow {
  int t = 0, j = 0, i = 0, k = 0;
  int group = 0;
  reform::SocTerm term;  // over [x_t; 1]
  double big_m = 0.0;    // row-wise certified constant
  bool always_satisfied = false;  // LHS <= 0 on the whole reachable box
  bool never_satisfiable = false;  // LHS > 0 on the whole reachable box
};

struct Group {
  int t = 0, j = 0, k = 0;
  std::vector<int> rows;  // binary / row indices, ordered by face
};

struct MisocpModel {
  Method method = Method::kMta;
  int horizon = 0, nx = 0, nu = 0;
  scene::DynamicsModel dynamics;
  scene::CostSpec cost;
  reform::RiskConfig risk;
  double big_m = 0.0;  // certified (or given) constant; rows may use tighter values
  std::vector<FaceRow> rows;
  std::vector<Group> groups;
  std::vector<std::vector<Interval>> reach;  // state box per step 1..T (index t-1)

  int num_binaries() const { return static_cast<int>(rows.size()); }
  int num_continuous() const { return horizon * (nx + nu); }
  int state_var(int t, int r) const { return (t - 1) * nx + r; }
  int input_var(int t, int r) const { return horizon * nx + t * nu + r; }
  int num_soc_constraints() const { return static_cast<int>(rows.size()); }
};

namespace detail {

// Interval bounds of ||[x; 1]|| and mu^T [x; 1] over a box.
inline std::pair<double, double> linear_range(const Vector& mu, const std::vector<Interval>& box) {
  const int n = static_cast<int>(box.size());
  double lo = mu(n), hi = mu(n);
  for (int r = 0; r < n; ++r) {
    if (mu(r) == 0.0) continue;
    const double a = mu(r) * box[r].lo, b = mu(r) * box[r].hi;
    lo += std::min(a, b);
    hi += std::max(a, b);
  }
  return {lo, hi};
}

inline std::pair<double, double> norm_range(const std::vector<Interval>& box) {
  double lo = 1.0, hi = 1.0;
  for (const auto& iv : box) {
    const double m = std::max(std::fabs(iv.lo), std::fabs(iv.hi));
    hi += m * m;
    const double n = (iv.lo <= 0.0 && iv.hi >= 0.0) ? 0.0 : std::min(std::fabs(iv.lo), std::fabs(iv.hi));
    lo += n * n;
  }
  return {std::sqrt(lo), std::sqrt(hi)};
}

// Range of sqrt(x~^T S x~) over a box, by interval arithmetic on the quadratic
// form (exact when only the offset entry of S is nonzero).
inline std::pair<double, double> quad_range(const Matrix& s, const std::vector<Interval>& box) {
  const int n = static_cast<int>(box.size());
  std::vector<Interval> ext = box;
  ext.push_back({1.0, 1.0});
  double lo = 0.0, hi = 0.0;
  bool constant = true;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b <= n; ++b)
      if (s(a, b) != 0.0 || s(b, a) != 0.0) constant = false;
  if (constant) {
    const double v = std::sqrt(std::max(0.0, s(n, n)));
    return {v, v};
  }
  for (int a = 0; a <= n; ++a)
    for (int b = 0; b <= n; ++b) {
      if (s(a, b) == 0.0) continue;
      const double c[4] = {ext[a].lo * ext[b].lo, ext[a].lo * ext[b].hi, ext[a].hi * ext[b].lo,
                           ext[a].hi * ext[b].hi};
      const double mn = *std::min_element(c, c + 4), mx = *std::max_element(c, c + 4);
      hi += s(a, b) > 0 ? s(a, b) * mx : s(a, b) * mn;
    }
  (void)lo;
  return {0.0, std::sqrt(std::max(0.0, hi))};
}

inline std::pair<double, double> lhs_range(const reform::SocTerm& term, const std::vector<Interval>& box) {
  const auto [ql, qh] = quad_range(term.cov, box);
  const auto [nl, nh] = norm_range(box);
  const auto [ml, mh] = linear_range(term.mean, box);
  const double c = term.cone_coefficient();
  return {c * ql + term.norm_offset * nl + ml, c * qh + term.norm_offset * nh + mh};
}

inline void require_bounded(const std::vector<Interval>& box) {
  for (const auto& iv : box) {
    if (!iv.bounded()) {
      throw std::invalid_argument(
          "certify_big_m: the state box is unbounded; set an explicit big_m in the scene file");
    }
  }
}

}  // namespace detail

/// Interval boxes containing every state reachable at t = 1..T under the
/// input bounds, intersected with the state box.
inline std::vector<std::vector<Interval>> reachable_boxes(const scene::DynamicsModel& d) {
  std::vector<std::vector<Interval>> out;
  const int nx = d.nx(), nu = d.nu();
  Vector c = d.x0, r = Vector::Zero(nx);
  for (int t = 0; t < d.horizon; ++t) {
    Vector cu(nu), ru(nu);
    bool inputs_bounded = true;
    for (int q = 0; q < nu; ++q) {
      const auto& iv = d.input_bounds[q];
      inputs_bounded = inputs_bounded && iv.bounded();
      cu(q) = iv.bounded() ? 0.5 * (iv.lo + iv.hi) : 0.0;
      ru(q) = iv.bounded() ? 0.5 * (iv.hi - iv.lo) : 0.0;
    }
    Vector c2 = d.a[t] * c + d.b[t] * cu;
    Vector r2 = d.a[t].cwiseAbs() * r + d.b[t].cwiseAbs() * ru;
    std::vector<Interval> box(nx);
    for (int q = 0; q < nx; ++q) {
      Interval iv = inputs_bounded && std::isfinite(r2(q)) ? Interval{c2(q) - r2(q), c2(q) + r2(q)} : Interval{};
      iv.lo = std::max(iv.lo, d.state_bounds[q].lo);
      iv.hi = std::min(iv.hi, d.state_bounds[q].hi);
      if (iv.lo > iv.hi) iv.hi = iv.lo;  // empty reach: the plan is infeasible anyway
      box[q] = iv;
      if (iv.bounded()) {
        c(q) = 0.5 * (iv.lo + iv.hi);
        r(q) = 0.5 * (iv.hi - iv.lo);
      } else {
        c(q) = 0.0;
        r(q) = std::numeric_limits<double>::infinity();
      }
    }
    out.push_back(std::move(box));
  }
  return out;
}

namespace detail {

inline std::vector<reform::SocTerm> build_terms(const PlanProblem& pb, const BuildOptions& opt,
                                                std::vector<FaceRow>& rows, std::vector<Group>& groups,
                                                reform::RiskConfig& risk) {
  if (is_robust(opt.method) && pb.sampling.mode != scene::SamplingMode::kSamples) {
    throw std::invalid_argument(std::string(to_string(opt.method)) +
                                " needs sample-estimated moments: set sampling.mode to \"samples\"");
  }
  auto moments = scene::resolve_moments(pb);
  if (opt.collapse_modes) moments = scene::collapse(moments);
  const int horizon = pb.horizon();
  const int nobs = static_cast<int>(pb.obstacles.size());
  std::vector<std::vector<double>> weights;
  for (int j = 0; j < nobs; ++j) {
    std::vector<double> w;
    for (const auto& m : moments.table[j][0]) w.push_back(m.weight);
    double total = 0.0;
    for (double v : w) total += v;
    for (double& v : w) v /= total;
    weights.push_back(w);
  }
  if (nobs > 0) {
    risk = reform::allocate_uniform(pb.risk.epsilon, horizon, nobs, weights, pb.risk.beta);
  } else {
    risk = reform::allocate_uniform(pb.risk.epsilon, horizon, 1, {{1.0}}, pb.risk.beta);
    risk.num_obstacles = 0;
  }
  std::vector<reform::SocTerm> terms;
  for (int t = 1; t <= horizon; ++t) {
    for (int j = 0; j < nobs; ++j) {
      const auto& obs = pb.obstacles[j];
      for (int k = 0; k < moments.num_modes(j); ++k) {
        const auto& cm = moments.at(j, t, k);
        const double eps = risk.mode_risk(t, j, k);
        const double gamma = is_cvar(opt.method) ? reform::gamma_cvar(eps) : reform::gamma_chance(eps);
        std::optional<reform::RobustOptions> robust;
        if (is_robust(opt.method)) robust = reform::RobustOptions{cm.count, pb.risk.beta, opt.mean_bound};
        if (robust && opt.mean_bound == reform::MeanBound::kWholeVector && cm.count < pb.dynamics.nx() + 3) {
          throw InsufficientSamplesError(k, cm.count, pb.dynamics.nx() + 3);
        }
        Group g{t, j, k, {}};
        for (int i = 0; i < obs.num_faces(); ++i) {
          const auto f = scene::face_delta(pb.dynamics, obs, i, cm);
          FaceRow row;
          row.t = t;
          row.j = j;
          row.i = i;
          row.k = k;
          row.group = static_cast<int>(groups.size());
          row.term = reform::build_soc_term(f.mean, f.covariance, gamma, robust);
          g.rows.push_back(static_cast<int>(rows.size()));
          rows.push_back(row);
          terms.push_back(row.term);
        }
        groups.push_back(std::move(g));
      }
    }
  }
  return terms;
}

}  // namespace detail

/// Certified Big-M: 1.1 times the largest LHS of any face constraint over the
/// state box, by interval arithmetic. Falls back to 1 when no LHS can be
/// positive on the box.
inline double certify_big_m(const PlanProblem& pb, const BuildOptions& opt = {}) {
  detail::require_bounded(pb.dynamics.state_bounds);
  std::vector<FaceRow> rows;
  std::vector<Group> groups;
  reform::RiskConfig risk;
  detail::build_terms(pb, opt, rows, groups, risk);
  double worst = 0.0;
  for (const auto& r : rows) worst = std::max(worst, detail::lhs_range(r.term, pb.dynamics.state_bounds).second);
  return worst > 0.0 ? 1.1 * worst : 1.0;
}

/// Big-M bound of one SocTerm over a box (used by the certification tests).
inline double lhs_upper_bound(const reform::SocTerm& term, const std::vector<Interval>& box) {
  return detail::lhs_range(term, box).second;
}

inline MisocpModel build(const PlanProblem& pb, const BuildOptions& opt = {}) {
  MisocpModel m;
  m.method = opt.method;
  m.horizon = pb.horizon();
  m.nx = pb.dynamics.nx();
  m.nu = pb.dynamics.nu();
  m.dynamics = pb.dynamics;
  m.cost = pb.cost;
  detail::build_terms(pb, opt, m.rows, m.groups, m.risk);
  const std::optional<double> given = opt.big_m ? opt.big_m : pb.big_m;
  if (given) {
    if (!(*given > 0.0)) throw std::invalid_argument("big_m must be positive");
    m.big_m = *given;
  } else {
    detail::require_bounded(pb.dynamics.state_bounds);
    double worst = 0.0;
    for (const auto& r : m.rows) worst = std::max(worst, detail::lhs_range(r.term, pb.dynamics.state_bounds).second);
    m.big_m = worst > 0.0 ? 1.1 * worst : 1.0;
  }
  m.reach = reachable_boxes(pb.dynamics);
  for (auto& r : m.rows) {
    const auto& box = m.reach[r.t - 1];
    bool bounded = true;
    for (const auto& iv : box) bounded = bounded && iv.bounded();
    if (given || !bounded) {
      r.big_m = m.big_m;
      continue;
    }
    const auto [lo, hi] = detail::lhs_range(r.term, box);
    r.big_m = std::min(m.big_m, hi > 0.0 ? 1.1 * hi : 1.0);
    r.always_satisfied = hi <= 0.0;
    r.never_satisfiable = lo > 0.0;
  }
  return m;
}

// --- relaxations ------------------------------------------------------------

/// Face chosen per group; -1 leaves the group free.
using Assignment = std::vector<int>;

struct Relaxation {
  conic::ConicProgram program;
  std::vector<std::pair<int, int>> binaries;  // (program var, group)
  bool trivially_infeasible = false;
};

namespace detail {

inline void add_face_constraint(const MisocpModel& m, const FaceRow& row, int binary_var,
                                conic::ConicProgram& p) {
  const auto& term = row.term;
  const int nx = m.nx;
  const auto state = [&](int r) { return m.state_var(row.t, r); };
  const double big = binary_var >= 0 ? row.big_m : 0.0;
  // Split sqrt(x~^T S x~) into a constant (offset-only S) or a cone.
  bool quad_const = true;
  for (int a = 0; a < nx; ++a)
    for (int b = 0; b <= nx; ++b)
      if (term.cov(a, b) != 0.0 || term.cov(b, a) != 0.0) quad_const = false;
  const double coef = term.cone_coefficient();
  double constant = term.mean(nx);
  int quad_var = -1;
  if (quad_const) {
    constant += coef * std::sqrt(std::max(0.0, term.cov(nx, nx)));
  } else if (coef > 0.0) {
    quad_var = p.add_variable(0.0, conic::kInf, 0.0);
    const Matrix f = psd_factor(term.cov);  // S = f f^T
    conic::SocConstraint c;
    c.offset = Vector::Zero(f.cols());
    for (int col = 0; col < f.cols(); ++col) {
      conic::SparseTerms r;
      for (int a = 0; a < nx; ++a)
        if (f(a, col) != 0.0) r.emplace_back(state(a), coef * f(a, col));
      c.rows.push_back(r);
      c.offset(col) = coef * f(nx, col);
    }
    c.bound_terms = {{quad_var, 1.0}};
    p.cones.push_back(c);
  }
  // mu^T x + constant + quad + norm_offset ||x~|| <= big (1 - w)
  conic::SparseTerms lin;
  for (int a = 0; a < nx; ++a)
    if (term.mean(a) != 0.0) lin.emplace_back(state(a), term.mean(a));
  if (quad_var >= 0) lin.emplace_back(quad_var, 1.0);
  if (binary_var >= 0) lin.emplace_back(binary_var, big);
  if (term.norm_offset > 0.0) {
    conic::SocConstraint c;
    c.offset = Vector::Zero(nx + 1);
    for (int a = 0; a < nx; ++a) c.rows.push_back({{state(a), term.norm_offset}});
    c.rows.push_back({});
    c.offset(nx) = term.norm_offset;
    for (const auto& [v, a] : lin) c.bound_terms.emplace_back(v, -a);
    c.bound_constant = big - constant;
    p.cones.push_back(c);
  } else {
    p.inequalities.push_back({lin, big - constant});
  }
}

}  // namespace detail

/// Continuous part shared by every node: dynamics, bounds and the cost
/// through an epigraph cone.
inline conic::ConicProgram base_program(const MisocpModel& m) {
  const auto& d = m.dynamics;
  const int nv = m.num_continuous();
  conic::ConicProgram p(nv);
  for (int t = 1; t <= m.horizon; ++t)
    for (int r = 0; r < m.nx; ++r) {
      p.lower(m.state_var(t, r)) = d.state_bounds[r].lo;
      p.upper(m.state_var(t, r)) = d.state_bounds[r].hi;
    }
  for (int t = 0; t < m.horizon; ++t)
    for (int r = 0; r < m.nu; ++r) {
      p.lower(m.input_var(t, r)) = d.input_bounds[r].lo;
      p.upper(m.input_var(t, r)) = d.input_bounds[r].hi;
    }
  // x_{t+1} - A_t x_t - B_t u_t = 0, with x_0 given.
  for (int t = 0; t < m.horizon; ++t) {
    for (int r = 0; r < m.nx; ++r) {
      conic::LinearConstraint e;
      double rhs = 0.0;
      e.terms.emplace_back(m.state_var(t + 1, r), 1.0);
      for (int c = 0; c < m.nx; ++c) {
        const double a = d.a[t](r, c);
        if (a == 0.0) continue;
        if (t == 0) {
          rhs += a * d.x0(c);
        } else {
          e.terms.emplace_back(m.state_var(t, c), -a);
        }
      }
      for (int c = 0; c < m.nu; ++c)
        if (d.b[t](r, c) != 0.0) e.terms.emplace_back(m.input_var(t, c), -d.b[t](r, c));
      e.rhs = rhs;
      p.equalities.push_back(e);
    }
  }
  // Cost: -w_prog l^T (p_T - p_0) + sum of weighted squares, the squares as
  // 0.5 ||F y + g||^2 <= tau.
  const auto& c = m.cost;
  const scene::Vec2 l = c.longitudinal_axis, n = c.lateral_axis();
  const int px = d.position_indices[0], py = d.position_indices[1];
  p.cost(m.state_var(m.horizon, px)) -= c.w_prog * l.x();
  p.cost(m.state_var(m.horizon, py)) -= c.w_prog * l.y();
  p.cost_constant = c.w_prog * l.dot(d.position(d.x0));
  std::vector<conic::SparseTerms> rows;
  std::vector<double> offsets;
  auto push = [&](conic::SparseTerms r, double off) {
    rows.push_back(std::move(r));
    offsets.push_back(off);
  };
  const double ref = c.reference(d);
  for (int t = 1; t <= m.horizon; ++t) {
    if (c.w_lat > 0.0) {
      const double s = std::sqrt(2.0 * c.w_lat);
      conic::SparseTerms r;
      if (n.x() != 0.0) r.emplace_back(m.state_var(t, px), s * n.x());
      if (n.y() != 0.0) r.emplace_back(m.state_var(t, py), s * n.y());
      push(r, -s * ref);
    }
    if (c.w_vel > 0.0 && !d.velocity_indices.empty()) {
      const double s = std::sqrt(2.0 * c.w_vel);
      conic::SparseTerms r;
      if (n.x() != 0.0) r.emplace_back(m.state_var(t, d.velocity_indices[0]), s * n.x());
      if (n.y() != 0.0) r.emplace_back(m.state_var(t, d.velocity_indices[1]), s * n.y());
      push(r, 0.0);
    }
  }
  if (c.w_input > 0.0) {
    const double s = std::sqrt(2.0 * c.w_input);
    for (int t = 0; t < m.horizon; ++t)
      for (int q = 0; q < m.nu; ++q) push({{m.input_var(t, q), s}}, 0.0);
  }
  if (!rows.empty()) {
    const int tau = p.add_variable(0.0, conic::kInf, 1.0);
    conic::SocConstraint k;
    k.rows = rows;
    k.rows.push_back({{tau, 1.0}});
    k.offset = Vector::Zero(static_cast<int>(rows.size()) + 1);
    for (std::size_t r = 0; r < offsets.size(); ++r) k.offset(r) = offsets[r];
    k.offset(rows.size()) = -0.5;
    k.bound_terms = {{tau, 1.0}};
    k.bound_constant = 0.5;
    p.cones.push_back(k);
  }
  return p;
}

/// Node relaxation for an assignment. Groups with a face fixed enforce that
/// face only; free groups keep binaries over the faces that can still hold.
inline Relaxation relaxation(const MisocpModel& m, const conic::ConicProgram& base, const Assignment& assign) {
  Relaxation out{base, {}, false};
  auto& p = out.program;
  for (std::size_t g = 0; g < m.groups.size(); ++g) {
    const auto& grp = m.groups[g];
    if (assign[g] >= 0) {
      const auto& row = m.rows[grp.rows[assign[g]]];
      if (row.never_satisfiable) {
        out.trivially_infeasible = true;
        return out;
      }
      detail::add_face_constraint(m, row, -1, p);
      continue;
    }
    std::vector<int> live;
    bool satisfied = false;
    for (std::size_t f = 0; f < grp.rows.size(); ++f) {
      const auto& row = m.rows[grp.rows[f]];
      if (row.always_satisfied) satisfied = true;
      if (!row.never_satisfiable) live.push_back(static_cast<int>(f));
    }
    if (satisfied) continue;
    if (live.empty()) {
      out.trivially_infeasible = true;
      return out;
    }
    if (live.size() == 1) {
      detail::add_face_constraint(m, m.rows[grp.rows[live[0]]], -1, p);
      continue;
    }
    conic::LinearConstraint sos;
    sos.rhs = 1.0;
    for (int f : live) {
      const int w = p.add_variable(0.0, 1.0, 0.0);
      out.binaries.emplace_back(w, static_cast<int>(g));
      sos.terms.emplace_back(w, 1.0);
      detail::add_face_constraint(m, m.rows[grp.rows[f]], w, p);
    }
    p.equalities.push_back(sos);
  }
  return out;
}

inline scene::Trajectory extract_trajectory(const MisocpModel& m, const Vector& y) {
  scene::Trajectory tr;
  tr.states.push_back(m.dynamics.x0);
  for (int t = 1; t <= m.horizon; ++t) {
    Vector x(m.nx);
    for (int r = 0; r < m.nx; ++r) x(r) = y(m.state_var(t, r));
    tr.states.push_back(x);
  }
  for (int t = 0; t < m.horizon; ++t) {
    Vector u(m.nu);
    for (int r = 0; r < m.nu; ++r) u(r) = y(m.input_var(t, r));
    tr.inputs.push_back(u);
  }
  return tr;
}

inline Vector augmented_state(const Vector& x) {
  Vector xt(x.size() + 1);
  xt << x, 1.0;
  return xt;
}

/// LHS of face f of group g at a trajectory.
inline double face_lhs(const MisocpModel& m, const scene::Trajectory& tr, int g, int f) {
  const auto& row = m.rows[m.groups[g].rows[f]];
  return row.term.lhs(augmented_state(tr.states[row.t]));
}

/// Largest violation of the full model by (trajectory, faces): enforced face
/// constraints, dynamics and bounds.
inline double model_violation(const MisocpModel& m, const scene::Trajectory& tr, const Assignment& faces) {
  double v = 0.0;
  const auto& d = m.dynamics;
  for (int t = 0; t < m.horizon; ++t) {
    v = std::max(v, (d.step(t, tr.states[t], tr.inputs[t]) - tr.states[t + 1]).cwiseAbs().maxCoeff());
    for (int r = 0; r < m.nu; ++r) {
      v = std::max({v, d.input_bounds[r].lo - tr.inputs[t](r), tr.inputs[t](r) - d.input_bounds[r].hi});
    }
    for (int r = 0; r < m.nx; ++r) {
      v = std::max({v, d.state_bounds[r].lo - tr.states[t + 1](r), tr.states[t + 1](r) - d.state_bounds[r].hi});
    }
  }
  for (std::size_t g = 0; g < m.groups.size(); ++g) {
    if (faces[g] < 0) return conic::kInf;
    v = std::max(v, face_lhs(m, tr, static_cast<int>(g), faces[g]));
  }
  return v;
}

// --- branch and bound -----------------------------------------------------------

enum class BnbStatus { kOptimal, kInfeasible, kNodeLimit, kNumericalFailure };

inline const char* to_string(BnbStatus s) {
  switch (s) {
    case BnbStatus::kOptimal: return "optimal";
    case BnbStatus::kInfeasible: return "infeasible";
    case BnbStatus::kNodeLimit: return "node_limit";
    case BnbStatus::kNumericalFailure: return "numerical_failure";
  }
  return "?";
}

struct ActiveFace {
  int t = 0, j = 0, k = 0, face = 0;
};

struct BnbOptions {
  double gap = 1e-6;  // absolute, on the cost
  long node_limit = 50000;
  /// Face constraint slack accepted when reading a relaxation as integral.
  double feasibility_tol = 1e-6;
  conic::Settings conic;
};

struct BnbReport {
  BnbStatus status = BnbStatus::kNumericalFailure;
  bool has_incumbent = false;
  bool gap_proven = false;
  double cost = conic::kInf;
  double bound = -conic::kInf;
  double gap = conic::kInf;
  long nodes = 0;
  long relaxations = 0;
  long numerical_failures = 0;
  double wall_ms = 0.0;
  scene::Trajectory trajectory;
  Assignment faces;  // per group
  std::vector<ActiveFace> active_faces;
  std::vector<double> bound_history;  // global lower bound after each node
  double max_violation = 0.0;         // of the incumbent, re-evaluated
};

namespace detail {

struct Node {
  double bound;
  int depth;
  long id;
  Assignment assign;
};

struct NodeOrder {
  bool operator()(const Node& a, const Node& b) const {
    if (a.bound != b.bound) return a.bound > b.bound;
    if (a.depth != b.depth) return a.depth < b.depth;
    return a.id > b.id;
  }
};

}  // namespace detail

/// Solves the model with every group fixed. Returns the conic solution.
inline conic::Solution solve_fixed(const MisocpModel& m, const Assignment& faces, const conic::Settings& st = {}) {
  const auto base = base_program(m);
  const auto rel = relaxation(m, base, faces);
  if (rel.trivially_infeasible) {
    conic::Solution s;
    s.status = conic::Status::kInfeasible;
    return s;
  }
  return conic::solve(rel.program, st);
}

inline BnbReport solve_bnb(const MisocpModel& m, const BnbOptions& opt = {}) {
  const auto start = std::chrono::steady_clock::now();
  BnbReport rep;
  const auto base = base_program(m);
  const int ngroups = static_cast<int>(m.groups.size());

  std::priority_queue<detail::Node, std::vector<detail::Node>, detail::NodeOrder> open;
  long next_id = 0;
  open.push({-conic::kInf, 0, next_id++, Assignment(ngroups, -1)});
  std::map<Assignment, double> tried;  // heuristic cache
  bool unresolved = false;

  auto offer = [&](const scene::Trajectory& tr, const Assignment& faces, double cost) {
    if (cost < rep.cost) {
      rep.cost = cost;
      rep.trajectory = tr;
      rep.faces = faces;
      rep.has_incumbent = true;
    }
  };

  // Reads a relaxation point as integral when every free group has a face
  // that holds without Big-M relief.
  auto integral_faces = [&](const scene::Trajectory& tr, const Assignment& assign, bool& all) {
    Assignment faces = assign;
    all = true;
    for (int g = 0; g < ngroups; ++g) {
      if (faces[g] >= 0) continue;
      int best = -1;
      double best_v = conic::kInf;
      for (std::size_t f = 0; f < m.groups[g].rows.size(); ++f) {
        if (m.rows[m.groups[g].rows[f]].never_satisfiable) continue;
        const double v = face_lhs(m, tr, g, static_cast<int>(f));
        if (v < best_v) {
          best_v = v;
          best = static_cast<int>(f);
        }
      }
      faces[g] = best;
      if (best < 0 || best_v > opt.feasibility_tol) all = false;
    }
    return faces;
  };

  while (!open.empty()) {
    if (rep.nodes >= opt.node_limit) break;
    detail::Node node = open.top();
    open.pop();
    if (rep.has_incumbent && node.bound >= rep.cost - opt.gap) continue;
    ++rep.nodes;

    const auto rel = relaxation(m, base, node.assign);
    conic::Solution sol;
    if (rel.trivially_infeasible) {
      sol.status = conic::Status::kInfeasible;
    } else {
      sol = conic::solve(rel.program, opt.conic);
      ++rep.relaxations;
    }

    auto record_bound = [&]() {
      double lb = open.empty() ? (rep.has_incumbent ? rep.cost : conic::kInf) : open.top().bound;
      if (rep.has_incumbent) lb = std::min(lb, rep.cost);
      if (!rep.bound_history.empty()) lb = std::max(lb, rep.bound_history.back());
      rep.bound_history.push_back(lb);
    };

    if (sol.status == conic::Status::kInfeasible) {
      record_bound();
      continue;
    }
    const bool failed = sol.status != conic::Status::kOptimal;
    if (failed) ++rep.numerical_failures;
    const double node_bound = failed ? node.bound : std::max(node.bound, sol.objective);

    int branch_group = -1;
    if (!failed) {
      const auto tr = extract_trajectory(m, sol.y);
      bool all = false;
      const Assignment faces = integral_faces(tr, node.assign, all);
      if (all) {
        offer(tr, faces, sol.objective);
        record_bound();
        continue;
      }
      // Rounding heuristic: fix every free group to its best face.
      bool complete = std::all_of(faces.begin(), faces.end(), [](int f) { return f >= 0; });
      if (complete && !tried.count(faces)) {
        const auto fixed = relaxation(m, base, faces);
        double val = conic::kInf;
        if (!fixed.trivially_infeasible) {
          const auto hs = conic::solve(fixed.program, opt.conic);
          ++rep.relaxations;
          if (hs.status == conic::Status::kOptimal) {
            const auto htr = extract_trajectory(m, hs.y);
            if (model_violation(m, htr, faces) <= opt.feasibility_tol) {
              val = hs.objective;
              offer(htr, faces, val);
            }
          }
        }
        tried.emplace(faces, val);
      }
      if (rep.has_incumbent && node_bound >= rep.cost - opt.gap) {
        record_bound();
        continue;
      }
      // Most fractional group: the smallest largest binary among groups whose
      // point violates every face.
      std::vector<double> maxw(ngroups, -1.0);
      for (const auto& [var, g] : rel.binaries) {
        maxw[g] = std::max(maxw[g], sol.y(var));
      }
      double best = conic::kInf;
      for (int g = 0; g < ngroups; ++g) {
        if (node.assign[g] >= 0 || maxw[g] < 0.0) continue;
        bool violated = true;
        for (std::size_t f = 0; f < m.groups[g].rows.size(); ++f) {
          if (face_lhs(m, tr, g, static_cast<int>(f)) <= opt.feasibility_tol) violated = false;
        }
        if (violated && maxw[g] < best) {
          best = maxw[g];
          branch_group = g;
        }
      }
    }
    if (branch_group < 0) {
      // Solver trouble: branch on the first free group, or give up on a leaf.
      for (int g = 0; g < ngroups && branch_group < 0; ++g) {
        if (node.assign[g] < 0) branch_group = g;
      }
      if (branch_group < 0) {
        unresolved = true;
        record_bound();
        continue;
      }
    }
    for (std::size_t f = 0; f < m.groups[branch_group].rows.size(); ++f) {
      if (m.rows[m.groups[branch_group].rows[f]].never_satisfiable) continue;
      Assignment child = node.assign;
      child[branch_group] = static_cast<int>(f);
      open.push({node_bound, node.depth + 1, next_id++, child});
    }
    record_bound();
  }

  const bool exhausted = open.empty();
  double lb = rep.has_incumbent ? rep.cost : conic::kInf;
  while (!open.empty()) {
    lb = std::min(lb, open.top().bound);
    open.pop();
  }
  if (!rep.bound_history.empty() && std::isfinite(lb)) lb = std::max(lb, rep.bound_history.back());
  rep.bound = lb;
  if (rep.has_incumbent) {
    rep.gap = std::max(0.0, rep.cost - std::min(rep.bound, rep.cost));
    rep.gap_proven = exhausted ? !unresolved : rep.gap <= opt.gap;
    rep.status = exhausted || rep.gap <= opt.gap ? BnbStatus::kOptimal : BnbStatus::kNodeLimit;
    if (rep.status == BnbStatus::kOptimal && !rep.gap_proven) rep.status = BnbStatus::kNodeLimit;
    rep.max_violation = model_violation(m, rep.trajectory, rep.faces);
    for (int g = 0; g < ngroups; ++g) {
      const auto& grp = m.groups[g];
      rep.active_faces.push_back({grp.t, grp.j, grp.k, rep.faces[g]});
    }
  } else if (exhausted && !unresolved && rep.numerical_failures == 0) {
    rep.status = BnbStatus::kInfeasible;
  } else if (exhausted) {
    rep.status = BnbStatus::kNumericalFailure;
  } else {
    rep.status = BnbStatus::kNodeLimit;
  }
  rep.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

/// Best objective over every complete SOS1 assignment (testing oracle for
/// small models). Returns +inf when no assignment is feasible.
inline double enumerate_assignments(const MisocpModel& m, const conic::Settings& st = {}) {
  const int ngroups = static_cast<int>(m.groups.size());
  Assignment a(ngroups, 0);
  double best = conic::kInf;
  while (true) {
    const auto s = solve_fixed(m, a, st);
    if (s.status == conic::Status::kOptimal) best = std::min(best, s.objective);
    int g = 0;
    while (g < ngroups && ++a[g] == static_cast<int>(m.groups[g].rows.size())) a[g++] = 0;
    if (g == ngroups) break;
  }
  return best;
}

/// Report as JSON: {status, cost, gap, nodes, active_faces, trajectory, ...}.
/// Wall time is included only on request so that reports stay reproducible.
inline nlohmann::json report_json(const MisocpModel& m, const BnbReport& r, bool include_timing = false) {
  using nlohmann::json;
  json j;
  j["status"] = to_string(r.status);
  j["method"] = to_string(m.method);
  j["gap_proven"] = r.gap_proven;
  j["cost"] = r.has_incumbent ? json(r.cost) : json(nullptr);
  j["bound"] = std::isfinite(r.bound) ? json(r.bound) : json(nullptr);
  j["gap"] = r.has_incumbent && std::isfinite(r.gap) ? json(r.gap) : json(nullptr);
  j["nodes"] = r.nodes;
  j["relaxations"] = r.relaxations;
  j["numerical_failures"] = r.numerical_failures;
  j["big_m"] = m.big_m;
  j["binaries"] = m.num_binaries();
  j["sos1_groups"] = static_cast<int>(m.groups.size());
  if (include_timing) j["wall_ms"] = r.wall_ms;
  json faces = json::array();
  for (const auto& f : r.active_faces) faces.push_back({{"t", f.t}, {"obstacle", f.j}, {"mode", f.k}, {"face", f.face}});
  j["active_faces"] = faces;
  json traj = json::array();
  for (std::size_t t = 0; t < r.trajectory.states.size(); ++t) {
    json row;
    row["t"] = t;
    row["x"] = scene::detail::vector_json(r.trajectory.states[t]);
    if (t < r.trajectory.inputs.size()) row["u"] = scene::detail::vector_json(r.trajectory.inputs[t]);
    traj.push_back(row);
  }
  j["trajectory"] = traj;
  if (r.has_incumbent) j["max_violation"] = r.max_violation;
  return j;
}

}  // namespace gmmplan::mip
