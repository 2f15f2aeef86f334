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

// Dense primal-dual interior point solver for small second-order cone
// programs. The user-facing ConicProgram is canonicalized into
//
//     minimize    c^T x
//     subject to  A x = b,  G x + s = h,  s in R_+^l x Q^{q_1} x ... x Q^{q_k}
//
// and solved through the homogeneous self-dual embedding with
// Nesterov-Todd scaling and Mehrotra predictor-corrector steps, so that
// infeasible and unbounded programs terminate with certificates. A convex
// quadratic cost is moved into an epigraph cone during canonicalization.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gmmplan::conic {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using SparseTerms = std::vector<std::pair<int, double>>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// sum(terms) <= rhs, or == rhs when used as an equality.
struct LinearConstraint {
  SparseTerms terms;
  double rhs = 0.0;
};

/// ||F y + g||_2 <= d^T y + e, with F given row by row.
struct SocConstraint {
  std::vector<SparseTerms> rows;
  Vector offset;  // g
  SparseTerms bound_terms;  // d
  double bound_constant = 0.0;  // e
};

/// minimize 0.5 y^T Q y + c^T y + c0 over linear, cone and bound constraints.
struct ConicProgram {
  int num_vars = 0;
  Vector cost;
  double cost_constant = 0.0;
  Matrix quadratic;  // empty when the cost is linear
  std::vector<LinearConstraint> equalities;
  std::vector<LinearConstraint> inequalities;
  std::vector<SocConstraint> cones;
  Vector lower;  // empty means unbounded below
  Vector upper;

  explicit ConicProgram(int n = 0)
      : num_vars(n),
        cost(Vector::Zero(n)),
        lower(Vector::Constant(n, -kInf)),
        upper(Vector::Constant(n, kInf)) {}

  int add_variable(double lo = -kInf, double hi = kInf, double c = 0.0) {
    const int idx = num_vars++;
    cost.conservativeResize(num_vars);
    cost(idx) = c;
    lower.conservativeResize(num_vars);
    upper.conservativeResize(num_vars);
    lower(idx) = lo;
    upper(idx) = hi;
    if (quadratic.size() > 0) {
      quadratic.conservativeResize(num_vars, num_vars);
      quadratic.row(idx).setZero();
      quadratic.col(idx).setZero();
    }
    return idx;
  }

  double objective(const Vector& y) const {
    double v = cost.dot(y) + cost_constant;
    if (quadratic.size() > 0) v += 0.5 * y.dot(quadratic * y);
    return v;
  }
};

enum class Status { kOptimal, kInfeasible, kUnbounded, kNumericalFailure };

inline const char* to_string(Status s) {
  switch (s) {
    case Status::kOptimal: return "optimal";
    case Status::kInfeasible: return "infeasible";
    case Status::kUnbounded: return "unbounded";
    case Status::kNumericalFailure: return "numerical_failure";
  }
  return "unknown";
}

struct Settings {
  double feasibility_tol = 1e-8;
  double gap_abs_tol = 1e-8;
  double gap_rel_tol = 1e-8;
  /// Looser tolerances accepted (and flagged) if progress stalls.
  double inaccurate_tol = 1e-6;
  int max_iterations = 100;
  int refinement_steps = 3;
  double step_fraction = 0.99;
};

/// The canonical form the kernel solves. The first `user_vars` entries of x
/// are the ConicProgram variables; an epigraph variable may follow.
struct StandardForm {
  int n = 0;
  int user_vars = 0;
  int lp_rows = 0;
  std::vector<int> soc_dims;
  SparseMatrix A;
  SparseMatrix G;
  Vector b, h, c;
  double c0 = 0.0;
  // Row bookkeeping inside G's linear part.
  int num_inequalities = 0;
  std::vector<int> lower_bound_vars;
  std::vector<int> upper_bound_vars;

  int rows() const { return static_cast<int>(G.rows()); }
  int degree() const { return lp_rows + static_cast<int>(soc_dims.size()); }
};

struct Solution {
  Status status = Status::kNumericalFailure;
  bool inaccurate = false;
  Vector y;  // user variables
  double objective = std::numeric_limits<double>::quiet_NaN();
  // Standard-form iterate, already divided by tau when optimal. For
  // infeasibility the (eq_dual, cone_dual) pair is the Farkas certificate
  // normalized to b^T y + h^T z = -1; for unboundedness x_std is a ray with
  // c^T x = -1.
  Vector x_std, eq_dual, cone_dual, slack;
  int iterations = 0;
  double primal_residual = kInf;
  double dual_residual = kInf;
  double gap = kInf;
  double certificate_residual = kInf;
};

namespace detail {

inline void check_index(int idx, int n, const char* what) {
  if (idx < 0 || idx >= n) throw std::invalid_argument(std::string(what) + ": variable index out of range");
}

inline void validate(const ConicProgram& p) {
  const int n = p.num_vars;
  if (p.cost.size() != n || p.lower.size() != n || p.upper.size() != n) {
    throw std::invalid_argument("ConicProgram: cost/bound vectors must have num_vars entries");
  }
  if (p.quadratic.size() > 0) {
    if (p.quadratic.rows() != n || p.quadratic.cols() != n) {
      throw std::invalid_argument("ConicProgram: quadratic cost must be num_vars x num_vars");
    }
    const Matrix sym = 0.5 * (p.quadratic + p.quadratic.transpose());
    if ((sym - p.quadratic).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + sym.cwiseAbs().maxCoeff())) {
      throw std::invalid_argument("ConicProgram: quadratic cost must be symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sym, Eigen::EigenvaluesOnly);
    if (n > 0 && eig.eigenvalues()(0) < -1e-9 * (1.0 + eig.eigenvalues().cwiseAbs().maxCoeff())) {
      throw std::invalid_argument("ConicProgram: quadratic cost must be positive semidefinite");
    }
  }
  for (int i = 0; i < n; ++i) {
    if (p.lower(i) > p.upper(i)) throw std::invalid_argument("ConicProgram: lower bound above upper bound");
  }
  for (const auto& c : p.equalities) for (const auto& [j, v] : c.terms) check_index(j, n, "equality");
  for (const auto& c : p.inequalities) for (const auto& [j, v] : c.terms) check_index(j, n, "inequality");
  for (const auto& k : p.cones) {
    if (static_cast<Eigen::Index>(k.rows.size()) != k.offset.size()) {
      throw std::invalid_argument("SocConstraint: offset length must match row count");
    }
    for (const auto& r : k.rows) for (const auto& [j, v] : r) check_index(j, n, "cone row");
    for (const auto& [j, v] : k.bound_terms) check_index(j, n, "cone bound");
  }
}

// Factor the PSD quadratic cost as Q = F^T F on its support.
inline std::vector<SparseTerms> quadratic_factor(const Matrix& q) {
  const int n = static_cast<int>(q.rows());
  std::vector<int> support;
  for (int i = 0; i < n; ++i) {
    if (q.row(i).cwiseAbs().maxCoeff() > 0.0) support.push_back(i);
  }
  std::vector<SparseTerms> rows;
  if (support.empty()) return rows;
  const int s = static_cast<int>(support.size());
  Matrix sub(s, s);
  for (int a = 0; a < s; ++a)
    for (int b = 0; b < s; ++b) sub(a, b) = 0.5 * (q(support[a], support[b]) + q(support[b], support[a]));
  const bool diagonal = (sub - Matrix(sub.diagonal().asDiagonal())).cwiseAbs().maxCoeff() == 0.0;
  if (diagonal) {
    for (int a = 0; a < s; ++a) {
      if (sub(a, a) > 0.0) rows.push_back({{support[a], std::sqrt(sub(a, a))}});
    }
    return rows;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sub);
  const double top = eig.eigenvalues().cwiseAbs().maxCoeff();
  for (int k = 0; k < s; ++k) {
    const double lam = eig.eigenvalues()(k);
    if (lam <= 1e-14 * top) continue;
    SparseTerms row;
    for (int a = 0; a < s; ++a) {
      const double v = std::sqrt(lam) * eig.eigenvectors()(a, k);
      if (v != 0.0) row.emplace_back(support[a], v);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace detail

/// Canonicalizes a ConicProgram. Bounds with lower == upper become equalities.
inline StandardForm canonicalize(const ConicProgram& p) {
  detail::validate(p);
  StandardForm sf;
  sf.user_vars = p.num_vars;
  const auto qrows = p.quadratic.size() > 0 ? detail::quadratic_factor(p.quadratic)
                                            : std::vector<SparseTerms>{};
  const bool epigraph = !qrows.empty();
  sf.n = p.num_vars + (epigraph ? 1 : 0);
  const int t_var = p.num_vars;

  sf.c = Vector::Zero(sf.n);
  sf.c.head(p.num_vars) = p.cost;
  if (epigraph) sf.c(t_var) = 1.0;
  sf.c0 = p.cost_constant;

  // Equalities.
  std::vector<Eigen::Triplet<double>> a_trip;
  std::vector<double> b_vals;
  for (const auto& e : p.equalities) {
    const int r = static_cast<int>(b_vals.size());
    for (const auto& [j, v] : e.terms) a_trip.emplace_back(r, j, v);
    b_vals.push_back(e.rhs);
  }
  for (int i = 0; i < p.num_vars; ++i) {
    if (std::isfinite(p.lower(i)) && p.lower(i) == p.upper(i)) {
      a_trip.emplace_back(static_cast<int>(b_vals.size()), i, 1.0);
      b_vals.push_back(p.lower(i));
    }
  }
  sf.A.resize(static_cast<Eigen::Index>(b_vals.size()), sf.n);
  sf.A.setFromTriplets(a_trip.begin(), a_trip.end());
  sf.b = Eigen::Map<Vector>(b_vals.data(), static_cast<Eigen::Index>(b_vals.size()));

  // Linear cone rows: inequalities, then lower and upper bounds.
  std::vector<Eigen::Triplet<double>> g_trip;
  std::vector<double> h_vals;
  auto add_row = [&](const SparseTerms& terms, double sign, double rhs) {
    const int r = static_cast<int>(h_vals.size());
    for (const auto& [j, v] : terms) g_trip.emplace_back(r, j, sign * v);
    h_vals.push_back(rhs);
  };
  for (const auto& in : p.inequalities) add_row(in.terms, 1.0, in.rhs);
  sf.num_inequalities = static_cast<int>(p.inequalities.size());
  for (int i = 0; i < p.num_vars; ++i) {
    if (std::isfinite(p.lower(i)) && p.lower(i) != p.upper(i)) {
      add_row({{i, 1.0}}, -1.0, -p.lower(i));
      sf.lower_bound_vars.push_back(i);
    }
  }
  for (int i = 0; i < p.num_vars; ++i) {
    if (std::isfinite(p.upper(i)) && p.lower(i) != p.upper(i)) {
      add_row({{i, 1.0}}, 1.0, p.upper(i));
      sf.upper_bound_vars.push_back(i);
    }
  }
  sf.lp_rows = static_cast<int>(h_vals.size());

  // Cones: s = (d^T y + e, F y + g) = h - G y.
  for (const auto& k : p.cones) {
    add_row(k.bound_terms, -1.0, k.bound_constant);
    for (std::size_t r = 0; r < k.rows.size(); ++r) add_row(k.rows[r], -1.0, k.offset(r));
    sf.soc_dims.push_back(static_cast<int>(k.rows.size()) + 1);
  }
  if (epigraph) {
    // 0.5 ||F y||^2 <= t  <=>  (t + 1/2, F y, t - 1/2) in Q.
    add_row({{t_var, 1.0}}, -1.0, 0.5);
    for (const auto& r : qrows) add_row(r, -1.0, 0.0);
    add_row({{t_var, 1.0}}, -1.0, -0.5);
    sf.soc_dims.push_back(static_cast<int>(qrows.size()) + 2);
  }
  sf.G.resize(static_cast<Eigen::Index>(h_vals.size()), sf.n);
  sf.G.setFromTriplets(g_trip.begin(), g_trip.end());
  sf.h = Eigen::Map<Vector>(h_vals.data(), static_cast<Eigen::Index>(h_vals.size()));
  return sf;
}

namespace detail {

// Cone arithmetic over the product R_+^l x Q^{q_1} x ...
class ConeLayout {
 public:
  explicit ConeLayout(const StandardForm& sf) : l_(sf.lp_rows), dims_(sf.soc_dims) {
    int off = l_;
    for (int d : dims_) {
      offsets_.push_back(off);
      off += d;
    }
    m_ = off;
  }

  int rows() const { return m_; }
  int lp() const { return l_; }
  int num_soc() const { return static_cast<int>(dims_.size()); }
  int offset(int k) const { return offsets_[k]; }
  int dim(int k) const { return dims_[k]; }

  Vector identity() const {
    Vector e = Vector::Zero(m_);
    e.head(l_).setOnes();
    for (int k = 0; k < num_soc(); ++k) e(offsets_[k]) = 1.0;
    return e;
  }

  double min_eigenvalue(const Vector& v) const {
    double mn = kInf;
    if (l_ > 0) mn = v.head(l_).minCoeff();
    for (int k = 0; k < num_soc(); ++k) {
      const auto blk = v.segment(offsets_[k], dims_[k]);
      mn = std::min(mn, blk(0) - blk.tail(dims_[k] - 1).norm());
    }
    return mn;
  }

  void shift_interior(Vector& v) const {
    if (m_ == 0) return;
    const double mn = min_eigenvalue(v);
    if (mn < 1e-8) v += (1.0 - mn) * identity();
  }

  /// Jordan product u o v.
  Vector product(const Vector& u, const Vector& v) const {
    Vector out(m_);
    out.head(l_) = u.head(l_).cwiseProduct(v.head(l_));
    for (int k = 0; k < num_soc(); ++k) {
      const int o = offsets_[k], d = dims_[k];
      out(o) = u.segment(o, d).dot(v.segment(o, d));
      out.segment(o + 1, d - 1) = u(o) * v.segment(o + 1, d - 1) + v(o) * u.segment(o + 1, d - 1);
    }
    return out;
  }

  /// w with lambda o w = v.
  Vector divide(const Vector& lambda, const Vector& v) const {
    Vector out(m_);
    out.head(l_) = v.head(l_).cwiseQuotient(lambda.head(l_));
    for (int k = 0; k < num_soc(); ++k) {
      const int o = offsets_[k], d = dims_[k];
      const double l0 = lambda(o);
      const auto l1 = lambda.segment(o + 1, d - 1);
      const auto v1 = v.segment(o + 1, d - 1);
      const double det = (l0 - l1.norm()) * (l0 + l1.norm());
      const double w0 = (l0 * v(o) - l1.dot(v1)) / det;
      out(o) = w0;
      out.segment(o + 1, d - 1) = (v1 - w0 * l1) / l0;
    }
    return out;
  }

  /// Largest alpha in [0, cap] keeping v + alpha * dv in the cone.
  double max_step(const Vector& v, const Vector& dv, double cap) const {
    double alpha = cap;
    for (int i = 0; i < l_; ++i) {
      if (dv(i) < 0.0) alpha = std::min(alpha, -v(i) / dv(i));
    }
    for (int k = 0; k < num_soc(); ++k) {
      const int o = offsets_[k], d = dims_[k];
      const double v0 = v(o), d0 = dv(o);
      const auto v1 = v.segment(o + 1, d - 1);
      const auto d1 = dv.segment(o + 1, d - 1);
      const double qa = d0 * d0 - d1.squaredNorm();
      const double qb = 2.0 * (v0 * d0 - v1.dot(d1));
      const double qc = std::max((v0 - v1.norm()) * (v0 + v1.norm()), 0.0);
      // f(a) = qa a^2 + qb a + qc with f(0) = qc >= 0; find the first root.
      double root = kInf;
      if (qa == 0.0) {
        if (qb < 0.0) root = -qc / qb;
      } else {
        const double disc = qb * qb - 4.0 * qa * qc;
        if (disc >= 0.0) {
          const double sq = std::sqrt(disc);
          const double q = -0.5 * (qb + (qb >= 0.0 ? sq : -sq));
          double r1 = q / qa;
          double r2 = q != 0.0 ? qc / q : kInf;
          if (!(r1 > 0.0)) r1 = kInf;
          if (!(r2 > 0.0)) r2 = kInf;
          root = std::min(r1, r2);
        }
      }
      // The scalar part must also stay non-negative.
      if (d0 < 0.0) root = std::min(root, -v0 / d0);
      alpha = std::min(alpha, root);
    }
    return std::max(alpha, 0.0);
  }

 private:
  int l_;
  std::vector<int> dims_;
  std::vector<int> offsets_;
  int m_ = 0;
};

// Nesterov-Todd scaling W (symmetric) with W z = W^{-1} s = lambda.
struct Scaling {
  Vector lp_w;  // sqrt(s / z)
  std::vector<Matrix> soc_w;
  std::vector<Matrix> soc_winv;
  Vector lambda;

  bool update(const ConeLayout& cones, const Vector& s, const Vector& z) {
    const int l = cones.lp();
    lp_w = (s.head(l).cwiseQuotient(z.head(l))).cwiseSqrt();
    soc_w.resize(cones.num_soc());
    soc_winv.resize(cones.num_soc());
    for (int k = 0; k < cones.num_soc(); ++k) {
      const int o = cones.offset(k), d = cones.dim(k);
      const Vector sk = s.segment(o, d), zk = z.segment(o, d);
      const double s1n = sk.tail(d - 1).norm(), z1n = zk.tail(d - 1).norm();
      const double sres = (sk(0) - s1n) * (sk(0) + s1n);
      const double zres = (zk(0) - z1n) * (zk(0) + z1n);
      if (!(sres > 0.0 && zres > 0.0)) return false;
      const Vector sb = sk / std::sqrt(sres);
      const Vector zb = zk / std::sqrt(zres);
      const double gamma = std::sqrt(0.5 * (1.0 + sb.dot(zb)));
      Vector wb(d);
      wb(0) = (sb(0) + zb(0)) / (2.0 * gamma);
      wb.tail(d - 1) = (sb.tail(d - 1) - zb.tail(d - 1)) / (2.0 * gamma);
      const double eta = std::pow(sres / zres, 0.25);
      Matrix w(d, d);
      w(0, 0) = wb(0);
      w.block(0, 1, 1, d - 1) = wb.tail(d - 1).transpose();
      w.block(1, 0, d - 1, 1) = wb.tail(d - 1);
      w.block(1, 1, d - 1, d - 1) = Matrix::Identity(d - 1, d - 1) +
                                    wb.tail(d - 1) * wb.tail(d - 1).transpose() / (1.0 + wb(0));
      Matrix winv = w;
      winv.block(0, 1, 1, d - 1) *= -1.0;
      winv.block(1, 0, d - 1, 1) *= -1.0;
      soc_w[k] = eta * w;
      soc_winv[k] = winv / eta;
    }
    lambda = apply(cones, z);
    return lambda.allFinite();
  }

  Vector apply(const ConeLayout& cones, const Vector& v) const {
    Vector out(v.size());
    const int l = cones.lp();
    out.head(l) = lp_w.cwiseProduct(v.head(l));
    for (int k = 0; k < cones.num_soc(); ++k) {
      out.segment(cones.offset(k), cones.dim(k)) = soc_w[k] * v.segment(cones.offset(k), cones.dim(k));
    }
    return out;
  }

  Vector apply_inverse(const ConeLayout& cones, const Vector& v) const {
    Vector out(v.size());
    const int l = cones.lp();
    out.head(l) = v.head(l).cwiseQuotient(lp_w);
    for (int k = 0; k < cones.num_soc(); ++k) {
      out.segment(cones.offset(k), cones.dim(k)) =
          soc_winv[k] * v.segment(cones.offset(k), cones.dim(k));
    }
    return out;
  }
};

// Solves  [0 A^T G^T; A 0 0; G 0 -W^2] (dx, dy, dz) = (r1, r2, r3)
// by eliminating dz and using the Schur complement on the equalities.
class KktSolver {
 public:
  KktSolver(const StandardForm& sf, const ConeLayout& cones)
      : sf_(sf), cones_(cones), at_(sf.A.transpose()), gt_(sf.G.transpose()) {
    const int n = sf.n;
    ata_ = Matrix(at_ * sf.A);
    // Column supports of each cone block for the dense update.
    for (int k = 0; k < cones.num_soc(); ++k) {
      std::vector<int> cols;
      for (int r = cones.offset(k); r < cones.offset(k) + cones.dim(k); ++r) {
        for (SparseMatrix::InnerIterator it(sf.G, r); it; ++it) cols.push_back(static_cast<int>(it.col()));
      }
      std::sort(cols.begin(), cols.end());
      cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
      Matrix blk = Matrix::Zero(cones.dim(k), static_cast<Eigen::Index>(cols.size()));
      for (int r = 0; r < cones.dim(k); ++r) {
        for (SparseMatrix::InnerIterator it(sf.G, cones.offset(k) + r); it; ++it) {
          const auto pos = std::lower_bound(cols.begin(), cols.end(), static_cast<int>(it.col())) - cols.begin();
          blk(r, pos) = it.value();
        }
      }
      block_cols_.push_back(std::move(cols));
      block_g_.push_back(std::move(blk));
    }
    h_.resize(n, n);
  }

  bool factor(const Scaling& w) {
    w_ = &w;
    const int n = sf_.n;
    h_.setZero();
    const int l = cones_.lp();
    for (int r = 0; r < l; ++r) {
      const double d = 1.0 / (w.lp_w(r) * w.lp_w(r));
      for (SparseMatrix::InnerIterator a(sf_.G, r); a; ++a) {
        for (SparseMatrix::InnerIterator b(sf_.G, r); b; ++b) {
          h_(a.col(), b.col()) += d * a.value() * b.value();
        }
      }
    }
    for (int k = 0; k < cones_.num_soc(); ++k) {
      const Matrix m = w.soc_winv[k] * block_g_[k];
      const Matrix contrib = m.transpose() * m;
      const auto& cols = block_cols_[k];
      for (std::size_t a = 0; a < cols.size(); ++a)
        for (std::size_t b = 0; b < cols.size(); ++b) h_(cols[a], cols[b]) += contrib(a, b);
    }
    if (sf_.A.rows() > 0) h_ += ata_;
    const double scale = std::max(1.0, h_.diagonal().cwiseAbs().maxCoeff());
    double reg = 1e-13 * scale;
    for (int attempt = 0; attempt < 6; ++attempt) {
      Matrix hr = h_;
      hr.diagonal().array() += reg;
      llt_.compute(hr);
      if (llt_.info() == Eigen::Success) break;
      reg *= 100.0;
      if (attempt == 5) return false;
    }
    if (sf_.A.rows() > 0) {
      y_ = llt_.solve(Matrix(at_));
      Matrix s = sf_.A * y_;
      s.diagonal().array() += 1e-14 * std::max(1.0, s.diagonal().cwiseAbs().maxCoeff());
      schur_.compute(s);
      if (schur_.info() != Eigen::Success) return false;
    }
    (void)n;
    return true;
  }

  void solve(const Vector& r1, const Vector& r2, const Vector& r3, Vector& dx, Vector& dy,
             Vector& dz, int refinement_steps) const {
    solve_once(r1, r2, r3, dx, dy, dz);
    for (int it = 0; it < refinement_steps; ++it) {
      const Vector e1 = r1 - (at_ * dy + gt_ * dz);
      const Vector e2 = r2 - sf_.A * dx;
      const Vector e3 = r3 - (sf_.G * dx - apply_w2(dz));
      const double err = std::max({e1.lpNorm<Eigen::Infinity>(), e2.size() ? e2.lpNorm<Eigen::Infinity>() : 0.0,
                                   e3.size() ? e3.lpNorm<Eigen::Infinity>() : 0.0});
      const double ref = 1.0 + std::max({r1.lpNorm<Eigen::Infinity>(),
                                         r2.size() ? r2.lpNorm<Eigen::Infinity>() : 0.0,
                                         r3.size() ? r3.lpNorm<Eigen::Infinity>() : 0.0});
      if (err <= 1e-14 * ref) break;
      Vector cx, cy, cz;
      solve_once(e1, e2, e3, cx, cy, cz);
      dx += cx;
      dy += cy;
      dz += cz;
    }
  }

 private:
  Vector apply_w2(const Vector& v) const {
    return w_->apply(cones_, w_->apply(cones_, v));
  }
  Vector apply_w2_inverse(const Vector& v) const {
    return w_->apply_inverse(cones_, w_->apply_inverse(cones_, v));
  }

  void solve_once(const Vector& r1, const Vector& r2, const Vector& r3, Vector& dx, Vector& dy,
                  Vector& dz) const {
    Vector t = r1 + gt_ * apply_w2_inverse(r3);
    if (sf_.A.rows() > 0) {
      t += at_ * r2;
      const Vector u = llt_.solve(t);
      dy = schur_.solve(sf_.A * u - r2);
      dx = u - y_ * dy;
    } else {
      dx = llt_.solve(t);
      dy = Vector::Zero(0);
    }
    dz = apply_w2_inverse(sf_.G * dx - r3);
  }

  const StandardForm& sf_;
  const ConeLayout& cones_;
  SparseMatrix at_, gt_;
  Matrix ata_;
  std::vector<std::vector<int>> block_cols_;
  std::vector<Matrix> block_g_;
  Matrix h_;
  Eigen::LLT<Matrix> llt_;
  Matrix y_;
  Eigen::LLT<Matrix> schur_;
  const Scaling* w_ = nullptr;
};

}  // namespace detail

/// Solves a canonical program.
inline Solution solve_standard(const StandardForm& sf, const Settings& st = {}) {
  using detail::ConeLayout;
  const ConeLayout cones(sf);
  const int n = sf.n;
  const int p = static_cast<int>(sf.A.rows());
  const int m = cones.rows();
  const SparseMatrix at = sf.A.transpose();
  const SparseMatrix gt = sf.G.transpose();
  const double degree = sf.degree();

  Solution sol;
  detail::Scaling w;
  detail::KktSolver kkt(sf, cones);

  // Initial point from two least-squares solves with W = I.
  w.lp_w = Vector::Ones(cones.lp());
  for (int k = 0; k < cones.num_soc(); ++k) {
    w.soc_w.push_back(Matrix::Identity(cones.dim(k), cones.dim(k)));
    w.soc_winv.push_back(Matrix::Identity(cones.dim(k), cones.dim(k)));
  }
  if (!kkt.factor(w)) return sol;
  Vector x, y, z, s;
  {
    Vector dx, dy, dz;
    kkt.solve(Vector::Zero(n), sf.b, sf.h, dx, dy, dz, st.refinement_steps);
    x = dx;
    s = -dz;
    cones.shift_interior(s);
    kkt.solve(-sf.c, Vector::Zero(p), Vector::Zero(m), dx, dy, dz, st.refinement_steps);
    y = dy;
    z = dz;
    cones.shift_interior(z);
  }
  double tau = 1.0, kappa = 1.0;

  const double bnorm = std::max(1.0, std::max(sf.b.size() ? sf.b.norm() : 0.0, sf.h.size() ? sf.h.norm() : 0.0));
  const double cnorm = std::max(1.0, sf.c.norm());

  auto finish_optimal = [&](bool inaccurate) {
    sol.status = Status::kOptimal;
    sol.inaccurate = inaccurate;
    sol.x_std = x / tau;
    sol.eq_dual = y / tau;
    sol.cone_dual = z / tau;
    sol.slack = s / tau;
  };

  Vector best_x, best_y, best_z, best_s;
  double best_tau = 0.0, best_merit = kInf;

  for (int iter = 0; iter <= st.max_iterations; ++iter) {
    sol.iterations = iter;
    // Residuals of the embedding.
    const Vector r1 = at * y + gt * z + tau * sf.c;
    const Vector r2 = -(sf.A * x) + tau * sf.b;
    const Vector r3 = -(sf.G * x) + tau * sf.h - s;
    const double cx = sf.c.dot(x);
    const double by_hz = sf.b.dot(y) + sf.h.dot(z);
    const double r4 = -cx - by_hz - kappa;

    const double pres = std::max(r2.size() ? r2.norm() : 0.0, r3.size() ? r3.norm() : 0.0) / tau / bnorm;
    const double dres = r1.norm() / tau / cnorm;
    const double pcost = cx / tau;
    const double dcost = -by_hz / tau;
    const double gap = s.dot(z) / (tau * tau);
    const double relgap = gap / std::max(1.0, std::min(std::fabs(pcost), std::fabs(dcost)));
    sol.primal_residual = pres;
    sol.dual_residual = dres;
    sol.gap = gap;

    const double merit = std::max({pres, dres, std::min(gap, relgap)});
    if (merit < best_merit) {
      best_merit = merit;
      best_x = x; best_y = y; best_z = z; best_s = s; best_tau = tau;
    }

    if (pres < st.feasibility_tol && dres < st.feasibility_tol &&
        (gap < st.gap_abs_tol || relgap < st.gap_rel_tol)) {
      finish_optimal(false);
      break;
    }
    // Primal infeasibility: A^T y + G^T z ~ 0 with b^T y + h^T z < 0.
    if (by_hz < 0.0) {
      const double res = (at * y + gt * z).norm() / (-by_hz);
      if (res < st.feasibility_tol) {
        sol.status = Status::kInfeasible;
        sol.eq_dual = y / (-by_hz);
        sol.cone_dual = z / (-by_hz);
        sol.certificate_residual = res;
        break;
      }
    }
    // Dual infeasibility: A x ~ 0, G x + s ~ 0 with c^T x < 0.
    if (cx < 0.0) {
      const double res = std::max(p ? (sf.A * x).norm() : 0.0, m ? (sf.G * x + s).norm() : 0.0) / (-cx);
      if (res < st.feasibility_tol) {
        sol.status = Status::kUnbounded;
        sol.x_std = x / (-cx);
        sol.slack = s / (-cx);
        sol.certificate_residual = res;
        break;
      }
    }
    if (iter == st.max_iterations) break;

    const double mu = (s.dot(z) + tau * kappa) / (degree + 1.0);
    if (!w.update(cones, s, z) || !kkt.factor(w)) break;
    const Vector& lambda = w.lambda;

    Vector x1, y1, z1;
    kkt.solve(-sf.c, sf.b, sf.h, x1, y1, z1, st.refinement_steps);
    const double denom_base = -(sf.c.dot(x1) + sf.b.dot(y1) + sf.h.dot(z1));

    auto direction = [&](double sigma, const Vector& xi, double zeta, Vector& dx, Vector& dy,
                         Vector& dz, Vector& ds, double& dtau, double& dkappa) {
      const double keep = 1.0 - sigma;
      const Vector lam_div = cones.divide(lambda, xi);
      Vector x2, y2, z2;
      kkt.solve(-keep * r1, keep * r2, keep * r3 - w.apply(cones, lam_div), x2, y2, z2,
                st.refinement_steps);
      const double num = -keep * r4 + sf.c.dot(x2) + sf.b.dot(y2) + sf.h.dot(z2) + zeta / tau;
      dtau = num / (kappa / tau + denom_base);
      dx = x2 + dtau * x1;
      dy = y2 + dtau * y1;
      dz = z2 + dtau * z1;
      ds = w.apply(cones, lam_div - w.apply(cones, dz));
      dkappa = (zeta - kappa * dtau) / tau;
    };
    auto step_length = [&](const Vector& dz, const Vector& ds, double dtau, double dkappa) {
      double a = cones.max_step(s, ds, 1.0);
      a = std::min(a, cones.max_step(z, dz, 1.0));
      if (dtau < 0.0) a = std::min(a, -tau / dtau);
      if (dkappa < 0.0) a = std::min(a, -kappa / dkappa);
      return a;
    };

    // Predictor.
    const Vector e = cones.identity();
    Vector dx, dy, dz, ds;
    double dtau, dkappa;
    direction(0.0, -cones.product(lambda, lambda), -kappa * tau, dx, dy, dz, ds, dtau, dkappa);
    const double alpha_aff = step_length(dz, ds, dtau, dkappa);
    const double sigma = std::clamp(std::pow(1.0 - alpha_aff, 3.0), 0.0, 1.0);

    // Corrector.
    const Vector corr = cones.product(w.apply_inverse(cones, ds), w.apply(cones, dz));
    const Vector xi = -cones.product(lambda, lambda) + sigma * mu * e - corr;
    const double zeta = -kappa * tau + sigma * mu - dkappa * dtau;
    direction(sigma, xi, zeta, dx, dy, dz, ds, dtau, dkappa);
    double alpha = step_length(dz, ds, dtau, dkappa);
    alpha = std::min(1.0, st.step_fraction * alpha);
    if (!(alpha > 1e-12) || !dx.allFinite() || !dz.allFinite()) break;

    x += alpha * dx;
    y += alpha * dy;
    z += alpha * dz;
    s += alpha * ds;
    tau += alpha * dtau;
    kappa += alpha * dkappa;
  }

  if (sol.status == Status::kNumericalFailure && best_tau > 0.0 && best_merit < st.inaccurate_tol) {
    x = best_x; y = best_y; z = best_z; s = best_s; tau = best_tau;
    finish_optimal(true);
  }
  if (sol.status == Status::kOptimal) {
    sol.y = sol.x_std.head(sf.user_vars);
  }
  return sol;
}

/// Solves a ConicProgram; the objective is re-evaluated on the original form.
inline Solution solve(const ConicProgram& program, const Settings& settings = {}) {
  const StandardForm sf = canonicalize(program);
  Solution sol = solve_standard(sf, settings);
  if (sol.status == Status::kOptimal) sol.objective = program.objective(sol.y);
  return sol;
}

/// Human-readable dump for failure triage.
inline std::string dump(const ConicProgram& p) {
  std::ostringstream os;
  os << std::setprecision(17);
  auto terms = [&](const SparseTerms& t) {
    for (const auto& [j, v] : t) os << ' ' << (v >= 0 ? "+" : "") << v << "*y" << j;
  };
  os << "conic program: " << p.num_vars << " variables\n";
  os << "minimize";
  for (int i = 0; i < p.num_vars; ++i) {
    if (p.cost(i) != 0.0) os << ' ' << (p.cost(i) >= 0 ? "+" : "") << p.cost(i) << "*y" << i;
  }
  if (p.cost_constant != 0.0) os << " + " << p.cost_constant;
  os << '\n';
  if (p.quadratic.size() > 0) {
    os << "quadratic (0.5 y^T Q y), nonzeros:\n";
    for (int i = 0; i < p.num_vars; ++i)
      for (int j = 0; j < p.num_vars; ++j)
        if (p.quadratic(i, j) != 0.0) os << "  Q[" << i << ',' << j << "] = " << p.quadratic(i, j) << '\n';
  }
  for (std::size_t r = 0; r < p.equalities.size(); ++r) {
    os << "eq" << r << ':';
    terms(p.equalities[r].terms);
    os << " == " << p.equalities[r].rhs << '\n';
  }
  for (std::size_t r = 0; r < p.inequalities.size(); ++r) {
    os << "ineq" << r << ':';
    terms(p.inequalities[r].terms);
    os << " <= " << p.inequalities[r].rhs << '\n';
  }
  for (std::size_t k = 0; k < p.cones.size(); ++k) {
    const auto& c = p.cones[k];
    os << "soc" << k << ": || [";
    for (std::size_t r = 0; r < c.rows.size(); ++r) {
      os << (r ? "; " : "");
      terms(c.rows[r]);
      os << " + " << c.offset(static_cast<Eigen::Index>(r));
    }
    os << "] || <=";
    terms(c.bound_terms);
    os << " + " << c.bound_constant << '\n';
  }
  for (int i = 0; i < p.num_vars; ++i) {
    if (std::isfinite(p.lower(i)) || std::isfinite(p.upper(i))) {
      os << "bound y" << i << " in [" << p.lower(i) << ", " << p.upper(i) << "]\n";
    }
  }
  return os.str();
}

}  // namespace gmmplan::conic
