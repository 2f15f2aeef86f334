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

// Planning problem data: vehicle dynamics, polygonal obstacles whose centers
// follow a Gaussian mixture per time step, the cost, and the JSON scene
// format. Time index t runs over 1..T for everything obstacle related; the
// initial state x_0 is given and never constrained.
//
// Being outside face i of an obstacle centered at c means
// a_i^T (p - c) >= h_i, i.e. delta^T [x; 1] <= 0 with
// delta = (-a_i on the position coordinates, a_i^T c + h_i). Only the offset
// entry of delta is random.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmmplan/gmm.hpp"
#include "gmmplan/rng.hpp"
#include "json.hpp"

namespace gmmplan::scene {

using Json = nlohmann::json;
using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Schema or invariant violation, tagged with the JSON pointer of the value.
class SceneError : public std::runtime_error {
 public:
  SceneError(const std::string& pointer, const std::string& what)
      : std::runtime_error((pointer.empty() ? std::string("/") : pointer) + ": " + what),
        pointer_(pointer.empty() ? "/" : pointer) {}
  const std::string& pointer() const { return pointer_; }

 private:
  std::string pointer_;
};

struct Interval {
  double lo = -kInf;
  double hi = kInf;
  bool bounded() const { return std::isfinite(lo) && std::isfinite(hi); }
  bool contains(double v) const { return v >= lo && v <= hi; }
};

struct DynamicsModel {
  std::string preset = "double_integrator";  // or "explicit"
  int horizon = 1;
  double dt = 0.5;
  std::vector<Matrix> a;  // a[t] maps x_t to x_{t+1}, t = 0..T-1
  std::vector<Matrix> b;
  Vector x0;
  std::vector<Interval> state_bounds;
  std::vector<Interval> input_bounds;
  std::vector<int> position_indices{0, 1};
  std::vector<int> velocity_indices{2, 3};  // may be empty

  int nx() const { return static_cast<int>(x0.size()); }
  int nu() const { return b.empty() ? 0 : static_cast<int>(b.front().cols()); }

  Vector step(int t, const Vector& x, const Vector& u) const { return a.at(t) * x + b.at(t) * u; }

  Vec2 position(const Vector& x) const { return {x(position_indices[0]), x(position_indices[1])}; }
  Vec2 velocity(const Vector& x) const {
    if (velocity_indices.empty()) return Vec2::Zero();
    return {x(velocity_indices[0]), x(velocity_indices[1])};
  }

  bool state_box_bounded() const {
    return std::all_of(state_bounds.begin(), state_bounds.end(), [](const Interval& i) { return i.bounded(); });
  }
};

/// Planar double integrator: state (px, py, vx, vy), input (ax, ay).
inline DynamicsModel double_integrator(double dt, int horizon) {
  if (!(dt > 0.0)) throw std::domain_error("double_integrator: dt must be positive");
  if (horizon < 1) throw std::domain_error("double_integrator: horizon must be >= 1");
  DynamicsModel d;
  d.preset = "double_integrator";
  d.horizon = horizon;
  d.dt = dt;
  Matrix a = Matrix::Identity(4, 4);
  a(0, 2) = dt;
  a(1, 3) = dt;
  Matrix b = Matrix::Zero(4, 2);
  b(0, 0) = 0.5 * dt * dt;
  b(1, 1) = 0.5 * dt * dt;
  b(2, 0) = dt;
  b(3, 1) = dt;
  d.a.assign(horizon, a);
  d.b.assign(horizon, b);
  d.x0 = Vector::Zero(4);
  d.state_bounds.assign(4, Interval{});
  d.input_bounds.assign(2, Interval{});
  return d;
}

struct Face {
  Vec2 normal;  // unit outward normal
  double half_extent = 0.0;  // before the safety margin
};

/// One mode of an obstacle's center trajectory; entry t-1 belongs to step t.
struct ObstacleMode {
  double weight = 1.0;
  std::vector<Vec2> mean;
  std::vector<Mat2> covariance;
};

struct ObstacleSpec {
  std::string name;
  std::vector<Face> faces;
  double safety_margin = 0.1;
  std::vector<ObstacleMode> modes;

  int num_faces() const { return static_cast<int>(faces.size()); }
  int num_modes() const { return static_cast<int>(modes.size()); }
  /// Half extent of face i with the safety margin included.
  double extent(int i) const { return faces.at(i).half_extent + safety_margin; }

  std::vector<double> weights() const {
    std::vector<double> w;
    for (const auto& m : modes) w.push_back(m.weight);
    return w;
  }

  /// Mixture over the center position at step t (1-based).
  GmmDistribution center(int t) const {
    std::vector<GaussianMode> g;
    for (const auto& m : modes) g.push_back({m.weight, m.mean.at(t - 1), m.covariance.at(t - 1)});
    return GmmDistribution(std::move(g));
  }

  /// min_i (h_i - a_i^T (p - c)); positive exactly when p is strictly inside.
  double penetration(const Vec2& c, const Vec2& p) const {
    double depth = kInf;
    for (int i = 0; i < num_faces(); ++i) depth = std::min(depth, extent(i) - faces[i].normal.dot(p - c));
    return depth;
  }
  bool strictly_inside(const Vec2& c, const Vec2& p) const { return penetration(c, p) > 0.0; }

  /// Vertices of the enlarged polygon relative to the center, counterclockwise.
  std::vector<Vec2> polygon() const {
    std::vector<int> order(faces.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(), [&](int x, int y) {
      return std::atan2(faces[x].normal.y(), faces[x].normal.x()) <
             std::atan2(faces[y].normal.y(), faces[y].normal.x());
    });
    std::vector<Vec2> out;
    for (std::size_t k = 0; k < order.size(); ++k) {
      const int i = order[k], j = order[(k + 1) % order.size()];
      Mat2 m;
      m.row(0) = faces[i].normal.transpose();
      m.row(1) = faces[j].normal.transpose();
      if (std::fabs(m.determinant()) < 1e-12) continue;
      out.push_back(m.inverse() * Vec2(extent(i), extent(j)));
    }
    return out;
  }
};

struct RiskSpec {
  double epsilon = 0.05;
  double beta = 1e-3;
};

/// cost = -w_prog * l^T (p_T - p_0) + w_lat * sum_t (n^T p_t - ref)^2
///        + w_vel * sum_t (n^T v_t)^2 + w_input * sum_t ||u_t||^2
/// with l the longitudinal axis, n its left normal and ref defaulting to n^T p_0.
struct CostSpec {
  double w_prog = 1.0;
  double w_lat = 0.1;
  double w_vel = 0.1;
  double w_input = 0.01;
  Vec2 longitudinal_axis{1.0, 0.0};
  std::optional<double> lateral_reference;

  Vec2 lateral_axis() const { return {-longitudinal_axis.y(), longitudinal_axis.x()}; }
  double reference(const DynamicsModel& d) const {
    return lateral_reference.value_or(lateral_axis().dot(d.position(d.x0)));
  }
};

enum class SamplingMode { kExact, kSamples };

struct SamplingSpec {
  SamplingMode mode = SamplingMode::kExact;
  int n_samples = 1000;
  std::uint64_t seed = 0;
};

struct PlanProblem {
  DynamicsModel dynamics;
  std::vector<ObstacleSpec> obstacles;
  RiskSpec risk;
  CostSpec cost;
  SamplingSpec sampling;
  std::optional<double> big_m;

  int horizon() const { return dynamics.horizon; }
};

/// A planned trajectory: states x_0..x_T and inputs u_0..u_{T-1}.
struct Trajectory {
  std::vector<Vector> states;
  std::vector<Vector> inputs;
};

/// Rolls the dynamics forward from x_0.
inline Trajectory rollout(const DynamicsModel& d, const std::vector<Vector>& inputs) {
  Trajectory tr;
  tr.inputs = inputs;
  tr.states.push_back(d.x0);
  for (int t = 0; t < d.horizon; ++t) tr.states.push_back(d.step(t, tr.states.back(), inputs.at(t)));
  return tr;
}

inline double evaluate_cost(const PlanProblem& pb, const Trajectory& tr) {
  const auto& d = pb.dynamics;
  const auto& c = pb.cost;
  const Vec2 l = c.longitudinal_axis, n = c.lateral_axis();
  const double ref = c.reference(d);
  double v = -c.w_prog * l.dot(d.position(tr.states.back()) - d.position(tr.states.front()));
  for (int t = 1; t <= d.horizon; ++t) {
    const double lat = n.dot(d.position(tr.states[t])) - ref;
    v += c.w_lat * lat * lat;
    if (!d.velocity_indices.empty()) {
      const double lv = n.dot(d.velocity(tr.states[t]));
      v += c.w_vel * lv * lv;
    }
  }
  for (const auto& u : tr.inputs) v += c.w_input * u.squaredNorm();
  return v;
}

// --- moments -------------------------------------------------------------

/// Moments of one mode of an obstacle center at one step. `count` is the
/// number of labeled samples behind an estimate (0 for exact moments).
struct CenterMoments {
  double weight = 1.0;
  Vec2 mean = Vec2::Zero();
  Mat2 covariance = Mat2::Zero();
  int count = 0;
  bool ridged = false;
};

struct ResolvedMoments {
  bool estimated = false;
  std::vector<std::vector<std::vector<CenterMoments>>> table;  // [j][t-1][k]

  const CenterMoments& at(int j, int t, int k) const { return table.at(j).at(t - 1).at(k); }
  int num_modes(int j) const { return static_cast<int>(table.at(j).front().size()); }
};

/// Independent stream tags: scene-side estimation and validation never share
/// draws, even under the same seed.
inline constexpr std::uint64_t kEstimationStream = 0x5ce0e000;
inline constexpr std::uint64_t kValidationStream = 0x7a1d0000;

/// One center trajectory of an obstacle: the mode is drawn once, positions
/// are independent across steps given the mode.
struct ObstacleDraw {
  int mode = 0;
  std::vector<Vec2> centers;  // steps 1..T
};

/// Precomputed covariance factors for repeated drawing.
class ObstacleSampler {
 public:
  explicit ObstacleSampler(const ObstacleSpec& obs) : obs_(&obs), weights_(obs.weights()) {
    for (const auto& m : obs.modes) {
      std::vector<Mat2> f;
      for (const auto& c : m.covariance) f.push_back(psd_factor(c));
      factors_.push_back(std::move(f));
    }
  }

  ObstacleDraw draw(SubstreamRng& rng) const {
    ObstacleDraw out;
    out.mode = draw_mode(weights_, rng);
    const auto& m = obs_->modes[out.mode];
    std::normal_distribution<double> g;
    out.centers.resize(m.mean.size());
    for (std::size_t t = 0; t < m.mean.size(); ++t) {
      const Vec2 z(g(rng), g(rng));
      out.centers[t] = m.mean[t] + factors_[out.mode][t] * z;
    }
    return out;
  }

 private:
  const ObstacleSpec* obs_;
  std::vector<double> weights_;
  std::vector<std::vector<Mat2>> factors_;
};

inline ResolvedMoments exact_moments(const PlanProblem& pb) {
  ResolvedMoments r;
  for (const auto& obs : pb.obstacles) {
    std::vector<std::vector<CenterMoments>> per_t;
    for (int t = 1; t <= pb.horizon(); ++t) {
      std::vector<CenterMoments> modes;
      for (const auto& m : obs.modes) modes.push_back({m.weight, m.mean[t - 1], m.covariance[t - 1], 0, false});
      per_t.push_back(std::move(modes));
    }
    r.table.push_back(std::move(per_t));
  }
  return r;
}

/// Moments estimated from n_samples labeled center trajectories per
/// obstacle. Sample i of obstacle j uses substream (seed, i, tag + j).
inline ResolvedMoments estimated_moments(const PlanProblem& pb) {
  ResolvedMoments r;
  r.estimated = true;
  const int n = pb.sampling.n_samples;
  if (n < 1) throw std::domain_error("estimated_moments: n_samples must be positive");
  for (std::size_t j = 0; j < pb.obstacles.size(); ++j) {
    const auto& obs = pb.obstacles[j];
    const ObstacleSampler sampler(obs);
    std::vector<ObstacleDraw> draws(n);
    for (int i = 0; i < n; ++i) {
      SubstreamRng rng(pb.sampling.seed, static_cast<std::uint64_t>(i), kEstimationStream + j);
      draws[i] = sampler.draw(rng);
    }
    std::vector<std::vector<CenterMoments>> per_t;
    for (int t = 1; t <= pb.horizon(); ++t) {
      LabeledSampleSet set;
      set.num_modes = obs.num_modes();
      set.samples.reserve(n);
      for (const auto& d : draws) set.samples.push_back({Vector(d.centers[t - 1]), d.mode});
      EstimatedMoments est;
      try {
        est = estimate_moments(set);
      } catch (const InsufficientSamplesError& e) {
        throw InsufficientSamplesError(e.mode(), set.counts()[e.mode()], 4);
      }
      const auto counts = set.counts();
      std::vector<CenterMoments> modes;
      for (int k = 0; k < obs.num_modes(); ++k) {
        const auto& m = est.modes[k];
        modes.push_back({static_cast<double>(counts[k]) / n, Vec2(m.mean), Mat2(m.covariance), m.count, m.ridged});
      }
      per_t.push_back(std::move(modes));
    }
    r.table.push_back(std::move(per_t));
  }
  return r;
}

inline ResolvedMoments resolve_moments(const PlanProblem& pb) {
  return pb.sampling.mode == SamplingMode::kExact ? exact_moments(pb) : estimated_moments(pb);
}

/// Moment-matched single-mode version of every (j, t) mixture. The sample
/// count of the merged mode is the total count.
inline ResolvedMoments collapse(const ResolvedMoments& in) {
  ResolvedMoments out;
  out.estimated = in.estimated;
  for (const auto& per_t : in.table) {
    std::vector<std::vector<CenterMoments>> merged;
    for (const auto& modes : per_t) {
      CenterMoments c;
      c.weight = 1.0;
      double wsum = 0.0;
      for (const auto& m : modes) {
        c.mean += m.weight * m.mean;
        wsum += m.weight;
        c.count += m.count;
      }
      c.mean /= wsum;
      for (const auto& m : modes) {
        const Vec2 d = m.mean - c.mean;
        c.covariance += m.weight / wsum * (m.covariance + d * d.transpose());
      }
      merged.push_back({c});
    }
    out.table.push_back(std::move(merged));
  }
  return out;
}

/// The same problem with every obstacle replaced by its K = 1 moment match.
inline PlanProblem collapse(const PlanProblem& pb) {
  PlanProblem out = pb;
  for (auto& obs : out.obstacles) {
    ObstacleMode m;
    m.weight = 1.0;
    for (int t = 1; t <= pb.horizon(); ++t) {
      const auto g = obs.center(t).collapse();
      m.mean.push_back(Vec2(g.mode(0).mean));
      m.covariance.push_back(Mat2(g.mode(0).covariance));
    }
    obs.modes = {m};
  }
  return out;
}

/// The same problem expressed in a frame whose origin sits at -offset, e.g.
/// map coordinates. Plans shift with it; face constraints and the cost do not
/// change.
inline PlanProblem translate(const PlanProblem& pb, const Vec2& offset) {
  PlanProblem out = pb;
  auto& d = out.dynamics;
  for (int q = 0; q < 2; ++q) {
    const int r = d.position_indices[q];
    d.x0(r) += offset(q);
    d.state_bounds[r].lo += offset(q);
    d.state_bounds[r].hi += offset(q);
  }
  for (auto& obs : out.obstacles)
    for (auto& m : obs.modes)
      for (auto& c : m.mean) c += offset;
  if (out.cost.lateral_reference) *out.cost.lateral_reference += out.cost.lateral_axis().dot(offset);
  return out;
}

/// Smallest distance between two mode means of obstacle j, over all steps,
/// in units of the larger mode standard deviation (sqrt of lambda_max).
inline double mode_separation(const ObstacleSpec& obs) {
  double best = kInf;
  const int steps = obs.modes.empty() ? 0 : static_cast<int>(obs.modes.front().mean.size());
  for (int t = 0; t < steps; ++t)
    for (int a = 0; a < obs.num_modes(); ++a)
      for (int b = a + 1; b < obs.num_modes(); ++b) {
        const double s = std::sqrt(std::max(max_eigenvalue(obs.modes[a].covariance[t]),
                                            max_eigenvalue(obs.modes[b].covariance[t])));
        best = std::min(best, (obs.modes[a].mean[t] - obs.modes[b].mean[t]).norm() / s);
      }
  return best;
}

// --- face parameters -----------------------------------------------------

/// Uncertain halfspace vector of face i of obstacle j, mode k, step t.
struct FaceParameter {
  Vector mean;  // n_x + 1
  Matrix covariance;
  int t = 0, j = 0, i = 0, k = 0;
};

inline FaceParameter face_delta(const DynamicsModel& d, const ObstacleSpec& obs, int face,
                                const CenterMoments& c) {
  const int nx = d.nx();
  const Vec2 a = obs.faces.at(face).normal;
  FaceParameter f;
  f.mean = Vector::Zero(nx + 1);
  f.mean(d.position_indices[0]) = -a.x();
  f.mean(d.position_indices[1]) = -a.y();
  f.mean(nx) = a.dot(c.mean) + obs.extent(face);
  f.covariance = Matrix::Zero(nx + 1, nx + 1);
  f.covariance(nx, nx) = a.dot(c.covariance * a);
  f.i = face;
  return f;
}

/// Face parameter from the scene's exact mixture moments.
inline FaceParameter face_delta(const PlanProblem& pb, int j, int face, int k, int t) {
  const auto& obs = pb.obstacles.at(j);
  const auto& m = obs.modes.at(k);
  CenterMoments c{m.weight, m.mean.at(t - 1), m.covariance.at(t - 1), 0, false};
  auto f = face_delta(pb.dynamics, obs, face, c);
  f.t = t;
  f.j = j;
  f.k = k;
  return f;
}

// --- JSON ----------------------------------------------------------------

namespace detail {

class Node {
 public:
  Node(const Json& j, std::string path) : j_(&j), path_(std::move(path)) {}

  [[noreturn]] void fail(const std::string& msg) const { throw SceneError(path_, msg); }
  const std::string& path() const { return path_; }
  const Json& raw() const { return *j_; }

  bool has(const std::string& key) const { return j_->is_object() && j_->contains(key); }

  Node at(const std::string& key) const {
    if (!j_->is_object()) fail("expected an object");
    if (!j_->contains(key)) throw SceneError(path_ + "/" + key, "missing required field");
    return {j_->at(key), path_ + "/" + key};
  }

  std::size_t size() const {
    if (!j_->is_array()) fail("expected an array");
    return j_->size();
  }

  Node operator[](std::size_t i) const {
    if (!j_->is_array()) fail("expected an array");
    return {j_->at(i), path_ + "/" + std::to_string(i)};
  }

  double number() const {
    if (!j_->is_number()) fail("expected a number");
    return j_->get<double>();
  }

  /// A bound entry; null means unbounded in that direction.
  double bound(double if_null) const { return j_->is_null() ? if_null : number(); }

  long long integer() const {
    if (!j_->is_number_integer() && !j_->is_number_unsigned()) fail("expected an integer");
    return j_->get<long long>();
  }

  std::uint64_t unsigned_integer() const {
    if (!j_->is_number_unsigned() && !(j_->is_number_integer() && j_->get<long long>() >= 0)) {
      fail("expected a non-negative integer");
    }
    return j_->get<std::uint64_t>();
  }

  std::string string() const {
    if (!j_->is_string()) fail("expected a string");
    return j_->get<std::string>();
  }

  Vector vector(int n = -1) const {
    const auto len = size();
    if (n >= 0 && static_cast<int>(len) != n) fail("expected " + std::to_string(n) + " entries");
    Vector v(len);
    for (std::size_t i = 0; i < len; ++i) v(i) = (*this)[i].number();
    return v;
  }

  Matrix matrix(int rows = -1, int cols = -1) const {
    const auto r = size();
    if (rows >= 0 && static_cast<int>(r) != rows) fail("expected " + std::to_string(rows) + " rows");
    if (r == 0) fail("matrix must have at least one row");
    const auto c = (*this)[0].size();
    if (cols >= 0 && static_cast<int>(c) != cols) fail("expected " + std::to_string(cols) + " columns");
    Matrix m(r, c);
    for (std::size_t i = 0; i < r; ++i) m.row(i) = (*this)[i].vector(static_cast<int>(c)).transpose();
    return m;
  }

 private:
  const Json* j_;
  std::string path_;
};

inline Json matrix_json(const Matrix& m) {
  Json rows = Json::array();
  for (int i = 0; i < m.rows(); ++i) {
    Json r = Json::array();
    for (int j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(r);
  }
  return rows;
}

inline Json vector_json(const Eigen::Ref<const Vector>& v) {
  Json a = Json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Json bounds_json(const std::vector<Interval>& b) {
  Json a = Json::array();
  for (const auto& i : b) {
    a.push_back(Json::array({std::isfinite(i.lo) ? Json(i.lo) : Json(nullptr),
                             std::isfinite(i.hi) ? Json(i.hi) : Json(nullptr)}));
  }
  return a;
}

inline std::vector<Interval> parse_bounds(const Node& n, int count) {
  if (static_cast<int>(n.size()) != count) n.fail("expected " + std::to_string(count) + " intervals");
  std::vector<Interval> out;
  for (int i = 0; i < count; ++i) {
    const Node e = n[i];
    if (e.size() != 2) e.fail("expected [lo, hi]");
    Interval iv{e[0].bound(-kInf), e[1].bound(kInf)};
    if (iv.lo > iv.hi) e.fail("lower bound exceeds upper bound");
    out.push_back(iv);
  }
  return out;
}

inline std::vector<int> parse_indices(const Node& n, int nx) {
  std::vector<int> out;
  for (std::size_t i = 0; i < n.size(); ++i) {
    const auto v = n[i].integer();
    if (v < 0 || v >= nx) n[i].fail("state index out of range");
    out.push_back(static_cast<int>(v));
  }
  if (!out.empty() && out.size() != 2) n.fail("expected two indices");
  return out;
}

inline DynamicsModel parse_dynamics(const Node& n) {
  DynamicsModel d;
  const std::string preset = n.has("preset") ? n.at("preset").string() : "explicit";
  const double dt = n.at("dt").number();
  if (!(dt > 0.0)) n.at("dt").fail("dt must be positive");
  const auto horizon = n.at("T").integer();
  if (horizon < 1) n.at("T").fail("T must be >= 1");
  if (preset == "double_integrator") {
    d = double_integrator(dt, static_cast<int>(horizon));
    d.x0 = n.at("x0").vector(4);
  } else if (preset == "explicit") {
    d.preset = "explicit";
    d.dt = dt;
    d.horizon = static_cast<int>(horizon);
    d.x0 = n.at("x0").vector();
    const int nx = static_cast<int>(d.x0.size());
    if (nx < 2) n.at("x0").fail("state needs at least the two position coordinates");
    const Node as = n.at("A_t"), bs = n.at("B_t");
    if (static_cast<int>(as.size()) != d.horizon) as.fail("expected one matrix per step");
    if (static_cast<int>(bs.size()) != d.horizon) bs.fail("expected one matrix per step");
    for (int t = 0; t < d.horizon; ++t) {
      d.a.push_back(as[t].matrix(nx, nx));
      d.b.push_back(bs[t].matrix(nx, t == 0 ? -1 : static_cast<int>(d.b.front().cols())));
    }
    d.position_indices = n.has("position_indices") ? parse_indices(n.at("position_indices"), nx)
                                                   : std::vector<int>{0, 1};
    if (d.position_indices.size() != 2) n.at("position_indices").fail("expected two indices");
    d.velocity_indices = n.has("velocity_indices") ? parse_indices(n.at("velocity_indices"), nx)
                                                   : std::vector<int>{};
    d.state_bounds.assign(nx, Interval{});
    d.input_bounds.assign(d.nu(), Interval{});
  } else {
    n.at("preset").fail("unknown preset '" + preset + "'");
  }
  if (n.has("state_bounds")) d.state_bounds = parse_bounds(n.at("state_bounds"), d.nx());
  if (n.has("input_bounds")) d.input_bounds = parse_bounds(n.at("input_bounds"), d.nu());
  for (int i = 0; i < d.nx(); ++i) {
    if (!d.state_bounds[i].contains(d.x0(i))) {
      n.at("x0")[i].fail("initial state lies outside the state bounds");
    }
  }
  return d;
}

inline ObstacleSpec parse_obstacle(const Node& n, int horizon) {
  ObstacleSpec o;
  if (n.has("name")) o.name = n.at("name").string();
  const Node faces = n.at("faces");
  if (faces.size() == 0) faces.fail("an obstacle needs at least one face");
  for (std::size_t i = 0; i < faces.size(); ++i) {
    const Node f = faces[i];
    Face face;
    face.normal = f.at("normal").vector(2);
    if (std::fabs(face.normal.norm() - 1.0) > 1e-9) f.at("normal").fail("normal must have unit length");
    face.half_extent = f.at("half_extent").number();
    if (!(face.half_extent > 0.0)) f.at("half_extent").fail("half_extent must be positive");
    o.faces.push_back(face);
  }
  if (n.has("safety_margin")) {
    o.safety_margin = n.at("safety_margin").number();
    if (!(o.safety_margin >= 0.0)) n.at("safety_margin").fail("safety_margin must be non-negative");
  }
  const Node modes = n.at("modes");
  if (modes.size() == 0) modes.fail("an obstacle needs at least one mode");
  double total = 0.0;
  for (std::size_t k = 0; k < modes.size(); ++k) {
    const Node m = modes[k];
    ObstacleMode om;
    om.weight = m.at("weight").number();
    if (!(om.weight > 0.0)) m.at("weight").fail("mode weights must be positive");
    total += om.weight;
    const Node means = m.at("mean_trajectory"), covs = m.at("covariance_trajectory");
    if (static_cast<int>(means.size()) != horizon) means.fail("expected one entry per step t = 1..T");
    if (static_cast<int>(covs.size()) != horizon) covs.fail("expected one entry per step t = 1..T");
    for (int t = 0; t < horizon; ++t) {
      om.mean.push_back(means[t].vector(2));
      const Mat2 c = covs[t].matrix(2, 2);
      if (std::fabs(c(0, 1) - c(1, 0)) > 1e-12) covs[t].fail("covariance must be symmetric");
      if (min_eigenvalue(c) < -1e-10) covs[t].fail("covariance must be positive semidefinite");
      om.covariance.push_back(c);
    }
    o.modes.push_back(std::move(om));
  }
  if (std::fabs(total - 1.0) > 1e-12) modes.fail("weights must sum to 1");
  return o;
}

}  // namespace detail

inline PlanProblem parse_scene(const Json& j) {
  const detail::Node root(j, "");
  if (!j.is_object()) root.fail("scene must be a JSON object");
  PlanProblem pb;
  pb.dynamics = detail::parse_dynamics(root.at("dynamics"));
  const int horizon = pb.dynamics.horizon;

  const auto obs = root.at("obstacles");
  for (std::size_t i = 0; i < obs.size(); ++i) pb.obstacles.push_back(detail::parse_obstacle(obs[i], horizon));

  const auto risk = root.at("risk");
  pb.risk.epsilon = risk.at("epsilon").number();
  if (!(pb.risk.epsilon > 0.0 && pb.risk.epsilon < 0.5)) {
    risk.at("epsilon").fail("epsilon must lie in (0,0.5)");
  }
  if (risk.has("beta")) pb.risk.beta = risk.at("beta").number();
  if (!(pb.risk.beta > 0.0 && pb.risk.beta < 1.0)) risk.at("beta").fail("beta must lie in (0,1)");

  if (root.has("cost")) {
    const auto c = root.at("cost");
    auto weight = [&](const char* key, double& dst) {
      if (!c.has(key)) return;
      dst = c.at(key).number();
      if (!(dst >= 0.0)) c.at(key).fail("cost weights must be non-negative");
    };
    weight("w_prog", pb.cost.w_prog);
    weight("w_lat", pb.cost.w_lat);
    weight("w_vel", pb.cost.w_vel);
    weight("w_input", pb.cost.w_input);
    if (c.has("longitudinal_axis")) {
      pb.cost.longitudinal_axis = c.at("longitudinal_axis").vector(2);
      if (std::fabs(pb.cost.longitudinal_axis.norm() - 1.0) > 1e-9) {
        c.at("longitudinal_axis").fail("longitudinal_axis must have unit length");
      }
    }
    if (c.has("lateral_reference")) pb.cost.lateral_reference = c.at("lateral_reference").number();
    if (pb.cost.w_prog + pb.cost.w_lat + pb.cost.w_vel + pb.cost.w_input <= 0.0) {
      c.fail("at least one cost weight must be positive");
    }
  }

  if (root.has("sampling")) {
    const auto s = root.at("sampling");
    const std::string mode = s.at("mode").string();
    if (mode == "exact") {
      pb.sampling.mode = SamplingMode::kExact;
    } else if (mode == "samples") {
      pb.sampling.mode = SamplingMode::kSamples;
    } else {
      s.at("mode").fail("mode must be \"exact\" or \"samples\"");
    }
    if (s.has("N_s")) {
      const auto ns = s.at("N_s").integer();
      if (ns < 1) s.at("N_s").fail("N_s must be positive");
      pb.sampling.n_samples = static_cast<int>(ns);
    }
    if (s.has("seed")) pb.sampling.seed = s.at("seed").unsigned_integer();
  }

  if (root.has("big_m")) {
    pb.big_m = root.at("big_m").number();
    if (!(*pb.big_m > 0.0)) root.at("big_m").fail("big_m must be positive");
  }
  return pb;
}

inline Json to_json(const PlanProblem& pb) {
  using detail::matrix_json;
  using detail::vector_json;
  const auto& d = pb.dynamics;
  Json dyn;
  dyn["preset"] = d.preset;
  dyn["dt"] = d.dt;
  dyn["T"] = d.horizon;
  dyn["x0"] = vector_json(d.x0);
  dyn["state_bounds"] = detail::bounds_json(d.state_bounds);
  dyn["input_bounds"] = detail::bounds_json(d.input_bounds);
  if (d.preset == "explicit") {
    Json as = Json::array(), bs = Json::array();
    for (int t = 0; t < d.horizon; ++t) {
      as.push_back(matrix_json(d.a[t]));
      bs.push_back(matrix_json(d.b[t]));
    }
    dyn["A_t"] = as;
    dyn["B_t"] = bs;
    dyn["position_indices"] = d.position_indices;
    dyn["velocity_indices"] = d.velocity_indices;
  }
  Json obstacles = Json::array();
  for (const auto& o : pb.obstacles) {
    Json jo;
    if (!o.name.empty()) jo["name"] = o.name;
    jo["safety_margin"] = o.safety_margin;
    Json faces = Json::array();
    for (const auto& f : o.faces) faces.push_back({{"normal", {f.normal.x(), f.normal.y()}}, {"half_extent", f.half_extent}});
    jo["faces"] = faces;
    Json modes = Json::array();
    for (const auto& m : o.modes) {
      Json means = Json::array(), covs = Json::array();
      for (std::size_t t = 0; t < m.mean.size(); ++t) {
        means.push_back({m.mean[t].x(), m.mean[t].y()});
        covs.push_back(matrix_json(m.covariance[t]));
      }
      modes.push_back({{"weight", m.weight}, {"mean_trajectory", means}, {"covariance_trajectory", covs}});
    }
    jo["modes"] = modes;
    obstacles.push_back(jo);
  }
  Json cost = {{"w_prog", pb.cost.w_prog},
               {"w_lat", pb.cost.w_lat},
               {"w_vel", pb.cost.w_vel},
               {"w_input", pb.cost.w_input},
               {"longitudinal_axis", {pb.cost.longitudinal_axis.x(), pb.cost.longitudinal_axis.y()}}};
  if (pb.cost.lateral_reference) cost["lateral_reference"] = *pb.cost.lateral_reference;
  Json out;
  out["dynamics"] = dyn;
  out["obstacles"] = obstacles;
  out["risk"] = {{"epsilon", pb.risk.epsilon}, {"beta", pb.risk.beta}};
  out["cost"] = cost;
  out["sampling"] = {{"mode", pb.sampling.mode == SamplingMode::kExact ? "exact" : "samples"},
                     {"N_s", pb.sampling.n_samples},
                     {"seed", pb.sampling.seed}};
  if (pb.big_m) out["big_m"] = *pb.big_m;
  return out;
}

inline PlanProblem parse_scene_text(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw SceneError("/", std::string("invalid JSON: ") + e.what());
  }
  return parse_scene(j);
}

inline PlanProblem load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scene file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scene_text(ss.str());
}

inline std::string scene_text(const PlanProblem& pb) { return to_json(pb).dump(2) + "\n"; }

inline void save_scene(const PlanProblem& pb, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write scene file '" + path + "'");
  out << scene_text(pb);
}

// --- trajectory CSV --------------------------------------------------------

/// Columns t, px, py, vx, vy, ax, ay; one row per step 0..T. The input row
/// at step T is zero.
inline std::string trajectory_csv(const DynamicsModel& d, const Trajectory& tr) {
  std::ostringstream os;
  os.precision(17);
  os << "t,px,py,vx,vy,ax,ay\n";
  for (std::size_t t = 0; t < tr.states.size(); ++t) {
    const Vec2 p = d.position(tr.states[t]), v = d.velocity(tr.states[t]);
    Vec2 u = Vec2::Zero();
    if (t < tr.inputs.size()) {
      const auto& ut = tr.inputs[t];
      u = Vec2(ut.size() > 0 ? ut(0) : 0.0, ut.size() > 1 ? ut(1) : 0.0);
    }
    os << t << ',' << p.x() << ',' << p.y() << ',' << v.x() << ',' << v.y() << ',' << u.x() << ',' << u.y()
       << '\n';
  }
  return os.str();
}

/// Positions p_0..p_T read back from a trajectory CSV. Leading '#' lines
/// (run manifests) are skipped.
inline std::vector<Vec2> read_positions_csv(std::istream& in) {
  std::string line;
  while (std::getline(in, line) && line.rfind('#', 0) == 0) {
  }
  if (!in || line.rfind("t,px,py", 0) != 0) {
    throw std::runtime_error("trajectory CSV: expected header 't,px,py,...'");
  }
  std::vector<Vec2> out;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) {
      try {
        vals.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw std::runtime_error("trajectory CSV: bad number on line " + std::to_string(row));
      }
    }
    if (vals.size() < 3) throw std::runtime_error("trajectory CSV: short line " + std::to_string(row));
    if (static_cast<int>(vals[0]) != static_cast<int>(out.size())) {
      throw std::runtime_error("trajectory CSV: steps must be 0, 1, 2, ... (line " + std::to_string(row) + ")");
    }
    out.emplace_back(vals[1], vals[2]);
  }
  return out;
}

inline std::vector<Vec2> positions(const DynamicsModel& d, const Trajectory& tr) {
  std::vector<Vec2> out;
  for (const auto& x : tr.states) out.push_back(d.position(x));
  return out;
}

// --- synthetic scenes ------------------------------------------------------

/// Axis-aligned rectangle faces with the given half lengths.
inline std::vector<Face> rectangle(double half_x, double half_y) {
  return {{Vec2(1, 0), half_x}, {Vec2(-1, 0), half_x}, {Vec2(0, 1), half_y}, {Vec2(0, -1), half_y}};
}

/// Intersection scene: the ego vehicle drives along +x in its lane at y = 0;
/// two vehicles approach in the opposite lane (y = 3.5). The first one is
/// multimodal (straight, turning across the ego lane, turning away); the
/// second one goes straight. Geometry is perturbed by the seed.
/// Templates: "intersection_3mode" and "intersection_2mode".
inline PlanProblem generate_scene(const std::string& name, std::uint64_t seed) {
  int modes = 0;
  if (name == "intersection_3mode") {
    modes = 3;
  } else if (name == "intersection_2mode") {
    modes = 2;
  } else {
    throw std::invalid_argument("unknown scene template '" + name + "'");
  }
  SubstreamRng rng(seed, 0, 0x6e5cULL);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };

  PlanProblem pb;
  const int horizon = 8;
  const double dt = 0.5;
  pb.dynamics = double_integrator(dt, horizon);
  pb.dynamics.x0 << 0.0, 0.0, uni(4.5, 5.5), 0.0;
  pb.dynamics.state_bounds = {{-10.0, 60.0}, {-1.5, 1.5}, {0.0, 10.0}, {-2.0, 2.0}};
  pb.dynamics.input_bounds = {{-4.0, 3.0}, {-1.5, 1.5}};

  auto make_modes = [&](Vec2 start, double speed, const std::vector<double>& angles,
                        const std::vector<double>& weights, double sigma0, double growth) {
    std::vector<ObstacleMode> out;
    for (std::size_t k = 0; k < angles.size(); ++k) {
      ObstacleMode m;
      m.weight = weights[k];
      const Vec2 dir(-std::cos(angles[k]), std::sin(angles[k]));
      for (int t = 1; t <= horizon; ++t) {
        m.mean.push_back(start + speed * t * dt * dir);
        const double s = sigma0 + growth * t;
        m.covariance.push_back(s * s * Mat2::Identity());
      }
      out.push_back(std::move(m));
    }
    return out;
  };

  const double turn = uni(35.0, 50.0) * M_PI / 180.0;
  ObstacleSpec ov1;
  ov1.name = "oncoming_multimodal";
  ov1.faces = rectangle(3.0, 1.5);
  ov1.safety_margin = 0.1;
  std::vector<double> angles, weights;
  if (modes == 3) {
    const double w1 = uni(0.15, 0.3), w2 = uni(0.15, 0.25);
    angles = {0.0, -turn, turn};
    weights = {1.0 - w1 - w2, w1, w2};
  } else {
    const double w1 = uni(0.3, 0.45);
    angles = {0.0, -turn};
    weights = {1.0 - w1, w1};
  }
  ov1.modes = make_modes(Vec2(uni(20.0, 26.0), 3.5), uni(5.0, 7.0), angles, weights, uni(0.15, 0.25),
                         uni(0.04, 0.06));

  ObstacleSpec ov2;
  ov2.name = "oncoming_straight";
  ov2.faces = rectangle(3.0, 1.5);
  ov2.safety_margin = 0.1;
  ov2.modes = make_modes(Vec2(uni(40.0, 50.0), 3.5), uni(6.0, 8.0), {0.0}, {1.0}, uni(0.15, 0.25),
                         uni(0.04, 0.06));

  pb.obstacles = {ov1, ov2};
  pb.risk = {0.05, 1e-3};
  pb.cost = CostSpec{};
  pb.sampling = {SamplingMode::kSamples, 1000, seed};
  return pb;
}

}  // namespace gmmplan::scene
