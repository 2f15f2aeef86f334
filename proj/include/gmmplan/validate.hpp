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

// Monte Carlo check of a plan against fresh obstacle draws.
//
// Sample i of obstacle j comes from substream (seed, i, kValidationStream + j)
// and all per-sample results land in index order before any reduction, so a
// report is bit-identical for every thread count and chunk size.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmmplan/reform.hpp"
#include "gmmplan/rng.hpp"
#include "gmmplan/scene.hpp"
#include "json.hpp"

namespace gmmplan::validate {

using scene::Vec2;

namespace detail {

inline void require_tail(std::size_t n, double level) {
  if (!(level > 0.0 && level <= 1.0)) throw std::domain_error("tail level must lie in (0, 1]");
  const double need = std::ceil(1.0 / level - 1e-9);
  if (static_cast<double>(n) < need) {
    throw std::invalid_argument("need at least " + std::to_string(static_cast<long long>(need)) +
                                " values for level " + std::to_string(level) + ", got " + std::to_string(n));
  }
}

// Pairwise sum, fixed association for a given length.
inline double pairwise_sum(const double* v, std::size_t n) {
  if (n <= 16) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += v[i];
    return s;
  }
  const std::size_t h = n / 2;
  return pairwise_sum(v, h) + pairwise_sum(v + h, n - h);
}

}  // namespace detail

/// Mean of the level-tail of the largest values: the floor(level * N) largest
/// count fully, the next one with the fractional remainder.
inline double empirical_cvar(std::vector<double> values, double level) {
  detail::require_tail(values.size(), level);
  const double mass = level * static_cast<double>(values.size());
  const std::size_t whole = static_cast<std::size_t>(std::floor(mass));
  const std::size_t need = std::min(values.size(), whole + 1);
  std::partial_sort(values.begin(), values.begin() + need, values.end(), std::greater<double>());
  double s = detail::pairwise_sum(values.data(), whole);
  const double frac = mass - static_cast<double>(whole);
  if (frac > 0.0 && whole < values.size()) s += frac * values[whole];
  return s / mass;
}

/// Upper level-quantile: the ceil(level * N)-th largest value.
inline double empirical_var(std::vector<double> values, double level) {
  detail::require_tail(values.size(), level);
  const std::size_t k = static_cast<std::size_t>(std::ceil(level * static_cast<double>(values.size()) - 1e-9));
  const std::size_t idx = std::max<std::size_t>(k, 1) - 1;
  std::nth_element(values.begin(), values.begin() + idx, values.end(), std::greater<double>());
  return values[idx];
}

struct ValidateOptions {
  std::size_t samples = 100000;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::size_t chunk = 4096;
  bool keep_depths = false;  // per violating sample, for plotting
};

struct ConstraintRate {
  int t = 0, j = 0;
  double rate = 0.0;
};

/// Empirical CVaR of the active face value delta^T [x; 1] among the draws of
/// one mode, next to its Gaussian closed form.
struct ModeCvar {
  int t = 0, j = 0, k = 0, face = 0;
  double level = 0.0;
  std::size_t samples = 0;
  std::optional<double> empirical;  // empty when too few draws of the mode
  double analytic = 0.0;
};

struct ViolatingSample {
  std::size_t index = 0;
  double depth = 0.0;
  int t = 0, j = 0, mode = 0;
};

struct ValidationReport {
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
  std::size_t violations = 0;
  double vrate = 0.0;
  double e_vamt_m = 0.0;
  std::vector<ConstraintRate> per_constraint;
  std::vector<ModeCvar> cvar;
  std::optional<ViolatingSample> worst;
  std::vector<ViolatingSample> depths;  // filled with keep_depths
  std::vector<std::string> warnings;
};

/// Active face per (t, j, k): the face with the largest clearance from the
/// mode mean, unless a plan supplies its own choice.
using FaceChoice = std::vector<std::vector<std::vector<int>>>;  // [t-1][j][k]

inline FaceChoice clearest_faces(const scene::PlanProblem& pb, const std::vector<Vec2>& path) {
  FaceChoice out(pb.horizon());
  for (int t = 1; t <= pb.horizon(); ++t) {
    for (const auto& obs : pb.obstacles) {
      std::vector<int> per_mode;
      for (const auto& m : obs.modes) {
        int best = 0;
        double clear = -scene::kInf;
        for (int i = 0; i < obs.num_faces(); ++i) {
          const double c = obs.faces[i].normal.dot(path[t] - m.mean[t - 1]) - obs.extent(i);
          if (c > clear) {
            clear = c;
            best = i;
          }
        }
        per_mode.push_back(best);
      }
      out[t - 1].push_back(per_mode);
    }
  }
  return out;
}

/// path holds p_0..p_T.
inline ValidationReport validate(const scene::PlanProblem& pb, const std::vector<Vec2>& path,
                                 const ValidateOptions& opt = {}, const FaceChoice* faces = nullptr) {
  const int horizon = pb.horizon();
  const int nobs = static_cast<int>(pb.obstacles.size());
  if (static_cast<int>(path.size()) != horizon + 1) {
    throw std::invalid_argument("plan has " + std::to_string(path.size()) + " positions, expected " +
                                std::to_string(horizon + 1));
  }
  if (opt.samples == 0) throw std::invalid_argument("validate: samples must be positive");
  ValidationReport rep;
  rep.n_samples = opt.samples;
  rep.seed = opt.seed;
  if (opt.samples < 1000) {
    rep.warnings.push_back("only " + std::to_string(opt.samples) + " samples; rates below 1e-3 are not resolved");
  }
  const FaceChoice chosen = faces ? *faces : clearest_faces(pb, path);

  const std::size_t n = opt.samples;
  const std::size_t cells = static_cast<std::size_t>(horizon) * nobs;
  // Per sample and (t, j): penetration depth and active face value.
  std::vector<double> depth(n * cells), value(n * cells);
  std::vector<int> mode(n * nobs);
  std::vector<scene::ObstacleSampler> samplers;
  for (const auto& obs : pb.obstacles) samplers.emplace_back(obs);

  parallel_chunks(n, opt.chunk, opt.threads, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      for (int j = 0; j < nobs; ++j) {
        SubstreamRng rng(opt.seed, i, scene::kValidationStream + static_cast<std::uint64_t>(j));
        const auto draw = samplers[j].draw(rng);
        mode[i * nobs + j] = draw.mode;
        const auto& obs = pb.obstacles[j];
        for (int t = 1; t <= horizon; ++t) {
          const Vec2& c = draw.centers[t - 1];
          const std::size_t cell = i * cells + static_cast<std::size_t>(t - 1) * nobs + j;
          depth[cell] = obs.penetration(c, path[t]);
          const int f = chosen[t - 1][j][draw.mode];
          value[cell] = obs.faces[f].normal.dot(c - path[t]) + obs.extent(f);
        }
      }
    }
  });

  std::vector<std::size_t> cell_hits(cells, 0);
  std::vector<double> amounts;
  for (std::size_t i = 0; i < n; ++i) {
    double worst = 0.0;
    int wt = 0, wj = 0;
    for (std::size_t c = 0; c < cells; ++c) {
      const double d = depth[i * cells + c];
      if (d > 0.0) {
        ++cell_hits[c];
        if (d > worst) {
          worst = d;
          wt = static_cast<int>(c / nobs) + 1;
          wj = static_cast<int>(c % nobs);
        }
      }
    }
    if (worst > 0.0) {
      amounts.push_back(worst);
      const ViolatingSample v{i, worst, wt, wj, mode[i * nobs + wj]};
      if (!rep.worst || worst > rep.worst->depth) rep.worst = v;
      if (opt.keep_depths) rep.depths.push_back(v);
    }
  }
  rep.violations = amounts.size();
  rep.vrate = static_cast<double>(rep.violations) / static_cast<double>(n);
  rep.e_vamt_m = amounts.empty() ? 0.0 : detail::pairwise_sum(amounts.data(), amounts.size()) / amounts.size();
  for (int t = 1; t <= horizon; ++t)
    for (int j = 0; j < nobs; ++j) {
      const std::size_t c = static_cast<std::size_t>(t - 1) * nobs + j;
      rep.per_constraint.push_back({t, j, static_cast<double>(cell_hits[c]) / static_cast<double>(n)});
    }

  // Per-mode CVaR at the mode's share of the risk budget.
  const double level = nobs > 0 ? pb.risk.epsilon / (static_cast<double>(horizon) * nobs) : 0.0;
  bool short_tail = false;
  for (int t = 1; t <= horizon; ++t)
    for (int j = 0; j < nobs; ++j) {
      const auto& obs = pb.obstacles[j];
      for (int k = 0; k < obs.num_modes(); ++k) {
        ModeCvar mc;
        mc.t = t;
        mc.j = j;
        mc.k = k;
        mc.face = chosen[t - 1][j][k];
        mc.level = level;
        std::vector<double> vals;
        for (std::size_t i = 0; i < n; ++i) {
          if (mode[i * nobs + j] == k) vals.push_back(value[i * cells + static_cast<std::size_t>(t - 1) * nobs + j]);
        }
        mc.samples = vals.size();
        if (static_cast<double>(vals.size()) >= std::ceil(1.0 / level - 1e-9)) {
          mc.empirical = empirical_cvar(std::move(vals), level);
        } else {
          short_tail = true;
        }
        const Vec2 a = obs.faces[mc.face].normal;
        const double mean = a.dot(obs.modes[k].mean[t - 1] - path[t]) + obs.extent(mc.face);
        const double sd = std::sqrt(std::max(0.0, a.dot(obs.modes[k].covariance[t - 1] * a)));
        mc.analytic = reform::gamma_cvar(std::min(level, 0.5)) * sd + mean;
        rep.cvar.push_back(mc);
      }
    }
  if (short_tail) rep.warnings.push_back("some modes had too few draws for an empirical CVaR");
  return rep;
}

inline ValidationReport validate(const scene::PlanProblem& pb, const scene::Trajectory& tr,
                                 const ValidateOptions& opt = {}, const FaceChoice* faces = nullptr) {
  return validate(pb, scene::positions(pb.dynamics, tr), opt, faces);
}

inline nlohmann::json report_json(const ValidationReport& r) {
  using nlohmann::json;
  json j;
  j["n_samples"] = r.n_samples;
  j["seed"] = r.seed;
  j["violations"] = r.violations;
  j["vrate"] = r.vrate;
  j["e_vamt_m"] = r.e_vamt_m;
  json pc = json::array();
  for (const auto& c : r.per_constraint) pc.push_back({{"t", c.t}, {"obstacle", c.j}, {"rate", c.rate}});
  j["per_constraint"] = pc;
  json cv = json::array();
  for (const auto& c : r.cvar) {
    cv.push_back({{"t", c.t},
                  {"obstacle", c.j},
                  {"mode", c.k},
                  {"face", c.face},
                  {"level", c.level},
                  {"samples", c.samples},
                  {"empirical", c.empirical ? json(*c.empirical) : json(nullptr)},
                  {"analytic", c.analytic}});
  }
  j["cvar"] = cv;
  if (r.worst) {
    j["worst_sample"] = {{"index", r.worst->index},
                         {"depth", r.worst->depth},
                         {"t", r.worst->t},
                         {"obstacle", r.worst->j},
                         {"mode", r.worst->mode}};
  }
  j["warnings"] = r.warnings;
  return j;
}

/// One row per violating sample: index, worst depth and where it happened.
inline std::string depths_csv(const ValidationReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "sample,depth,t,obstacle,mode\n";
  for (const auto& v : r.depths) os << v.index << ',' << v.depth << ',' << v.t << ',' << v.j << ',' << v.mode << '\n';
  return os.str();
}

/// Obstacle centers of sample `index` (the draw behind a worst case).
inline std::vector<scene::ObstacleDraw> redraw(const scene::PlanProblem& pb, std::uint64_t seed, std::size_t index) {
  std::vector<scene::ObstacleDraw> out;
  for (std::size_t j = 0; j < pb.obstacles.size(); ++j) {
    SubstreamRng rng(seed, index, scene::kValidationStream + j);
    out.push_back(scene::ObstacleSampler(pb.obstacles[j]).draw(rng));
  }
  return out;
}

}  // namespace gmmplan::validate
