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

// Small planning instances (at most 12 binaries) for checking the
// branch-and-bound against exhaustive enumeration.

#include <random>

#include "gmmplan/mip.hpp"

namespace gmmplan::testing {

/// One square obstacle in front of a double integrator. T * K * 4 <= 12.
inline scene::PlanProblem small_plan_problem(unsigned seed, mip::Method* method = nullptr) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  static const int kShapes[5][2] = {{1, 1}, {1, 2}, {1, 3}, {2, 1}, {3, 1}};  // (T, K)
  const int horizon = kShapes[seed % 5][0], modes = kShapes[seed % 5][1];

  scene::PlanProblem pb;
  pb.dynamics = scene::double_integrator(1.0, horizon);
  pb.dynamics.x0 << 0.0, 0.0, 1.0 + u(rng), 0.0;
  pb.dynamics.state_bounds = {{-5, 10}, {-3, 3}, {-3, 3}, {-3, 3}};
  pb.dynamics.input_bounds = {{-3, 3}, {-3, 3}};

  scene::ObstacleSpec o;
  const double half = 0.2 + 0.3 * u(rng);
  o.faces = scene::rectangle(half, half);
  o.safety_margin = 0.1;
  double total = 0.0;
  for (int k = 0; k < modes; ++k) {
    scene::ObstacleMode m;
    m.weight = 0.5 + u(rng);
    total += m.weight;
    const scene::Vec2 c0(1.0 + 2.0 * u(rng), -0.8 + 1.6 * u(rng));
    const scene::Vec2 v(-0.5 + u(rng), -0.5 + u(rng));
    for (int t = 1; t <= horizon; ++t) {
      m.mean.push_back(c0 + 0.5 * t * v);
      const double s = 0.005 + 0.04 * u(rng), r = 0.8 * (u(rng) - 0.5) * s;
      scene::Mat2 cov;
      cov << s, r, r, s;
      m.covariance.push_back(cov);
    }
    o.modes.push_back(m);
  }
  for (auto& m : o.modes) m.weight /= total;
  pb.obstacles = {o};

  const mip::Method methods[4] = {mip::Method::kMta, mip::Method::kCvar, mip::Method::kMra, mip::Method::kCvarr};
  const mip::Method chosen = methods[(seed / 5) % 4];
  if (mip::is_robust(chosen)) {
    pb.sampling.mode = scene::SamplingMode::kSamples;
    pb.sampling.n_samples = 400;
    pb.sampling.seed = seed;
  }
  if (method) *method = chosen;
  return pb;
}

}  // namespace gmmplan::testing
