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

// Drives the gmmplan binary and checks exit codes and output files.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "gmmplan/scene.hpp"

namespace fs = std::filesystem;
using namespace gmmplan;

namespace {

fs::path work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "gmmplan_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string path(const std::string& name) { return (work_dir() / name).string(); }

int run(const std::string& args) {
  const std::string cmd = std::string(GMMPLAN_CLI) + " " + args + " > " + path("stdout.txt") + " 2> " + path("stderr.txt");
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_scene(const std::string& name, const scene::PlanProblem& pb) { scene::save_scene(pb, path(name)); }

void write_path(const std::string& name, const std::vector<scene::Vec2>& pts) {
  std::ofstream out(path(name));
  out << "t,px,py,vx,vy,ax,ay\n";
  for (std::size_t t = 0; t < pts.size(); ++t) out << t << ',' << pts[t].x() << ',' << pts[t].y() << ",0,0,0,0\n";
}

scene::PlanProblem empty_road() {
  scene::PlanProblem pb;
  pb.dynamics = scene::double_integrator(0.5, 4);
  pb.dynamics.x0 << 0, 0, 2, 0;
  pb.dynamics.state_bounds = {{-5, 40}, {-2, 2}, {0, 20}, {-2, 2}};
  pb.dynamics.input_bounds = {{-2, 2}, {-1, 1}};
  return pb;
}

}  // namespace

TEST(Cli, GensceneIsDeterministicAndLoads) {
  ASSERT_EQ(run("genscene --template intersection_3mode --seed 7 --out " + path("a.json")), 0);
  ASSERT_EQ(run("genscene --template intersection_3mode --seed 7 --out " + path("b.json")), 0);
  ASSERT_EQ(run("genscene --template intersection_3mode --seed 8 --out " + path("c.json")), 0);
  EXPECT_EQ(slurp(path("a.json")), slurp(path("b.json")));
  EXPECT_NE(slurp(path("a.json")), slurp(path("c.json")));
  const auto pb = scene::load_scene(path("a.json"));
  EXPECT_EQ(pb.obstacles[0].num_modes(), 3);
  EXPECT_EQ(run("genscene --template roundabout --seed 1"), 4);
}

TEST(Cli, PlanWritesReproducibleOutputs) {
  ASSERT_EQ(run("genscene --template intersection_2mode --seed 3 --out " + path("s.json")), 0);
  ASSERT_EQ(run("plan --scene " + path("s.json") + " --method mta --out " + path("p1")), 0);
  ASSERT_EQ(run("plan --scene " + path("s.json") + " --method mta --out " + path("p2")), 0);
  EXPECT_EQ(slurp(path("p1.csv")), slurp(path("p2.csv")));
  EXPECT_EQ(slurp(path("p1.json")), slurp(path("p2.json")));
  const auto rep = nlohmann::json::parse(slurp(path("p1.json")));
  EXPECT_EQ(rep["status"], "optimal");
  EXPECT_TRUE(std::isfinite(rep["cost"].get<double>()));
  EXPECT_FALSE(rep.contains("wall_ms"));
  EXPECT_EQ(rep["manifest"]["command"], "plan");
  const std::string csv = slurp(path("p1.csv"));
  EXPECT_NE(csv.find("\nt,px,py,vx,vy,ax,ay\n"), std::string::npos);
  // The planned trajectory passes validation.
  EXPECT_EQ(run("validate --scene " + path("s.json") + " --traj " + path("p1.csv") + " --samples 20000"), 0);
}

TEST(Cli, ObstacleFreeSceneDrivesStraight) {
  write_scene("free.json", empty_road());
  ASSERT_EQ(run("plan --scene " + path("free.json") + " --out " + path("free")), 0);
  std::ifstream in(path("free.csv"));
  const auto pts = scene::read_positions_csv(in);
  ASSERT_EQ(pts.size(), 5u);
  for (const auto& p : pts) EXPECT_NEAR(p.y(), 0.0, 1e-6);
  for (std::size_t t = 1; t < pts.size(); ++t) EXPECT_GT(pts[t].x(), pts[t - 1].x());
}

TEST(Cli, RobustMethodsOnExactScenesAreUsageErrors) {
  auto pb = empty_road();
  pb.obstacles = scene::generate_scene("intersection_3mode", 1).obstacles;
  for (auto& o : pb.obstacles)
    for (auto& m : o.modes) {
      m.mean.resize(4);
      m.covariance.resize(4);
    }
  write_scene("exact.json", pb);
  EXPECT_EQ(run("plan --scene " + path("exact.json") + " --method mra --out " + path("x")), 4);
  EXPECT_NE(slurp(path("stderr.txt")).find("sample"), std::string::npos);
}

TEST(Cli, UnimodalCollapseIsInfeasible) {
  ASSERT_EQ(run("genscene --template intersection_3mode --seed 2 --out " + path("m.json")), 0);
  EXPECT_EQ(run("plan --scene " + path("m.json") + " --unimodal --out " + path("uni")), 2);
  EXPECT_EQ(nlohmann::json::parse(slurp(path("uni.json")))["status"], "infeasible");
}

TEST(Cli, ValidateExitCodes) {
  auto pb = empty_road();
  scene::ObstacleSpec o;
  o.faces = scene::rectangle(1.0, 1.0);
  scene::ObstacleMode m;
  for (int t = 0; t < 4; ++t) {
    m.mean.emplace_back(10.0, 0.0);
    m.covariance.push_back(0.01 * scene::Mat2::Identity());
  }
  o.modes = {m};
  pb.obstacles = {o};
  write_scene("v.json", pb);
  write_path("far.csv", {{0, 0}, {1, 0}, {2, 0}, {3, 0}, {4, 0}});
  write_path("hit.csv", {{0, 0}, {5, 0}, {10, 0}, {10, 0.2}, {10, 0}});
  EXPECT_EQ(run("validate --scene " + path("v.json") + " --traj " + path("far.csv") + " --out " + path("far.json")), 0);
  EXPECT_EQ(nlohmann::json::parse(slurp(path("far.json")))["vrate"], 0.0);
  EXPECT_EQ(run("validate --scene " + path("v.json") + " --traj " + path("hit.csv") + " --out " + path("hit.json") +
                " --depths " + path("hit_depths.csv")),
            1);
  EXPECT_NEAR(nlohmann::json::parse(slurp(path("hit.json")))["vrate"].get<double>(), 1.0, 1e-12);
  write_path("short.csv", {{0, 0}, {1, 0}});
  EXPECT_EQ(run("validate --scene " + path("v.json") + " --traj " + path("short.csv")), 4);
}

TEST(Cli, TableListsEveryMethod) {
  ASSERT_EQ(run("genscene --template intersection_3mode --seed 5 --out " + path("t.json")), 0);
  ASSERT_EQ(run("table --scene " + path("t.json") + " --samples 5000 --format csv --unimodal --out " + path("t.csv") +
                " --worst-out " + path("worst.csv")),
            0);
  const std::string table = slurp(path("t.csv"));
  for (const char* m : {"\nmta,", "\nmra,", "\ncvar,", "\ncvarr,", "\nmta (unimodal),inf"}) {
    EXPECT_NE(table.find(m), std::string::npos) << m;
  }
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run("plan --scene " + path("missing.json")), 4);
  EXPECT_EQ(run("plan"), 4);
  EXPECT_EQ(run("frobnicate"), 4);
  EXPECT_EQ(run("--version"), 0);
}
