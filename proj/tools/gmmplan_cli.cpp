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

// gmmplan command line: plan, validate, table, genscene, bench.
//
// Exit codes: 0 ok, 1 validation failed, 2 infeasible, 3 numerical trouble,
// 4 usage or input error.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "gmmplan/mip.hpp"
#include "gmmplan/scene.hpp"
#include "gmmplan/validate.hpp"
#include "json.hpp"

namespace {

using namespace gmmplan;
using nlohmann::json;

constexpr const char* kVersion = "0.1.0";

enum Exit { kOk = 0, kValidationFailed = 1, kInfeasible = 2, kNumerical = 3, kUsage = 4 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

// Everything that determines an output. Timestamps only with --timing, so
// equal manifests give byte-identical files.
struct Manifest {
  std::string command, scene, method;
  std::uint64_t seed = 0;
  json flags = json::object();
  std::string scene_text;
  bool timing = false;
  std::string started;

  json to_json() const {
    json j = {{"command", command},     {"scene", scene},
              {"method", method},       {"seed", seed},
              {"tool_version", kVersion}, {"flags", flags},
              {"config_hash", hex(fnv1a(command + "\n" + method + "\n" + flags.dump() + "\n" + scene_text))}};
    if (timing) j["timestamps"] = {{"started", started}, {"finished", utc_now()}};
    return j;
  }
};

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path);
  out << text;
}

scene::PlanProblem load(const std::string& path) {
  try {
    return scene::load_scene(path);
  } catch (const scene::SceneError& e) {
    throw UsageError(path + ": " + e.what());
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

// Shared planning flags.
struct PlanFlags {
  std::string scene, method = "mta", out = "plan", mean_bound = "projected";
  std::optional<std::uint64_t> seed;
  std::optional<int> samples;
  std::optional<double> big_m, beta, epsilon;
  double gap = 1e-6;
  long node_limit = 50000;
  bool unimodal = false, timing = false;
  unsigned threads = 1;

  void add(CLI::App* app, bool with_method) {
    app->add_option("--scene", scene, "scene JSON file")->required();
    if (with_method) {
      app->add_option("--method", method, "mta, mra, cvar or cvarr")
          ->check(CLI::IsMember({"mta", "mra", "cvar", "cvarr"}));
    }
    app->add_option("--seed", seed, "seed for moment estimation (overrides the scene)");
    app->add_option("--gap", gap, "absolute optimality gap")->check(CLI::NonNegativeNumber);
    app->add_option("--node-limit", node_limit, "branch-and-bound node limit")->check(CLI::PositiveNumber);
    app->add_option("--big-m", big_m, "Big-M constant (skips certification)")->check(CLI::PositiveNumber);
    app->add_option("--beta", beta, "override the scene's beta");
    app->add_option("--epsilon", epsilon, "override the scene's epsilon");
    app->add_option("--mean-bound", mean_bound, "projected or whole-vector")
        ->check(CLI::IsMember({"projected", "whole-vector"}));
    app->add_flag("--unimodal", unimodal, "collapse every obstacle to one Gaussian");
    app->add_flag("--timing", timing, "record wall time and timestamps");
    app->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  }

  json to_json() const {
    json j = {{"gap", gap}, {"node_limit", node_limit}, {"mean_bound", mean_bound}, {"unimodal", unimodal}};
    if (samples) j["samples"] = *samples;
    if (big_m) j["big_m"] = *big_m;
    if (beta) j["beta"] = *beta;
    if (epsilon) j["epsilon"] = *epsilon;
    return j;
  }
};

void apply_overrides(scene::PlanProblem& pb, const PlanFlags& f, bool plan_samples) {
  if (f.epsilon) {
    if (!(*f.epsilon > 0.0 && *f.epsilon < 0.5)) throw UsageError("--epsilon must lie in (0,0.5)");
    std::cerr << "warning: epsilon " << pb.risk.epsilon << " overridden by " << *f.epsilon << "\n";
    pb.risk.epsilon = *f.epsilon;
  }
  if (f.beta) {
    if (!(*f.beta > 0.0 && *f.beta < 1.0)) throw UsageError("--beta must lie in (0,1)");
    std::cerr << "warning: beta " << pb.risk.beta << " overridden by " << *f.beta << "\n";
    pb.risk.beta = *f.beta;
  }
  if (f.big_m) pb.big_m = *f.big_m;
  if (f.seed) pb.sampling.seed = *f.seed;
  if (plan_samples && f.samples) {
    if (*f.samples < 1) throw UsageError("--samples must be positive");
    pb.sampling.n_samples = *f.samples;
  }
}

struct PlanOutcome {
  mip::MisocpModel model;
  mip::BnbReport report;
};

PlanOutcome run_plan(const scene::PlanProblem& pb, mip::Method method, const PlanFlags& f) {
  mip::BuildOptions o;
  o.method = method;
  o.collapse_modes = f.unimodal;
  o.mean_bound = f.mean_bound == "projected" ? reform::MeanBound::kProjected : reform::MeanBound::kWholeVector;
  PlanOutcome out;
  try {
    out.model = mip::build(pb, o);
  } catch (const InsufficientSamplesError& e) {
    throw UsageError(e.what());
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  } catch (const std::domain_error& e) {
    throw UsageError(e.what());
  }
  mip::BnbOptions bo;
  bo.gap = f.gap;
  bo.node_limit = f.node_limit;
  out.report = mip::solve_bnb(out.model, bo);
  return out;
}

int exit_code(const mip::BnbReport& r) {
  switch (r.status) {
    case mip::BnbStatus::kOptimal: return kOk;
    case mip::BnbStatus::kInfeasible: return kInfeasible;
    case mip::BnbStatus::kNodeLimit: return r.has_incumbent ? kOk : kNumerical;
    case mip::BnbStatus::kNumericalFailure: return kNumerical;
  }
  return kNumerical;
}

std::string csv_with_manifest(const Manifest& m, const std::string& body) {
  return "# " + m.to_json().dump() + "\n" + body;
}

// --- commands ----------------------------------------------------------------

int cmd_plan(const PlanFlags& f) {
  auto pb = load(f.scene);
  apply_overrides(pb, f, true);
  const auto method = mip::parse_method(f.method);
  Manifest man{"plan", f.scene, f.method, pb.sampling.seed, f.to_json(), scene::scene_text(pb), f.timing, utc_now()};
  const auto res = run_plan(pb, method, f);
  json rep = mip::report_json(res.model, res.report, f.timing);
  rep["manifest"] = man.to_json();
  write_file(f.out + ".json", rep.dump(2) + "\n");
  if (res.report.has_incumbent) {
    write_file(f.out + ".csv", csv_with_manifest(man, scene::trajectory_csv(pb.dynamics, res.report.trajectory)));
  }
  std::cout << f.method << ": " << mip::to_string(res.report.status);
  if (res.report.has_incumbent) std::cout << " cost " << std::setprecision(10) << res.report.cost;
  std::cout << " nodes " << res.report.nodes << "\n";
  if (res.report.status == mip::BnbStatus::kNodeLimit) std::cerr << "warning: node limit reached, gap not proven\n";
  return exit_code(res.report);
}

struct ValidateFlags {
  std::string scene, traj, out, depths;
  std::size_t samples = 100000;
  std::uint64_t seed = 0;
  std::optional<double> epsilon;
  unsigned threads = 1;
  bool timing = false;
};

int cmd_validate(const ValidateFlags& f) {
  auto pb = load(f.scene);
  if (f.epsilon) {
    std::cerr << "warning: epsilon " << pb.risk.epsilon << " overridden by " << *f.epsilon << "\n";
    pb.risk.epsilon = *f.epsilon;
  }
  std::ifstream in(f.traj);
  if (!in) throw UsageError("cannot read " + f.traj);
  std::vector<scene::Vec2> path;
  try {
    path = scene::read_positions_csv(in);
  } catch (const std::exception& e) {
    throw UsageError(f.traj + ": " + e.what());
  }
  validate::ValidateOptions o;
  o.samples = f.samples;
  o.seed = f.seed;
  o.threads = f.threads;
  o.keep_depths = !f.depths.empty();
  validate::ValidationReport r;
  try {
    r = validate::validate(pb, path, o);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  json flags = {{"samples", f.samples}, {"traj", f.traj}};
  if (f.epsilon) flags["epsilon"] = *f.epsilon;
  Manifest man{"validate", f.scene, "", f.seed, flags, scene::scene_text(pb), f.timing, utc_now()};
  json j = validate::report_json(r);
  j["epsilon"] = pb.risk.epsilon;
  j["manifest"] = man.to_json();
  if (!f.out.empty()) write_file(f.out, j.dump(2) + "\n");
  if (!f.depths.empty()) write_file(f.depths, csv_with_manifest(man, validate::depths_csv(r)));
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << std::setprecision(6) << "vrate " << r.vrate << " (" << r.violations << "/" << r.n_samples
            << ") e_vamt_m " << r.e_vamt_m << " epsilon " << pb.risk.epsilon << "\n";
  return r.vrate < pb.risk.epsilon ? kOk : kValidationFailed;
}

struct TableFlags {
  PlanFlags plan;
  std::size_t val_samples = 100000;
  std::uint64_t val_seed = 0;
  std::string format = "md", out, worst_out;
};

int cmd_table(TableFlags f) {
  auto pb = load(f.plan.scene);
  apply_overrides(pb, f.plan, false);
  struct Row {
    std::string name, cost = "inf", vrate = "-", vamt = "-", status;
    std::optional<validate::ViolatingSample> worst;
    std::vector<scene::ObstacleDraw> draws;
  };
  std::vector<Row> rows;
  auto fmt = [](double v, int prec) {
    std::ostringstream os;
    os << std::setprecision(prec) << v;
    return os.str();
  };
  std::vector<bool> variants{false};
  if (f.plan.unimodal) variants.push_back(true);
  for (bool uni : variants) {
    for (auto method : {mip::Method::kMta, mip::Method::kMra, mip::Method::kCvar, mip::Method::kCvarr}) {
      Row row;
      row.name = std::string(mip::to_string(method)) + (uni ? " (unimodal)" : "");
      PlanFlags pf = f.plan;
      pf.unimodal = uni;
      if (mip::is_robust(method) && pb.sampling.mode != scene::SamplingMode::kSamples) {
        row.status = "needs sampled moments";
        row.cost = "n/a";
        rows.push_back(row);
        continue;
      }
      const auto res = run_plan(pb, method, pf);
      row.status = mip::to_string(res.report.status);
      if (res.report.has_incumbent) {
        row.cost = fmt(res.report.cost, 6);
        validate::ValidateOptions vo;
        vo.samples = f.val_samples;
        vo.seed = f.val_seed;
        vo.threads = f.plan.threads;
        const auto v = validate::validate(pb, res.report.trajectory, vo);
        row.vrate = fmt(100.0 * v.vrate, 4) + "%";
        row.vamt = fmt(v.e_vamt_m, 4);
        row.worst = v.worst;
        if (v.worst) row.draws = validate::redraw(pb, vo.seed, v.worst->index);
      }
      rows.push_back(row);
    }
  }
  std::ostringstream os;
  if (f.format == "csv") {
    os << "method,cost,vrate,e_vamt_m,status\n";
    for (const auto& r : rows) os << r.name << ',' << r.cost << ',' << r.vrate << ',' << r.vamt << ',' << r.status << '\n';
  } else {
    os << "| Method | Cost | VRate | E{VAmt} (m) | Status |\n|---|---|---|---|---|\n";
    for (const auto& r : rows)
      os << "| " << r.name << " | " << r.cost << " | " << r.vrate << " | " << r.vamt << " | " << r.status << " |\n";
  }
  Manifest man{"table", f.plan.scene, "all", f.val_seed, f.plan.to_json(), scene::scene_text(pb), f.plan.timing,
               utc_now()};
  man.flags["validation_samples"] = f.val_samples;
  if (f.out.empty()) {
    std::cout << os.str();
  } else {
    const std::string head = f.format == "csv" ? "# " : "<!-- ";
    const std::string tail = f.format == "csv" ? "\n" : " -->\n";
    write_file(f.out, head + man.to_json().dump() + tail + os.str());
  }
  if (!f.worst_out.empty()) {
    // Worst violating draw per method: the obstacle centers at every step.
    std::ostringstream w;
    w.precision(17);
    w << "method,sample,depth,t_worst,obstacle,mode,t,cx,cy\n";
    for (const auto& r : rows) {
      if (!r.worst) continue;
      for (std::size_t j = 0; j < r.draws.size(); ++j)
        for (std::size_t t = 0; t < r.draws[j].centers.size(); ++t)
          w << r.name << ',' << r.worst->index << ',' << r.worst->depth << ',' << r.worst->t << ',' << j << ','
            << r.draws[j].mode << ',' << t + 1 << ',' << r.draws[j].centers[t].x() << ','
            << r.draws[j].centers[t].y() << '\n';
    }
    write_file(f.worst_out, csv_with_manifest(man, w.str()));
  }
  return kOk;
}

struct GenFlags {
  std::string tpl, out;
  std::uint64_t seed = 0;
  std::vector<double> origin;
};

int cmd_genscene(const GenFlags& f) {
  scene::PlanProblem pb;
  try {
    pb = scene::generate_scene(f.tpl, f.seed);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  json flags = json::object();
  if (!f.origin.empty()) {
    if (f.origin.size() != 2) throw UsageError("--origin takes two numbers");
    pb = scene::translate(pb, scene::Vec2(f.origin[0], f.origin[1]));
    flags["origin"] = f.origin;
  }
  Manifest man{"genscene", "", f.tpl, f.seed, flags, scene::scene_text(pb), false, ""};
  json j = scene::to_json(pb);
  j["manifest"] = man.to_json();
  const std::string text = j.dump(2) + "\n";
  if (f.out.empty()) {
    std::cout << text;
  } else {
    write_file(f.out, text);
  }
  return kOk;
}

struct BenchFlags {
  std::string tpl = "intersection_3mode";
  int seeds = 5;
  std::uint64_t first_seed = 1;
  double limit_s = 10.0;
};

// Plans every method on generated scenes and reports wall time per plan.
int cmd_bench(const BenchFlags& f) {
  PlanFlags pf;
  double worst_ms = 0.0;
  int failures = 0;
  std::cout << "seed,method,status,cost,nodes,wall_ms\n";
  for (int s = 0; s < f.seeds; ++s) {
    const auto seed = f.first_seed + static_cast<std::uint64_t>(s);
    const auto pb = scene::generate_scene(f.tpl, seed);
    for (auto method : {mip::Method::kMta, mip::Method::kMra, mip::Method::kCvar, mip::Method::kCvarr}) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto res = run_plan(pb, method, pf);
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      worst_ms = std::max(worst_ms, ms);
      if (res.report.status != mip::BnbStatus::kOptimal) ++failures;
      std::cout << seed << ',' << mip::to_string(method) << ',' << mip::to_string(res.report.status) << ','
                << std::setprecision(10) << res.report.cost << ',' << res.report.nodes << ',' << std::setprecision(6)
                << ms << '\n';
    }
  }
  std::cerr << "slowest plan " << worst_ms << " ms, " << failures << " non-optimal\n";
  if (failures > 0) return kNumerical;
  return worst_ms <= 1000.0 * f.limit_s ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Chance-constrained motion planning among Gaussian-mixture obstacles"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  PlanFlags plan;
  auto* p = app.add_subcommand("plan", "plan a scene, write <out>.csv and <out>.json");
  plan.add(p, true);
  p->add_option("--out", plan.out, "output prefix");
  p->add_option("--samples", plan.samples, "samples for moment estimation (overrides the scene)");

  ValidateFlags val;
  auto* v = app.add_subcommand("validate", "Monte Carlo check of a trajectory CSV");
  v->add_option("--scene", val.scene, "scene JSON file")->required();
  v->add_option("--traj", val.traj, "trajectory CSV")->required();
  v->add_option("--samples", val.samples, "fresh obstacle draws")->check(CLI::PositiveNumber);
  v->add_option("--seed", val.seed, "validation seed");
  v->add_option("--out", val.out, "report JSON");
  v->add_option("--depths", val.depths, "CSV of violating samples");
  v->add_option("--epsilon", val.epsilon, "override the scene's epsilon");
  v->add_option("--threads", val.threads, "worker threads")->check(CLI::PositiveNumber);
  v->add_flag("--timing", val.timing, "record timestamps");

  TableFlags table;
  auto* t = app.add_subcommand("table", "plan with every method and validate each plan");
  table.plan.add(t, false);
  t->add_option("--samples", table.val_samples, "validation draws")->check(CLI::PositiveNumber);
  t->add_option("--validation-seed", table.val_seed, "validation seed");
  t->add_option("--format", table.format, "md or csv")->check(CLI::IsMember({"md", "csv"}));
  t->add_option("--out", table.out, "table file (default stdout)");
  t->add_option("--worst-out", table.worst_out, "CSV of the worst violating draw per method");

  GenFlags gen;
  auto* g = app.add_subcommand("genscene", "write a synthetic intersection scene");
  g->add_option("--template", gen.tpl, "intersection_3mode or intersection_2mode")->required();
  g->add_option("--seed", gen.seed, "generator seed");
  g->add_option("--out", gen.out, "scene file (default stdout)");
  g->add_option("--origin", gen.origin, "shift the scene by x y (map coordinates)")->expected(2);

  BenchFlags bench;
  auto* b = app.add_subcommand("bench", "time all four methods on generated scenes");
  b->add_option("--template", bench.tpl, "scene template");
  b->add_option("--seeds", bench.seeds, "number of scenes")->check(CLI::PositiveNumber);
  b->add_option("--first-seed", bench.first_seed, "first scene seed");
  b->add_option("--limit", bench.limit_s, "per-plan time limit in seconds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*p) return cmd_plan(plan);
    if (*v) return cmd_validate(val);
    if (*t) return cmd_table(table);
    if (*g) return cmd_genscene(gen);
    if (*b) return cmd_bench(bench);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  }
  return kUsage;
}
