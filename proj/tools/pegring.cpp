#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>

#include "CLI11.hpp"
#include "plots.hpp"
#include "pegring/bridge/bridge.hpp"
#include "pegring/executor/executor.hpp"

using namespace pegring;
namespace fs = std::filesystem;

namespace {

// exit codes
constexpr int kGoal = 0;
constexpr int kOther = 1;
constexpr int kConfig = 2;
constexpr int kFailed = 3;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

world::Scenario scenario_from(const std::string& arg) {
  if (auto s = world::builtin_scenario(arg)) return *s;
  if (!fs::exists(arg)) {
    std::string names;
    for (const auto& n : world::builtin_names()) names += " " + n;
    throw ConfigError("no scenario file '" + arg + "' and no built-in of that name (built-ins:" + names + ")");
  }
  return world::load_scenario(arg);
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

struct RunArgs {
  std::string scenario = "A";
  std::string mode = "per-step";
  bool optimize = false;
  std::string perception = "gt";
  std::uint64_t seed = 0;
  int bridge_port = -1;
  double bridge_wait = 30.0;
  double speed = 1.0;
  std::string models;
  std::string out;
  int replan_budget = 10;
};

int cmd_run(const RunArgs& a) {
  const auto scenario = scenario_from(a.scenario);
  executor::ExecutorConfig cfg;
  const auto mode = planner::parse_mode(a.mode);
  const auto perception = executor::parse_perception(a.perception);
  if (!mode) throw ConfigError("--mode must be per-step or per-arm");
  if (!perception) throw ConfigError("--perception must be gt or synth");
  cfg.mode = *mode;
  cfg.perception = *perception;
  cfg.optimize = a.optimize;
  cfg.seed = a.seed;
  cfg.replan_budget = a.replan_budget;
  cfg.speed = a.speed;
  const auto models = a.models.empty() ? executor::learn_default_models() : executor::load_models(a.models);
  const fs::path out = a.out.empty() ? fs::path("out") / scenario.name : fs::path(a.out);
  fs::create_directories(out);

  executor::Executor ex(scenario, cfg, models);
  std::ofstream trace(out / "trace.jsonl");
  ex.set_trace(&trace);
  std::unique_ptr<bridge::BridgeServer> server;
  if (a.bridge_port >= 0) {
    server = std::make_unique<bridge::BridgeServer>(static_cast<std::uint16_t>(a.bridge_port), true);
    std::cout << "bridge listening on 127.0.0.1:" << server->port() << std::endl;
    if (a.bridge_wait > 0 &&
        !server->wait_for_client(std::chrono::milliseconds(static_cast<long>(a.bridge_wait * 1000))))
      std::cout << "no supervisor connected, running anyway" << std::endl;
    ex.set_supervisor(server.get());
  }

  const auto result = ex.run();
  const auto& r = result.report;
  if (server) server->flush(std::chrono::milliseconds(2000));

  write_file(out / "report.json", executor::report_to_json(r, true) + "\n");
  {
    std::ofstream f(out / "failures.jsonl");
    for (const auto& e : r.failures) f << awareness::to_json_line(e) << '\n';
  }
  executor::save_trajectory_csv(result.trajectory, out / "trajectory.csv");
  write_file(out / "trajectory.svg", plots::trajectory_svg(result.trajectory, world::initial_state(scenario)));
  write_file(out / "plan.svg", plots::gantt_svg(r));

  std::cout << "scenario " << r.scenario << " (" << planner::to_string(r.mode) << (r.optimize ? ", optimized" : "")
            << ", " << executor::to_string(r.perception) << ")\n";
  for (std::size_t k = 0; k < r.plans.size(); ++k) {
    const auto& p = r.plans[k];
    std::cout << "plan " << k << " at " << p.start_time << " s (" << p.trigger << "), horizon " << p.plan.horizon
              << ", " << std::fixed << std::setprecision(1) << p.planning_wall_ms << " ms\n"
              << std::defaultfloat << std::setprecision(6) << planner::format_plan(p.plan);
  }
  for (const auto& f : r.failures) std::cout << "failure @" << f.time << " s: " << f.explanation << '\n';
  std::cout << "status " << executor::to_string(r.status) << (r.status_reason.empty() ? "" : " (" + r.status_reason + ")")
            << ", goal " << (r.goal_satisfied ? "satisfied" : "not satisfied") << ", " << r.total_sim_time
            << " s sim time, " << r.replans << " replan(s), trace " << std::hex << std::setw(16) << std::setfill('0')
            << r.trace_hash << std::dec << std::setfill(' ') << '\n';
  std::cout << "artifacts in " << out.string() << '\n';
  if (r.goal_satisfied) return kGoal;
  return r.status == executor::RunStatus::failed_permanently ? kFailed : kOther;
}

int cmd_learn(const std::string& demos, const std::string& gesture, const std::string& out) {
  if (!executor::parse_gesture(gesture)) throw ConfigError("--gesture must be move_ring, move_peg or move_center");
  std::vector<fs::path> files;
  if (fs::is_directory(demos)) {
    for (const auto& e : fs::directory_iterator(demos))
      if (e.path().extension() == ".csv") files.push_back(e.path());
  } else if (fs::exists(demos)) {
    files.push_back(demos);
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("no demo CSV files in " + demos);
  std::vector<dmp::Demo> set;
  for (const auto& f : files) {
    try {
      set.push_back(dmp::load_demo_csv(f));
    } catch (const dmp::DmpError& e) {
      throw ConfigError(e.what());
    }
  }
  dmp::DmpModel model;
  try {
    model = dmp::learn(set);
  } catch (const dmp::DmpError& e) {
    throw ConfigError(std::string("learning failed: ") + e.what());
  }
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  dmp::save_model(model, out);
  for (std::size_t k = 0; k < files.size(); ++k)
    std::cout << files[k].filename().string() << "  replay error " << std::scientific << std::setprecision(3)
              << dmp::replay_error(model, set[k]) << " m\n";
  std::cout << std::defaultfloat << "model for " << gesture << " from " << files.size() << " demo(s) -> " << out << '\n';
  return kGoal;
}

int cmd_gen_demos(const std::string& gesture, const executor::DemoConfig& cfg, const std::string& out) {
  std::vector<executor::Gesture> which;
  if (gesture == "all") {
    which.assign(std::begin(executor::kGestures), std::end(executor::kGestures));
  } else if (auto g = executor::parse_gesture(gesture)) {
    which.push_back(*g);
  } else {
    throw ConfigError("--gesture must be move_ring, move_peg, move_center or all");
  }
  for (auto g : which) {
    const fs::path dir = fs::path(out) / std::string(executor::to_string(g));
    fs::create_directories(dir);
    const auto demos = executor::generate_demos(g, cfg);
    for (std::size_t k = 0; k < demos.size(); ++k) {
      std::ostringstream name;
      name << "demo_" << std::setw(2) << std::setfill('0') << k << ".csv";
      dmp::save_demo_csv(demos[k], dir / name.str());
    }
    std::cout << demos.size() << " demo(s) -> " << dir.string() << '\n';
  }
  return kGoal;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// planning wall time from the scenario's initial scene: externals, grounding, search
double time_planning(const world::Scenario& sc, planner::AggregateMode mode, bool optimize) {
  const auto scene = world::initial_state(sc);
  const auto t0 = std::chrono::steady_clock::now();
  const auto ext = awareness::compute_externals(awareness::observe(scene), scene.geometry);
  const auto initial = planner::ground_externals(ext);
  const auto plan = optimize ? planner::solve_optimized(initial, mode) : planner::solve(initial, mode);
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!plan) throw std::runtime_error("no plan for " + sc.name);
  return s;
}

int cmd_bench(int reps, std::uint64_t seed, const std::string& mode_arg) {
  const auto mode = planner::parse_mode(mode_arg);
  if (!mode) throw ConfigError("--mode must be per-step or per-arm");
  if (reps < 1) throw ConfigError("--reps must be >= 1");
  struct Row {
    std::string label, scenario;
    bool optimized;
  };
  const Row rows[] = {{"Scenario A (optimization)", "A", true},
                      {"Scenario B", "B", false},
                      {"Scenario C", "C", false},
                      {"Complete (optimization)", "complete", true}};
  std::cout << "planning time, median of " << reps << " run(s), " << planner::to_string(*mode) << ", seed " << seed
            << "\n\n";
  std::cout << "| " << std::left << std::setw(27) << "" << " | " << std::setw(19) << "Planning time [s]" << " |\n";
  std::cout << "|" << std::string(29, '-') << "|" << std::string(21, '-') << "|\n";
  for (const auto& row : rows) {
    const auto sc = *world::builtin_scenario(row.scenario);
    std::vector<double> plain, opt;
    for (int k = 0; k < reps; ++k) {
      plain.push_back(time_planning(sc, *mode, false));
      if (row.optimized) opt.push_back(time_planning(sc, *mode, true));
    }
    std::ostringstream cell;
    cell << std::fixed << std::setprecision(4) << median(plain);
    if (row.optimized) cell << " (" << median(opt) << ")";
    std::cout << "| " << std::setw(27) << row.label << " | " << std::setw(19) << cell.str() << " |\n";
  }
  std::cout << std::right;
  return kGoal;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Peg-and-ring task planning, execution and monitoring"};
  app.require_subcommand(1);

  RunArgs run;
  auto* r = app.add_subcommand("run", "run a scenario in the closed loop and write artifacts");
  r->add_option("--scenario", run.scenario, "built-in name (A, B, C, complete, empty) or scenario JSON file")
      ->capture_default_str();
  r->add_option("--mode", run.mode, "per-step or per-arm")->capture_default_str();
  r->add_flag("--optimize", run.optimize, "prefer the closest rings among minimal plans");
  r->add_option("--perception", run.perception, "gt (ground truth) or synth (rendered point clouds)")
      ->capture_default_str();
  r->add_option("--seed", run.seed, "seed for synthetic perception noise")->capture_default_str();
  r->add_option("--bridge-port", run.bridge_port, "serve the supervisor bridge on this port (0 = any free port)");
  r->add_option("--bridge-wait", run.bridge_wait, "seconds to wait for a supervisor before starting")
      ->capture_default_str();
  r->add_option("--speed", run.speed, "wall-clock pacing factor when the bridge is on")->capture_default_str();
  r->add_option("--models", run.models, "directory with <gesture>.json models (default: learn from synthetic demos)");
  r->add_option("--replan-budget", run.replan_budget, "replans allowed before giving up")->capture_default_str();
  r->add_option("--out", run.out, "artifact directory (default out/<scenario>)");

  std::string demos, gesture = "move_ring", model_out;
  auto* l = app.add_subcommand("learn", "learn one gesture model from demo CSV files");
  l->add_option("--demos", demos, "directory of demo CSVs (t,x,y,z,qw,qx,qy,qz) or a single file")->required();
  l->add_option("--gesture", gesture, "move_ring, move_peg or move_center")->capture_default_str();
  l->add_option("--out", model_out, "model JSON path")->required();

  executor::DemoConfig demo_cfg;
  std::string demo_gesture = "all", demo_out = "demos";
  auto* g = app.add_subcommand("gen-demos", "write synthetic demonstrations as CSV files");
  g->add_option("--gesture", demo_gesture, "move_ring, move_peg, move_center or all")->capture_default_str();
  g->add_option("--count", demo_cfg.count, "demos per gesture")->capture_default_str();
  g->add_option("--duration", demo_cfg.duration, "seconds per demo")->capture_default_str();
  g->add_option("--rate", demo_cfg.rate, "samples per second")->capture_default_str();
  g->add_option("--noise", demo_cfg.noise, "per-sample jitter, m")->capture_default_str();
  g->add_option("--seed", demo_cfg.seed, "random seed")->capture_default_str();
  g->add_option("--out", demo_out, "output directory (one subdirectory per gesture)")->capture_default_str();

  int reps = 10;
  std::uint64_t bench_seed = 0;
  std::string bench_mode = "per-step";
  auto* b = app.add_subcommand("bench", "median planning times for the scenarios and the worst case");
  b->add_option("--reps", reps, "repetitions per cell")->capture_default_str();
  b->add_option("--seed", bench_seed, "recorded with the table (planning itself is deterministic)")->required();
  b->add_option("--mode", bench_mode, "per-step or per-arm")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*r) return cmd_run(run);
    if (*l) return cmd_learn(demos, gesture, model_out);
    if (*g) return cmd_gen_demos(demo_gesture, demo_cfg, demo_out);
    if (*b) return cmd_bench(reps, bench_seed, bench_mode);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  } catch (const executor::ExecutorError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  } catch (const world::WorldError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.kind == world::WorldError::Kind::scenario ? kConfig : kOther;
  } catch (const bridge::BridgeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
  return kOther;
}
