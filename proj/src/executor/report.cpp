#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "pegring/executor/executor.hpp"

namespace pegring::executor {

using json = nlohmann::json;

std::vector<double> RunReport::planning_wall_ms() const {
  std::vector<double> out;
  for (const auto& p : plans) out.push_back(p.planning_wall_ms);
  return out;
}

namespace {

std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

std::uint64_t unhex(const std::string& s) { return std::stoull(s, nullptr, 16); }

}  // namespace

std::string report_to_json(const RunReport& r, bool include_timing) {
  json failures = json::array();
  for (const auto& f : r.failures)
    failures.push_back({{"time", f.time}, {"action", f.action}, {"reason", awareness::to_string(f.reason)},
                        {"explanation", f.explanation}});
  json plans = json::array();
  for (const auto& p : r.plans) {
    json steps = json::array();
    for (const auto& s : p.plan.steps) steps.push_back({{"t", s.t}, {"action", planner::to_string(s.action)}});
    json j = {{"start_time", p.start_time}, {"trigger", p.trigger}, {"externals", p.externals},
              {"horizon", p.plan.horizon},  {"steps", steps}};
    if (include_timing) j["planning_wall_ms"] = p.planning_wall_ms;
    plans.push_back(j);
  }
  json executed = json::array();
  for (const auto& e : r.executed)
    executed.push_back({{"action", e.action}, {"plan", e.plan}, {"t", e.t}, {"start", e.start}, {"end", e.end},
                        {"outcome", e.outcome}});
  json j = {{"scenario", r.scenario},
            {"mode", planner::to_string(r.mode)},
            {"optimize", r.optimize},
            {"perception", to_string(r.perception)},
            {"seed", r.seed},
            {"status", to_string(r.status)},
            {"status_reason", r.status_reason},
            {"goal_satisfied", r.goal_satisfied},
            {"total_sim_time", r.total_sim_time},
            {"ticks", r.ticks},
            {"replans", r.replans},
            {"replan_budget", r.replan_budget},
            {"safety_violations", r.safety_violations},
            {"failures", failures},
            {"plans", plans},
            {"executed", executed},
            {"trace_hash", hex(r.trace_hash)}};
  return j.dump(2);
}

RunReport report_from_json(const std::string& text) {
  const json j = json::parse(text);
  RunReport r;
  r.scenario = j.at("scenario").get<std::string>();
  const auto mode = planner::parse_mode(j.at("mode").get<std::string>());
  const auto perception = parse_perception(j.at("perception").get<std::string>());
  if (!mode || !perception) throw ExecutorError(ExecutorError::Kind::config, "report: bad mode or perception");
  r.mode = *mode;
  r.perception = *perception;
  r.optimize = j.at("optimize").get<bool>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.status = j.at("status").get<std::string>() == "done" ? RunStatus::done : RunStatus::failed_permanently;
  r.status_reason = j.at("status_reason").get<std::string>();
  r.goal_satisfied = j.at("goal_satisfied").get<bool>();
  r.total_sim_time = j.at("total_sim_time").get<double>();
  r.ticks = j.at("ticks").get<std::uint64_t>();
  r.replans = j.at("replans").get<int>();
  r.replan_budget = j.at("replan_budget").get<int>();
  r.safety_violations = j.at("safety_violations").get<int>();
  for (const auto& f : j.at("failures")) {
    awareness::FailureEvent e;
    e.time = f.at("time").get<double>();
    e.action = f.at("action").get<std::string>();
    e.explanation = f.at("explanation").get<std::string>();
    const auto reason = f.at("reason").get<std::string>();
    bool known = false;
    for (int k = 0; k <= static_cast<int>(awareness::FailureReason::timeout); ++k)
      if (awareness::to_string(static_cast<awareness::FailureReason>(k)) == reason) {
        e.reason = static_cast<awareness::FailureReason>(k);
        known = true;
      }
    if (!known) throw ExecutorError(ExecutorError::Kind::config, "report: unknown failure reason " + reason);
    r.failures.push_back(e);
  }
  for (const auto& p : j.at("plans")) {
    PlanRecord rec;
    rec.start_time = p.at("start_time").get<double>();
    rec.trigger = p.at("trigger").get<std::string>();
    rec.externals = p.at("externals").get<std::vector<std::string>>();
    rec.plan.horizon = p.at("horizon").get<int>();
    rec.plan.mode = r.mode;
    for (const auto& s : p.at("steps"))
      rec.plan.steps.push_back({planner::parse_action(s.at("action").get<std::string>()), s.at("t").get<int>()});
    if (p.contains("planning_wall_ms")) rec.planning_wall_ms = p.at("planning_wall_ms").get<double>();
    r.plans.push_back(rec);
  }
  for (const auto& e : j.at("executed"))
    r.executed.push_back({e.at("action").get<std::string>(), e.at("plan").get<int>(), e.at("t").get<int>(),
                          e.at("start").get<double>(), e.at("end").get<double>(), e.at("outcome").get<std::string>()});
  r.trace_hash = unhex(j.at("trace_hash").get<std::string>());
  return r;
}

void save_trajectory_csv(const Trajectory& tr, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ExecutorError(ExecutorError::Kind::config, "cannot write " + path.string());
  out.precision(17);
  out << "t";
  for (const char* arm : {"psm1", "psm2"})
    for (const char* f : {"x", "y", "z", "qw", "qx", "qy", "qz", "closed"}) out << ',' << arm << '_' << f;
  out << '\n';
  for (const auto& row : tr) {
    out << row.t;
    for (int a = 0; a < 2; ++a) {
      const auto& p = row.arms[a];
      out << ',' << p.p.x() << ',' << p.p.y() << ',' << p.p.z() << ',' << p.q.w() << ',' << p.q.x() << ',' << p.q.y()
          << ',' << p.q.z() << ',' << (row.closed[a] ? 1 : 0);
    }
    out << '\n';
  }
}

Trajectory load_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ExecutorError(ExecutorError::Kind::config, "cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  Trajectory tr;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream f(line);
    TrajectoryRow row;
    f >> row.t;
    for (int a = 0; a < 2; ++a) {
      double x, y, z, w, qx, qy, qz;
      int closed;
      f >> x >> y >> z >> w >> qx >> qy >> qz >> closed;
      row.arms[a] = {Vector3d(x, y, z), Quaterniond(w, qx, qy, qz)};
      row.closed[a] = closed != 0;
    }
    if (!f) throw ExecutorError(ExecutorError::Kind::config, path.string() + ": bad row");
    tr.push_back(row);
  }
  return tr;
}

}  // namespace pegring::executor
