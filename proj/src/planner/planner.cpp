#include "pegring/planner/planner.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

#include "model.hpp"

namespace pegring::planner {

using detail::Problem;
using detail::Snapshot;

namespace {

std::string action_name(ActionKind k) {
  switch (k) {
    case ActionKind::move_ring:
    case ActionKind::move_peg:
    case ActionKind::move_center:
      return "move";
    case ActionKind::grasp:
      return "grasp";
    case ActionKind::release:
      return "release";
    case ActionKind::extract:
      return "extract";
  }
  return "?";
}

std::string action_tail(const GroundAction& a) {
  switch (a.kind) {
    case ActionKind::move_ring:
    case ActionKind::grasp:
    case ActionKind::extract:
      return "ring," + std::string(to_string(a.color));
    case ActionKind::move_peg:
      return "peg," + std::string(to_string(a.color));
    case ActionKind::move_center:
      return "center";
    case ActionKind::release:
      return "";
  }
  return "";
}

[[noreturn]] void bad_action(std::string_view text) {
  throw PlannerError(PlannerError::Kind::parse, "malformed action: " + std::string(text));
}

std::vector<std::string> split_args(std::string_view body) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : body) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != ' ') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

// Iterative deepening over the horizon. The transposition table records, per
// state, the largest remaining depth proven insufficient to reach the goal.
class DepthFirst {
 public:
  DepthFirst(const Problem& p, AggregateMode mode) : p_(p), mode_(mode) {}

  std::optional<std::vector<std::vector<GroundAction>>> run(const Snapshot& start, int cap) {
    const int lb = detail::lower_bound_steps(p_, start, mode_);
    if (lb >= detail::kInfeasible) return std::nullopt;
    for (int horizon = std::max(lb, 0); horizon <= cap; ++horizon) {
      path_.clear();
      if (dfs(start, horizon)) return path_;
    }
    return std::nullopt;
  }

 private:
  bool dfs(const Snapshot& s, int remaining) {
    if (detail::goal(p_, s)) return true;
    if (remaining == 0) return false;
    if (detail::lower_bound_steps(p_, s, mode_) > remaining) return false;
    const auto key = s.key();
    if (auto it = failed_.find(key); it != failed_.end() && it->second >= remaining) return false;
    for (auto& succ : detail::successors(p_, s, mode_)) {
      path_.push_back(std::move(succ.actions));
      if (dfs(succ.next, remaining - 1)) return true;
      path_.pop_back();
    }
    auto& slot = failed_[key];
    slot = std::max(slot, remaining);
    return false;
  }

  const Problem& p_;
  AggregateMode mode_;
  std::unordered_map<std::uint64_t, int> failed_;
  std::vector<std::vector<GroundAction>> path_;
};

// Lexicographic minimization of the grasp-distance sequence over plans of a fixed horizon.
class CostSearch {
 public:
  CostSearch(const Problem& p, AggregateMode mode) : p_(p), mode_(mode) {}

  std::vector<std::vector<GroundAction>> run(const Snapshot& start, int horizon) {
    best(start, horizon);
    std::vector<std::vector<GroundAction>> path;
    Snapshot s = start;
    for (int remaining = horizon; remaining > 0 && !detail::goal(p_, s); --remaining) {
      const auto& entry = memo_.at(memo_key(s, remaining));
      auto succ = detail::successors(p_, s, mode_);
      path.push_back(succ[entry.choice].actions);
      s = succ[entry.choice].next;
    }
    return path;
  }

 private:
  struct Entry {
    bool feasible = false;
    std::vector<int> cost;
    int choice = -1;
  };

  static std::uint64_t memo_key(const Snapshot& s, int remaining) {
    return (s.key() << 6) | static_cast<std::uint64_t>(remaining);
  }

  const Entry& best(const Snapshot& s, int remaining) {
    static const Entry kGoal{true, {}, -1};
    static const Entry kDead{};
    if (detail::goal(p_, s)) return kGoal;
    if (remaining == 0 || detail::lower_bound_steps(p_, s, mode_) > remaining) return kDead;
    const auto key = memo_key(s, remaining);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;

    Entry result;
    const auto succ = detail::successors(p_, s, mode_);
    for (std::size_t i = 0; i < succ.size(); ++i) {
      const Entry& sub = best(succ[i].next, remaining - 1);
      if (!sub.feasible) continue;
      std::vector<int> cost;
      detail::append_step_cost(p_, s, succ[i].actions, cost);
      cost.insert(cost.end(), sub.cost.begin(), sub.cost.end());
      if (!result.feasible || cost < result.cost) {
        result.feasible = true;
        result.cost = std::move(cost);
        result.choice = static_cast<int>(i);
      }
    }
    return memo_.emplace(key, std::move(result)).first->second;
  }

  const Problem& p_;
  AggregateMode mode_;
  std::unordered_map<std::uint64_t, Entry> memo_;
};

bool replays(const Problem& p, const Snapshot& start, const std::vector<std::vector<GroundAction>>& path) {
  Snapshot s = start;
  for (const auto& step : path) {
    for (const auto& a : step)
      if (detail::executable(p, s, a)) return false;
    if (step.size() == 2 && detail::interferes(s, step[0], step[1])) return false;
    for (const auto& a : step) s = detail::apply(p, s, a);
  }
  return detail::goal(p, s);
}

// The search only minimizes the horizon; in PerArm mode the idle arm picks up
// filler moves. Drop every action the plan does not need, latest first.
void prune(const Problem& p, const Snapshot& start, std::vector<std::vector<GroundAction>>& path) {
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t i = path.size(); i-- > 0 && !changed;)
      for (std::size_t k = path[i].size(); k-- > 0 && !changed;) {
        auto trial = path;
        trial[i].erase(trial[i].begin() + static_cast<std::ptrdiff_t>(k));
        if (trial[i].empty()) trial.erase(trial.begin() + static_cast<std::ptrdiff_t>(i));
        if (replays(p, start, trial)) {
          path = std::move(trial);
          changed = true;
        }
      }
  }
}

Plan make_plan(const std::vector<std::vector<GroundAction>>& path, int t0, AggregateMode mode) {
  Plan plan;
  plan.mode = mode;
  plan.horizon = static_cast<int>(path.size());
  for (std::size_t i = 0; i < path.size(); ++i)
    for (const auto& a : path[i]) plan.steps.push_back({a, t0 + static_cast<int>(i)});
  return plan;
}

// Groups plan steps by timestep, validating the aggregate bound.
std::vector<std::pair<int, std::vector<GroundAction>>> by_timestep(const Plan& plan) {
  std::vector<std::pair<int, std::vector<GroundAction>>> out;
  for (const auto& step : plan.steps) {
    if (out.empty() || out.back().first != step.t) {
      if (!out.empty() && step.t < out.back().first)
        throw PlannerError(PlannerError::Kind::invalid_plan, "plan steps are not time-ordered");
      out.push_back({step.t, {}});
    }
    auto& group = out.back().second;
    for (const auto& a : group) {
      if (plan.mode == AggregateMode::per_step || a.arm == step.action.arm)
        throw PlannerError(PlannerError::Kind::invalid_plan,
                           "aggregate bound exceeded at t=" + std::to_string(step.t));
    }
    group.push_back(step.action);
  }
  return out;
}

std::vector<std::string> preconditions(const Snapshot& s, const GroundAction& a) {
  const auto& arm = s.arms[index(a.arm)];
  const auto& oth = s.arms[index(other(a.arm))];
  std::vector<std::string> out;
  auto add = [&](const GroundAtom& atom) { out.push_back(to_string(atom)); };
  switch (a.kind) {
    case ActionKind::move_ring:
      add(atoms::reachable(a.arm, ObjectClass::ring, a.color));
      break;
    case ActionKind::move_peg:
      add(atoms::reachable(a.arm, ObjectClass::peg, a.color));
      if (arm.held >= 0) add(atoms::in_hand(a.arm, Color(arm.held)));
      break;
    case ActionKind::move_center:
      if (arm.held >= 0)
        add(atoms::in_hand(a.arm, Color(arm.held)));
      else
        add(atoms::in_hand(other(a.arm), Color(oth.held)));
      break;
    case ActionKind::grasp:
      if (oth.held == index(a.color)) {
        add(atoms::at_center(a.arm));
        add(atoms::at_center(other(a.arm)));
        add(atoms::in_hand(other(a.arm), a.color));
      } else {
        add(atoms::at(a.arm, ObjectClass::ring, a.color));
      }
      break;
    case ActionKind::release:
      add(atoms::closed_gripper(a.arm));
      if (arm.held >= 0) add(atoms::in_hand(a.arm, Color(arm.held)));
      if (arm.at.kind == detail::Location::peg) add(atoms::at(a.arm, ObjectClass::peg, Color(arm.at.color)));
      break;
    case ActionKind::extract:
      add(atoms::in_hand(a.arm, a.color));
      if (s.rings[index(a.color)].on_peg >= 0) add(atoms::on(a.color, Color(s.rings[index(a.color)].on_peg)));
      break;
  }
  return out;
}

std::vector<std::string> effects(const Problem& p, const Snapshot& before, const GroundAction& a) {
  const auto s0 = detail::from_model(p, before, 0).fluents;
  const auto s1 = detail::from_model(p, detail::apply(p, before, a), 0).fluents;
  std::vector<std::string> out;
  for (const auto& atom : s1)
    if (!s0.count(atom)) out.push_back(to_string(atom));
  for (const auto& atom : s0)
    if (!s1.count(atom)) out.push_back("not " + to_string(atom));
  return out;
}

}  // namespace

std::string to_string(const GroundAction& a) {
  std::string out = action_name(a.kind) + "(" + std::string(to_string(a.arm));
  const auto tail = action_tail(a);
  if (!tail.empty()) out += "," + tail;
  return out + ")";
}

GroundAction parse_action(std::string_view text) {
  const auto open = text.find('(');
  if (open == std::string_view::npos || text.empty() || text.back() != ')') bad_action(text);
  const auto name = text.substr(0, open);
  const auto args = split_args(text.substr(open + 1, text.size() - open - 2));
  const auto arm = parse_arm(args[0]);
  if (!arm) bad_action(text);
  auto color_at = [&](std::size_t i) {
    if (args.size() <= i) bad_action(text);
    const auto c = parse_color(args[i]);
    if (!c) bad_action(text);
    return *c;
  };
  if (name == "release" && args.size() == 1) return GroundAction::release(*arm);
  if (name == "move" && args.size() == 2 && args[1] == "center") return GroundAction::move_center(*arm);
  if (args.size() != 3) bad_action(text);
  if (name == "move" && args[1] == "ring") return GroundAction::move_ring(*arm, color_at(2));
  if (name == "move" && args[1] == "peg") return GroundAction::move_peg(*arm, color_at(2));
  if (args[1] != "ring") bad_action(text);
  if (name == "grasp") return GroundAction::grasp(*arm, color_at(2));
  if (name == "extract") return GroundAction::extract(*arm, color_at(2));
  bad_action(text);
}

bool action_order_less(const GroundAction& a, const GroundAction& b) {
  const auto ka = std::make_tuple(std::string(to_string(a.arm)), action_name(a.kind), action_tail(a));
  const auto kb = std::make_tuple(std::string(to_string(b.arm)), action_name(b.kind), action_tail(b));
  return ka < kb;
}

const std::vector<GroundAction>& all_ground_actions() {
  static const std::vector<GroundAction> actions = [] {
    std::vector<GroundAction> v;
    for (Arm a : kArms) {
      v.push_back(GroundAction::move_center(a));
      v.push_back(GroundAction::release(a));
      for (Color c : kColors) {
        v.push_back(GroundAction::move_ring(a, c));
        v.push_back(GroundAction::move_peg(a, c));
        v.push_back(GroundAction::grasp(a, c));
        v.push_back(GroundAction::extract(a, c));
      }
    }
    std::sort(v.begin(), v.end(), action_order_less);
    return v;
  }();
  return actions;
}

std::string_view to_string(AggregateMode mode) {
  return mode == AggregateMode::per_step ? "per-step" : "per-arm";
}

std::optional<AggregateMode> parse_mode(std::string_view text) {
  if (text == "per-step" || text == "per_step") return AggregateMode::per_step;
  if (text == "per-arm" || text == "per_arm") return AggregateMode::per_arm;
  return std::nullopt;
}

std::string format_plan(const Plan& plan) {
  std::ostringstream os;
  for (const auto& step : plan.steps) os << "t=" << step.t << " action=" << to_string(step.action) << '\n';
  return os.str();
}

Plan parse_plan(std::string_view text, AggregateMode mode) {
  Plan plan;
  plan.mode = mode;
  std::istringstream in{std::string(text)};
  std::string line;
  int first = -1;
  int last = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.rfind("t=", 0) != 0) throw PlannerError(PlannerError::Kind::parse, "bad plan line: " + line);
    const auto sp = line.find(" action=");
    if (sp == std::string::npos) throw PlannerError(PlannerError::Kind::parse, "bad plan line: " + line);
    const int t = std::stoi(line.substr(2, sp - 2));
    plan.steps.push_back({parse_action(line.substr(sp + 8)), t});
    if (first < 0) first = t;
    last = t;
  }
  plan.horizon = first < 0 ? 0 : last - first + 1;
  return plan;
}

State ground_externals(const std::set<GroundAtom>& externals) {
  State state;
  state.t = 1;
  for (const auto& atom : externals) {
    validate(atom);
    if (!is_external(atom.predicate))
      throw PlannerError(PlannerError::Kind::not_external, to_string(atom) + " is not an external atom");
    state.fluents.insert(atom);
    if (atom.predicate == Predicate::in_hand)
      state.fluents.insert(atoms::closed_gripper(static_cast<Arm>(atom.args[0].value)));
  }
  detail::to_model(state);  // consistency check
  return state;
}

std::optional<Plan> solve(const State& initial, AggregateMode mode, int horizon_cap) {
  const auto [problem, start] = detail::to_model(initial);
  DepthFirst search(problem, mode);
  auto path = search.run(start, horizon_cap);
  if (!path) return std::nullopt;
  prune(problem, start, *path);
  return make_plan(*path, initial.t, mode);
}

std::optional<Plan> solve_optimized(const State& initial, AggregateMode mode, int horizon_cap) {
  const auto [problem, start] = detail::to_model(initial);
  for (Arm a : kArms)
    for (Color c : kColors)
      if ((start.rings[index(c)].reach & detail::bit(a)) && problem.distance[index(a)][index(c)] < 0)
        throw PlannerError(PlannerError::Kind::missing_distance,
                           "no distance atom for reachable ring " + std::string(to_string(c)) + " and arm " +
                               std::string(to_string(a)));
  DepthFirst search(problem, mode);
  auto path = search.run(start, horizon_cap);
  if (!path) return std::nullopt;
  CostSearch cost(problem, mode);
  auto best = cost.run(start, static_cast<int>(path->size()));
  prune(problem, start, best);
  return make_plan(best, initial.t, mode);
}

std::optional<Violation> check_executability(const State& state, const GroundAction& action) {
  const auto [problem, snap] = detail::to_model(state);
  return detail::executable(problem, snap, action);
}

State apply_step(const State& state, const std::vector<GroundAction>& actions) {
  const auto [problem, snap] = detail::to_model(state);
  for (const auto& a : actions)
    if (auto v = detail::executable(problem, snap, a))
      throw PlannerError(PlannerError::Kind::invalid_plan, to_string(a) + " violates " + v->name);
  if (actions.size() == 2 && (actions[0].arm == actions[1].arm || detail::interferes(snap, actions[0], actions[1])))
    throw PlannerError(PlannerError::Kind::invalid_plan, "simultaneous actions interfere");
  Snapshot next = snap;
  for (const auto& a : actions) next = detail::apply(problem, next, a);
  return detail::from_model(problem, next, state.t + 1);
}

std::set<Color> goal_rings(const State& state) {
  const auto [problem, snap] = detail::to_model(state);
  std::set<Color> out;
  for (Color c : kColors)
    if ((problem.goal_mask >> index(c)) & 1u) out.insert(c);
  return out;
}

bool goal_holds(const State& state, const std::set<Color>& rings) {
  return std::all_of(rings.begin(), rings.end(), [&](Color c) { return state.holds(atoms::on(c, c)); });
}

std::vector<int> grasp_cost(const Plan& plan, const State& initial) {
  auto [problem, snap] = detail::to_model(initial);
  std::vector<int> cost;
  for (const auto& [t, group] : by_timestep(plan)) {
    detail::append_step_cost(problem, snap, group, cost);
    for (const auto& a : group) snap = detail::apply(problem, snap, a);
  }
  return cost;
}

std::vector<TraceEntry> explain_plan(const Plan& plan, const State& initial) {
  auto [problem, snap] = detail::to_model(initial);
  std::vector<TraceEntry> trace;
  for (const auto& [t, group] : by_timestep(plan)) {
    for (const auto& a : group) {
      if (auto v = detail::executable(problem, snap, a))
        throw PlannerError(PlannerError::Kind::invalid_plan,
                           "step t=" + std::to_string(t) + " " + to_string(a) + " is not executable: " + v->name);
    }
    if (group.size() == 2 && detail::interferes(snap, group[0], group[1]))
      throw PlannerError(PlannerError::Kind::invalid_plan, "step t=" + std::to_string(t) + " has interfering actions");
    for (const auto& a : group) trace.push_back({t, a, preconditions(snap, a), effects(problem, snap, a)});
    for (const auto& a : group) snap = detail::apply(problem, snap, a);
  }
  return trace;
}

std::string trace_to_json(const std::vector<TraceEntry>& trace) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& e : trace)
    out.push_back({{"t", e.t},
                   {"action", to_string(e.action)},
                   {"preconditions", e.fired_preconditions},
                   {"effects", e.produced_effects}});
  return out.dump();
}

}  // namespace pegring::planner
