#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pegring/planner/atoms.hpp"

namespace pegring::planner {

struct State {
  int t = 1;
  std::set<GroundAtom> fluents;

  bool holds(const GroundAtom& atom) const { return fluents.count(atom) != 0; }
  bool operator==(const State&) const = default;
};

enum class ActionKind : std::uint8_t { move_ring, move_peg, move_center, grasp, release, extract };

struct GroundAction {
  ActionKind kind = ActionKind::move_ring;
  Arm arm = Arm::psm1;
  Color color = Color::red;  // ignored for move_center and release

  static GroundAction move_ring(Arm a, Color c) { return {ActionKind::move_ring, a, c}; }
  static GroundAction move_peg(Arm a, Color c) { return {ActionKind::move_peg, a, c}; }
  static GroundAction move_center(Arm a) { return {ActionKind::move_center, a, Color::red}; }
  static GroundAction grasp(Arm a, Color c) { return {ActionKind::grasp, a, c}; }
  static GroundAction release(Arm a) { return {ActionKind::release, a, Color::red}; }
  static GroundAction extract(Arm a, Color c) { return {ActionKind::extract, a, c}; }

  bool uses_color() const { return kind != ActionKind::move_center && kind != ActionKind::release; }
  bool operator==(const GroundAction& o) const {
    return kind == o.kind && arm == o.arm && (!uses_color() || color == o.color);
  }
};

/// `move(psm1,ring,red)`, `move(psm1,center)`, `release(psm2)`, ...
std::string to_string(const GroundAction& action);
GroundAction parse_action(std::string_view text);

/// Tie-break order: (arm, action name, remaining arguments) compared as text.
bool action_order_less(const GroundAction& a, const GroundAction& b);

/// Every well-sorted ground action, in tie-break order.
const std::vector<GroundAction>& all_ground_actions();

enum class AggregateMode { per_step, per_arm };

std::string_view to_string(AggregateMode mode);
std::optional<AggregateMode> parse_mode(std::string_view text);

struct PlanStep {
  GroundAction action;
  int t = 1;

  bool operator==(const PlanStep&) const = default;
};

struct Plan {
  std::vector<PlanStep> steps;  // sorted by (t, arm)
  int horizon = 0;
  AggregateMode mode = AggregateMode::per_step;

  bool operator==(const Plan&) const = default;
};

/// Line-delimited `t=<int> action=<name>(<args>)` records.
std::string format_plan(const Plan& plan);
Plan parse_plan(std::string_view text, AggregateMode mode);

inline constexpr int kDefaultHorizonCap = 40;

State ground_externals(const std::set<GroundAtom>& externals);

std::optional<Plan> solve(const State& initial, AggregateMode mode, int horizon_cap = kDefaultHorizonCap);
std::optional<Plan> solve_optimized(const State& initial, AggregateMode mode,
                                    int horizon_cap = kDefaultHorizonCap);

struct Violation {
  std::string name;
  bool operator==(const Violation&) const = default;
};

/// nullopt when the action may fire in `state`.
std::optional<Violation> check_executability(const State& state, const GroundAction& action);

/// Applies one action (or the simultaneous actions of one step) and returns the state at t+1.
/// Throws PlannerError(invalid_plan) if any action is not executable.
State apply_step(const State& state, const std::vector<GroundAction>& actions);

/// Rings the goal quantifies over: reachable by some arm or already held.
std::set<Color> goal_rings(const State& state);
bool goal_holds(const State& state, const std::set<Color>& rings);

/// Grasp-order cost of a plan: distance of each non-transfer grasp, in execution order.
std::vector<int> grasp_cost(const Plan& plan, const State& initial);

struct TraceEntry {
  int t = 0;
  GroundAction action;
  std::vector<std::string> fired_preconditions;
  std::vector<std::string> produced_effects;
};

std::vector<TraceEntry> explain_plan(const Plan& plan, const State& initial);
std::string trace_to_json(const std::vector<TraceEntry>& trace);

}  // namespace pegring::planner
