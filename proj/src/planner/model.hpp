#pragma once

// Compact planner state used by the search. Public State values are converted
// to and from this representation at the API boundary.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pegring/planner/planner.hpp"

namespace pegring::planner::detail {

struct Location {
  enum Kind : std::uint8_t { none, ring, peg, center };
  Kind kind = none;
  std::uint8_t color = 0;

  bool operator==(const Location&) const = default;
};

struct ArmSlot {
  Location at;
  bool closed = false;
  std::int8_t held = -1;

  bool operator==(const ArmSlot&) const = default;
};

struct RingSlot {
  bool present = false;
  std::int8_t on_peg = -1;
  std::uint8_t reach = 0;  // bit per arm

  bool operator==(const RingSlot&) const = default;
};

struct Snapshot {
  std::array<ArmSlot, kArmCount> arms{};
  std::array<RingSlot, kColorCount> rings{};

  bool operator==(const Snapshot&) const = default;
  std::uint64_t key() const;
};

/// Static part of an instance: peg reachability, goal rings, distances.
struct Problem {
  std::array<std::uint8_t, kColorCount> peg_reach{};
  std::uint8_t goal_mask = 0;  // bit per ring color
  std::array<std::array<int, kColorCount>, kArmCount> distance{};

  Problem() {
    for (auto& row : distance) row.fill(-1);
  }
};

inline std::uint8_t bit(Arm a) { return static_cast<std::uint8_t>(1u << index(a)); }

/// Builds the compact model. Throws PlannerError(inconsistent) on invariant violations.
/// The goal set is taken from `state` itself.
std::pair<Problem, Snapshot> to_model(const State& state);
State from_model(const Problem& problem, const Snapshot& snap, int t);

std::optional<Violation> executable(const Problem& p, const Snapshot& s, const GroundAction& a);
Snapshot apply(const Problem& p, const Snapshot& s, const GroundAction& a);

/// Ring touched by an action in `s` (the carried ring for moves and release), -1 if none.
int ring_of(const Snapshot& s, const GroundAction& a);
bool interferes(const Snapshot& s, const GroundAction& a, const GroundAction& b);

bool goal(const Problem& p, const Snapshot& s);

struct Bound {
  int actions = 0;  // lower bound on remaining actions
  int chain = 0;    // lower bound on remaining timesteps when arms act in parallel
};
inline constexpr int kInfeasible = 1 << 20;
Bound lower_bound(const Problem& p, const Snapshot& s);
int lower_bound_steps(const Problem& p, const Snapshot& s, AggregateMode mode);

/// Successor steps in tie-break order; each entry is the list of actions fired together.
struct Successor {
  std::vector<GroundAction> actions;
  Snapshot next;
};
std::vector<Successor> successors(const Problem& p, const Snapshot& s, AggregateMode mode);

/// Non-transfer grasps contribute their distance; used by the optimizing solver.
void append_step_cost(const Problem& p, const Snapshot& before, const std::vector<GroundAction>& actions,
                      std::vector<int>& cost);

}  // namespace pegring::planner::detail
