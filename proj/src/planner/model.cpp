#include "model.hpp"

#include <algorithm>

namespace pegring::planner::detail {

namespace {

[[noreturn]] void inconsistent(const std::string& why) {
  throw PlannerError(PlannerError::Kind::inconsistent, "inconsistent state: " + why);
}

Color color_of(const Term& t) { return static_cast<Color>(t.value); }
Arm arm_of(const Term& t) { return static_cast<Arm>(t.value); }

std::string name(Arm a) { return std::string(to_string(a)); }
std::string name(Color c) { return std::string(to_string(c)); }

std::optional<Violation> carry_check(const Snapshot& s, Arm a) {
  const auto& arm = s.arms[index(a)];
  if (arm.held < 0) return std::nullopt;
  if (s.rings[arm.held].on_peg >= 0) return Violation{"move_before_extract"};
  if (s.arms[index(other(a))].held == arm.held) return Violation{"transfer_incomplete"};
  return std::nullopt;
}

void carry(Snapshot& s, Arm a) {
  const auto held = s.arms[index(a)].held;
  if (held < 0) return;
  for (auto& arm : s.arms)
    if (arm.at.kind == Location::ring && arm.at.color == held) arm.at = {};
}

bool held_by_any(const Snapshot& s, int ring) {
  return s.arms[0].held == ring || s.arms[1].held == ring;
}

int occupant(const Snapshot& s, int peg) {
  for (int c = 0; c < kColorCount; ++c)
    if (s.rings[c].present && s.rings[c].on_peg == peg) return c;
  return -1;
}

}  // namespace

std::uint64_t Snapshot::key() const {
  std::uint64_t k = 0;
  for (const auto& arm : arms) {
    k = (k << 2) | arm.at.kind;
    k = (k << 3) | arm.at.color;
    k = (k << 1) | (arm.closed ? 1u : 0u);
    k = (k << 3) | static_cast<std::uint64_t>(arm.held + 1);
  }
  for (const auto& ring : rings) {
    k = (k << 1) | (ring.present ? 1u : 0u);
    k = (k << 3) | static_cast<std::uint64_t>(ring.on_peg + 1);
    k = (k << 2) | ring.reach;
  }
  return k;
}

std::pair<Problem, Snapshot> to_model(const State& state) {
  Problem p;
  Snapshot s;
  for (const auto& atom : state.fluents) {
    validate(atom);
    const auto& a = atom.args;
    switch (atom.predicate) {
      case Predicate::reachable: {
        const auto cls = static_cast<ObjectClass>(a[1].value);
        const auto c = index(color_of(a[2]));
        if (cls == ObjectClass::ring) {
          s.rings[c].present = true;
          s.rings[c].reach |= bit(arm_of(a[0]));
        } else {
          p.peg_reach[c] |= bit(arm_of(a[0]));
        }
        break;
      }
      case Predicate::on: {
        const auto ring = index(color_of(a[1]));
        const auto peg = static_cast<std::int8_t>(index(color_of(a[3])));
        auto& slot = s.rings[ring];
        if (slot.on_peg >= 0 && slot.on_peg != peg) inconsistent("ring " + name(Color(ring)) + " is on two pegs");
        slot.present = true;
        slot.on_peg = peg;
        break;
      }
      case Predicate::closed_gripper:
        s.arms[index(arm_of(a[0]))].closed = true;
        break;
      case Predicate::in_hand: {
        auto& arm = s.arms[a[0].value];
        const auto ring = static_cast<std::int8_t>(index(color_of(a[2])));
        if (arm.held >= 0 && arm.held != ring) inconsistent(name(arm_of(a[0])) + " holds two rings");
        arm.held = ring;
        s.rings[ring].present = true;
        break;
      }
      case Predicate::at: {
        auto& arm = s.arms[a[0].value];
        Location loc;
        if (a.size() == 2) {
          loc.kind = Location::center;
        } else {
          loc.kind = a[1].value == static_cast<int>(ObjectClass::ring) ? Location::ring : Location::peg;
          loc.color = static_cast<std::uint8_t>(a[2].value);
        }
        if (arm.at.kind != Location::none && !(arm.at == loc)) inconsistent(name(arm_of(a[0])) + " is at two places");
        arm.at = loc;
        break;
      }
      case Predicate::distance: {
        const auto arm = a[0].value;
        const auto ring = a[2].value;
        if (p.distance[arm][ring] >= 0 && p.distance[arm][ring] != a[3].value)
          inconsistent("two distances for " + name(arm_of(a[0])) + "/" + name(Color(ring)));
        p.distance[arm][ring] = a[3].value;
        s.rings[ring].present = true;
        break;
      }
    }
  }
  for (auto& arm : s.arms)
    if (arm.held >= 0) arm.closed = true;
  for (int peg = 0; peg < kColorCount; ++peg) {
    if (peg == index(Color::grey)) continue;
    int count = 0;
    for (const auto& ring : s.rings) count += ring.on_peg == peg ? 1 : 0;
    if (count > 1) inconsistent("peg " + name(Color(peg)) + " holds more than one ring");
  }
  for (int c = 0; c < kColorCount; ++c) {
    const auto& ring = s.rings[c];
    if (ring.present && (ring.reach != 0 || held_by_any(s, c))) p.goal_mask |= static_cast<std::uint8_t>(1u << c);
  }
  return {p, s};
}

State from_model(const Problem& p, const Snapshot& s, int t) {
  State out;
  out.t = t;
  for (Arm a : kArms) {
    const auto& arm = s.arms[index(a)];
    if (arm.closed) out.fluents.insert(atoms::closed_gripper(a));
    if (arm.held >= 0) out.fluents.insert(atoms::in_hand(a, Color(arm.held)));
    switch (arm.at.kind) {
      case Location::ring:
        out.fluents.insert(atoms::at(a, ObjectClass::ring, Color(arm.at.color)));
        break;
      case Location::peg:
        out.fluents.insert(atoms::at(a, ObjectClass::peg, Color(arm.at.color)));
        break;
      case Location::center:
        out.fluents.insert(atoms::at_center(a));
        break;
      case Location::none:
        break;
    }
    for (Color c : kColors) {
      if (p.peg_reach[index(c)] & bit(a)) out.fluents.insert(atoms::reachable(a, ObjectClass::peg, c));
      const auto& ring = s.rings[index(c)];
      if (ring.present && (ring.reach & bit(a))) out.fluents.insert(atoms::reachable(a, ObjectClass::ring, c));
      if (p.distance[index(a)][index(c)] >= 0) out.fluents.insert(atoms::distance(a, c, p.distance[index(a)][index(c)]));
    }
  }
  for (Color c : kColors) {
    const auto& ring = s.rings[index(c)];
    if (ring.present && ring.on_peg >= 0) out.fluents.insert(atoms::on(c, Color(ring.on_peg)));
  }
  return out;
}

std::optional<Violation> executable(const Problem& p, const Snapshot& s, const GroundAction& act) {
  const auto a = act.arm;
  const auto& arm = s.arms[index(a)];
  const auto& oth = s.arms[index(other(a))];
  const int c = index(act.color);
  const auto pre = [&](const std::string& atom) { return Violation{"precondition:" + atom}; };

  switch (act.kind) {
    case ActionKind::move_ring:
      if (auto v = carry_check(s, a)) return v;
      if (!s.rings[c].present || !(s.rings[c].reach & bit(a)))
        return pre("reachable(" + name(a) + ",ring," + name(act.color) + ")");
      if (held_by_any(s, c)) return Violation{"ring_in_hand"};
      return std::nullopt;
    case ActionKind::move_peg:
      if (auto v = carry_check(s, a)) return v;
      if (!(p.peg_reach[c] & bit(a))) return pre("reachable(" + name(a) + ",peg," + name(act.color) + ")");
      return std::nullopt;
    case ActionKind::move_center:
      if (auto v = carry_check(s, a)) return v;
      if (arm.held < 0 && (arm.closed || oth.held < 0)) return Violation{"transfer_not_pending"};
      return std::nullopt;
    case ActionKind::grasp:
      if (arm.closed) return Violation{"grasp_with_closed_gripper"};
      if (!s.rings[c].present) return pre("at(" + name(a) + ",ring," + name(act.color) + ")");
      if (held_by_any(s, c)) {
        if (oth.held == c && arm.at.kind == Location::center && oth.at.kind == Location::center)
          return std::nullopt;
        return Violation{"transfer_not_ready"};
      }
      if (!(arm.at.kind == Location::ring && arm.at.color == c))
        return pre("at(" + name(a) + ",ring," + name(act.color) + ")");
      return std::nullopt;
    case ActionKind::release: {
      if (!arm.closed) return pre("closed_gripper(" + name(a) + ")");
      const int h = arm.held;
      if (h < 0 || oth.held == h || s.rings[h].on_peg >= 0) return std::nullopt;
      if (arm.at.kind != Location::peg) return Violation{"release_off_peg"};
      const int peg = arm.at.color;
      if (peg != index(Color::grey)) {
        const int occ = occupant(s, peg);
        if (occ >= 0 && occ != h) return Violation{"occupied_peg"};
      }
      return std::nullopt;
    }
    case ActionKind::extract:
      if (arm.held != c) return pre("in_hand(" + name(a) + ",ring," + name(act.color) + ")");
      if (s.rings[c].on_peg < 0) return pre("on(ring," + name(act.color) + ",peg,_)");
      return std::nullopt;
  }
  return Violation{"unknown_action"};
}

Snapshot apply(const Problem& p, const Snapshot& s, const GroundAction& act) {
  Snapshot n = s;
  const auto a = act.arm;
  auto& arm = n.arms[index(a)];
  const int c = index(act.color);
  switch (act.kind) {
    case ActionKind::move_ring:
      arm.at = {Location::ring, static_cast<std::uint8_t>(c)};
      break;
    case ActionKind::move_peg:
      carry(n, a);
      arm.at = {Location::peg, static_cast<std::uint8_t>(c)};
      break;
    case ActionKind::move_center:
      carry(n, a);
      arm.at = {Location::center, 0};
      break;
    case ActionKind::grasp:
      arm.held = static_cast<std::int8_t>(c);
      arm.closed = true;
      break;
    case ActionKind::release: {
      const int h = arm.held;
      arm.closed = false;
      arm.held = -1;
      if (h >= 0 && n.arms[index(other(a))].held != h && n.rings[h].on_peg < 0 && arm.at.kind == Location::peg) {
        const int peg = arm.at.color;
        n.rings[h].on_peg = static_cast<std::int8_t>(peg);
        n.rings[h].reach = peg == index(Color::grey) ? bit(a) : p.peg_reach[peg];
      }
      break;
    }
    case ActionKind::extract:
      n.rings[c].on_peg = -1;
      break;
  }
  return n;
}

int ring_of(const Snapshot& s, const GroundAction& a) {
  switch (a.kind) {
    case ActionKind::move_ring:
    case ActionKind::grasp:
    case ActionKind::extract:
      return index(a.color);
    default:
      return s.arms[index(a.arm)].held;
  }
}

bool interferes(const Snapshot& s, const GroundAction& a, const GroundAction& b) {
  // a move carries whatever the arm holds, so a holder that wanders off to another ring
  // still conflicts with the other arm taking its ring
  const auto touched = [&](const GroundAction& x) {
    std::uint8_t m = 0;
    if (const int r = ring_of(s, x); r >= 0) m |= static_cast<std::uint8_t>(1u << r);
    if (const int h = s.arms[index(x.arm)].held; h >= 0) m |= static_cast<std::uint8_t>(1u << h);
    return m;
  };
  if (touched(a) & touched(b)) return true;
  if (a.kind == ActionKind::release && b.kind == ActionKind::release) {
    const auto& la = s.arms[index(a.arm)].at;
    const auto& lb = s.arms[index(b.arm)].at;
    if (la.kind == Location::peg && la == lb && la.color != index(Color::grey)) return true;
  }
  return false;
}

bool goal(const Problem& p, const Snapshot& s) {
  for (int c = 0; c < kColorCount; ++c)
    if ((p.goal_mask >> c) & 1u)
      if (s.rings[c].on_peg != c) return false;
  return true;
}

Bound lower_bound(const Problem& p, const Snapshot& s) {
  Bound b;
  // an arm's move to the center can serve as one ring's give and another's take,
  // so the taker's approach is charged once per arm and only if it never gives
  std::uint8_t takers = 0;
  std::uint8_t givers = 0;
  for (int c = 0; c < kColorCount; ++c) {
    if (!((p.goal_mask >> c) & 1u)) continue;
    const auto& ring = s.rings[c];
    if (ring.on_peg == c) continue;
    const std::uint8_t peg_arms = p.peg_reach[c];
    if (peg_arms == 0) return {kInfeasible, kInfeasible};

    std::uint8_t holders = 0;
    for (Arm a : kArms)
      if (s.arms[index(a)].held == c) holders |= bit(a);

    int actions = 0;
    int chain = 0;
    const int extract = ring.on_peg >= 0 ? 1 : 0;
    if (holders) {
      if (holders & peg_arms) {
        Arm holder = (holders & bit(Arm::psm1) & peg_arms) ? Arm::psm1 : Arm::psm2;
        const auto& at = s.arms[index(holder)].at;
        const int move = (at.kind == Location::peg && at.color == c) ? 0 : 1;
        const int other_release = (holders & bit(other(holder))) ? 1 : 0;
        actions = extract + other_release + move + 1;
        chain = actions;
      } else {
        Arm holder = (holders & bit(Arm::psm1)) ? Arm::psm1 : Arm::psm2;
        const int give = s.arms[index(holder)].at.kind == Location::center ? 0 : 1;
        // give move, take grasp, give release, take move, take release
        actions = extract + give + 4;
        chain = actions;
        takers |= peg_arms;
        if (give) givers |= bit(holder);
      }
    } else {
      if (ring.reach == 0) return {kInfeasible, kInfeasible};
      bool someone_there = false;
      for (Arm a : kArms)
        if ((ring.reach & bit(a)) && s.arms[index(a)].at.kind == Location::ring && s.arms[index(a)].at.color == c)
          someone_there = true;
      const int base = (someone_there ? 0 : 1) + 1 + extract;
      if (ring.reach & peg_arms) {
        actions = base + 2;
        chain = actions;
      } else {
        actions = base + 5;
        chain = actions;
        takers |= peg_arms;
        givers |= ring.reach;
      }
    }
    b.actions += actions;
    b.chain = std::max(b.chain, chain);
  }
  for (Arm a : kArms)
    if ((takers & bit(a)) && !(givers & bit(a)) && s.arms[index(a)].at.kind != Location::center) b.actions += 1;
  return b;
}

int lower_bound_steps(const Problem& p, const Snapshot& s, AggregateMode mode) {
  const auto b = lower_bound(p, s);
  if (b.actions >= kInfeasible) return kInfeasible;
  if (mode == AggregateMode::per_step) return b.actions;
  return std::max((b.actions + 1) / 2, b.chain);
}

std::vector<Successor> successors(const Problem& p, const Snapshot& s, AggregateMode mode) {
  std::vector<Successor> out;
  const auto& actions = all_ground_actions();
  if (mode == AggregateMode::per_step) {
    for (const auto& a : actions) {
      if (executable(p, s, a)) continue;
      auto next = apply(p, s, a);
      if (next == s) continue;
      out.push_back({{a}, next});
    }
    return out;
  }

  std::array<std::vector<GroundAction>, kArmCount> per_arm;
  for (const auto& a : actions) {
    if (executable(p, s, a)) continue;
    if (apply(p, s, a) == s) continue;
    per_arm[index(a.arm)].push_back(a);
  }
  const auto n1 = per_arm[0].size();
  const auto n2 = per_arm[1].size();
  for (std::size_t i = 0; i <= n1; ++i) {
    for (std::size_t j = 0; j <= n2; ++j) {
      if (i == n1 && j == n2) continue;
      std::vector<GroundAction> step;
      if (i < n1) step.push_back(per_arm[0][i]);
      if (j < n2) step.push_back(per_arm[1][j]);
      if (step.size() == 2 && interferes(s, step[0], step[1])) continue;
      Snapshot next = s;
      for (const auto& a : step) next = apply(p, next, a);
      out.push_back({std::move(step), next});
    }
  }
  return out;
}

void append_step_cost(const Problem& p, const Snapshot& before, const std::vector<GroundAction>& actions,
                      std::vector<int>& cost) {
  for (const auto& a : actions) {
    if (a.kind != ActionKind::grasp) continue;
    const int c = index(a.color);
    if (held_by_any(before, c)) continue;  // hand-off at the transfer point
    const int d = p.distance[index(a.arm)][c];
    cost.push_back(d < 0 ? 0 : d);
  }
}

}  // namespace pegring::planner::detail
