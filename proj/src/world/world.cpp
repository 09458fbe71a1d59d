#include "pegring/world/world.hpp"

#include <cmath>

#include "json.hpp"

namespace pegring::world {

namespace {

using nlohmann::json;

constexpr double kEps = 1e-12;

bool finite(const Pose& pose) {
  return pose.p.allFinite() && pose.q.coeffs().allFinite() && pose.q.norm() > 0.5;
}

Pose compose(const Pose& a, const Pose& b) {
  Pose out;
  out.p = a.p + a.q * b.p;
  out.q = (a.q * b.q).normalized();
  return out;
}

Pose relative(const Pose& frame, const Pose& x) {
  const Quaterniond inv = frame.q.conjugate();
  Pose out;
  out.p = inv * (x.p - frame.p);
  out.q = (inv * x.q).normalized();
  return out;
}

double lateral(const Vector3d& p, const PegState& peg) {
  const Vector3d d = p - peg.base;
  return (d - d.dot(peg.axis) * peg.axis).norm();
}

json vec(const Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }
json quat(const Quaterniond& q) { return json::array({q.w(), q.x(), q.y(), q.z()}); }

}  // namespace

void GeometryConfig::validate() const {
  auto fail = [](const std::string& what) { throw WorldError(WorldError::Kind::scenario, what); };
  if (!(base_size > 0 && peg_height > 0 && peg_radius > 0 && ring_major > 0 && ring_minor > 0))
    fail("geometry sizes must be positive");
  if (!(ring_major > peg_radius + ring_minor)) fail("ring does not fit over a peg");
  if (!(capture_radius > 0 && thread_tolerance > 0)) fail("tolerances must be positive");
  if (pegs.size() > 8) fail("at most 8 pegs");
  const double half = base_size / 2;
  if (!in_workspace(Vector3d(-half, -half, 0)) || !in_workspace(Vector3d(half, half, peg_height)))
    fail("workspace does not contain the base");
  bool seen[planner::kColorCount] = {};
  for (const auto& peg : pegs) {
    if (std::abs(peg.position.x()) > half || std::abs(peg.position.y()) > half)
      fail("peg " + std::string(planner::to_string(peg.color)) + " lies off the base");
    if (peg.color != Color::grey) {
      if (seen[planner::index(peg.color)]) fail("two " + std::string(planner::to_string(peg.color)) + " pegs");
      seen[planner::index(peg.color)] = true;
    }
  }
}

bool GeometryConfig::in_workspace(const Vector3d& p) const {
  return (p.array() >= workspace_min.array()).all() && (p.array() <= workspace_max.array()).all();
}

std::string_view to_string(RingStatus s) {
  switch (s) {
    case RingStatus::on_base: return "on_base";
    case RingStatus::on_peg: return "on_peg";
    case RingStatus::in_hand: return "in_hand";
    case RingStatus::fallen: return "fallen";
    case RingStatus::hidden: return "hidden";
  }
  return "?";
}

std::string_view to_string(GraspFailure f) { return f == GraspFailure::too_far ? "too_far" : "disturbance"; }

std::string_view to_string(DisturbanceKind k) {
  switch (k) {
    case DisturbanceKind::move_ring: return "move_ring";
    case DisturbanceKind::drop_ring: return "drop_ring";
    case DisturbanceKind::occupy_peg: return "occupy_peg";
    case DisturbanceKind::hide_ring: return "hide_ring";
    case DisturbanceKind::reveal_ring: return "reveal_ring";
    case DisturbanceKind::grasp_failure: return "grasp_failure";
  }
  return "?";
}

std::optional<DisturbanceKind> parse_disturbance_kind(std::string_view text) {
  for (auto k : {DisturbanceKind::move_ring, DisturbanceKind::drop_ring, DisturbanceKind::occupy_peg,
                 DisturbanceKind::hide_ring, DisturbanceKind::reveal_ring, DisturbanceKind::grasp_failure})
    if (to_string(k) == text) return k;
  return std::nullopt;
}

int SceneState::ring_index(Color c) const {
  for (std::size_t i = 0; i < rings.size(); ++i)
    if (rings[i].color == c) return static_cast<int>(i);
  return -1;
}

const RingState* SceneState::ring(Color c) const {
  const int i = ring_index(c);
  return i < 0 ? nullptr : &rings[static_cast<std::size_t>(i)];
}

Arm side_of(const Vector3d& p) { return p.x() <= 0.0 ? Arm::psm1 : Arm::psm2; }

double ring_circle_distance(const Vector3d& point, const RingState& ring, double major, Vector3d* closest) {
  const Vector3d n = ring.normal();
  const Vector3d d = point - ring.pose.p;
  Vector3d u = d - d.dot(n) * n;
  // on the axis every circle point is equally close; take angle 0
  if (u.norm() < kEps) u = ring.pose.q * Vector3d::UnitX();
  const Vector3d c = ring.pose.p + major * u.normalized();
  if (closest) *closest = c;
  return (point - c).norm();
}

Vector3d ring_point(const RingState& ring, double major, double angle) {
  return ring.pose.p + ring.pose.q * Vector3d(major * std::cos(angle), major * std::sin(angle), 0.0);
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

SceneState initial_state(const Scenario& sc) {
  sc.geometry.validate();
  SceneState s;
  s.geometry = sc.geometry;
  const auto& g = sc.geometry;
  for (int a = 0; a < 2; ++a) {
    if (!g.in_workspace(sc.arm_start[a])) throw WorldError(WorldError::Kind::scenario, "arm start outside workspace");
    s.arms[a].pose = {sc.arm_start[a], down_orientation()};
  }
  for (const auto& spec : g.pegs) {
    PegState peg;
    peg.color = spec.color;
    peg.base = Vector3d(spec.position.x(), spec.position.y(), 0.0);
    peg.height = g.peg_height;
    peg.radius = g.peg_radius;
    s.pegs.push_back(peg);
  }
  if (sc.rings.size() > 5) throw WorldError(WorldError::Kind::scenario, "at most 5 rings");
  for (const auto& place : sc.rings) {
    const auto name = std::string(planner::to_string(place.color));
    if (s.ring_index(place.color) >= 0) throw WorldError(WorldError::Kind::scenario, "two " + name + " rings");
    if (place.position.has_value() == place.peg.has_value())
      throw WorldError(WorldError::Kind::scenario, "ring " + name + " needs exactly one of position, peg");
    RingState ring;
    ring.color = place.color;
    if (place.peg) {
      const int k = *place.peg;
      if (k < 0 || k >= static_cast<int>(s.pegs.size()))
        throw WorldError(WorldError::Kind::scenario, "ring " + name + " names a missing peg");
      auto& peg = s.pegs[static_cast<std::size_t>(k)];
      if (peg.occupant >= 0) throw WorldError(WorldError::Kind::scenario, "peg " + std::to_string(k) + " holds two rings");
      peg.occupant = static_cast<int>(s.rings.size());
      ring.status = RingStatus::on_peg;
      ring.peg = k;
      ring.pose.p = peg.base + g.ring_minor * Vector3d::UnitZ();
    } else {
      const double half = g.base_size / 2;
      if (std::abs(place.position->x()) > half || std::abs(place.position->y()) > half)
        throw WorldError(WorldError::Kind::scenario, "ring " + name + " lies off the base");
      ring.pose.p = Vector3d(place.position->x(), place.position->y(), g.ring_minor);
    }
    s.rings.push_back(ring);
  }
  return s;
}

std::set<GroundAtom> ground_truth_atoms(const SceneState& s) {
  namespace at = planner::atoms;
  std::set<GroundAtom> out;
  const auto& g = s.geometry;
  const double half = g.base_size / 2;
  for (Arm a : planner::kArms) {
    const auto& arm = s.arm(a);
    if (arm.closed) out.insert(at::closed_gripper(a));
    if (arm.held >= 0) {
      const auto& ring = s.rings[static_cast<std::size_t>(arm.held)];
      out.insert(at::in_hand(a, ring.color));
      out.insert(at::distance(a, ring.color,
                              static_cast<int>(std::lround(1000.0 * ring_circle_distance(arm.pose.p, ring, g.ring_major)))));
    }
  }
  for (const auto& ring : s.rings) {
    if (ring.status == RingStatus::hidden) continue;
    if (ring.status == RingStatus::on_peg) out.insert(at::on(ring.color, s.pegs[static_cast<std::size_t>(ring.peg)].color));
    if (ring.threaded >= 0) out.insert(at::on(ring.color, s.pegs[static_cast<std::size_t>(ring.threaded)].color));
    if (ring.status == RingStatus::in_hand) continue;
    if (std::abs(ring.pose.p.x()) > half || std::abs(ring.pose.p.y()) > half) continue;
    const Arm a = side_of(ring.pose.p);
    out.insert(at::reachable(a, planner::ObjectClass::ring, ring.color));
    const double d = ring_circle_distance(s.arm(a).pose.p, ring, g.ring_major);
    out.insert(at::distance(a, ring.color, static_cast<int>(std::lround(1000.0 * d))));
  }
  for (const auto& peg : s.pegs) {
    // grey pegs are one pool per side: reachable while a free one exists
    if (peg.color == Color::grey && peg.occupant >= 0) continue;
    out.insert(at::reachable(side_of(peg.base), planner::ObjectClass::peg, peg.color));
  }
  return out;
}

std::set<GroundAtom> reachability(const SceneState& s) {
  std::set<GroundAtom> out;
  for (const auto& atom : ground_truth_atoms(s))
    if (atom.predicate == planner::Predicate::reachable) out.insert(atom);
  return out;
}

bool goal_satisfied(const SceneState& s) {
  const double half = s.geometry.base_size / 2;
  for (const auto& ring : s.rings) {
    if (ring.status == RingStatus::hidden) continue;
    if (ring.status != RingStatus::in_hand && (std::abs(ring.pose.p.x()) > half || std::abs(ring.pose.p.y()) > half))
      continue;
    if (ring.status != RingStatus::on_peg || s.pegs[static_cast<std::size_t>(ring.peg)].color != ring.color) return false;
  }
  return true;
}

std::string state_to_json(const SceneState& s) {
  json j;
  j["time"] = s.time;
  j["tick"] = s.ticks;
  json arms = json::array();
  for (Arm a : planner::kArms) {
    const auto& arm = s.arm(a);
    arms.push_back({{"arm", planner::to_string(a)},
                    {"p", vec(arm.pose.p)},
                    {"q", quat(arm.pose.q)},
                    {"closed", arm.closed},
                    {"held", arm.held < 0 ? json(nullptr)
                                          : json(planner::to_string(s.rings[static_cast<std::size_t>(arm.held)].color))}});
  }
  j["arms"] = arms;
  json rings = json::array();
  for (const auto& ring : s.rings) {
    json r = {{"color", planner::to_string(ring.color)},
              {"p", vec(ring.pose.p)},
              {"q", quat(ring.pose.q)},
              {"status", to_string(ring.status)}};
    r["peg"] = ring.status == RingStatus::on_peg ? json(ring.peg) : json(nullptr);
    r["holder"] = ring.holder < 0 ? json(nullptr) : json(planner::to_string(static_cast<Arm>(ring.holder)));
    rings.push_back(r);
  }
  j["rings"] = rings;
  json pegs = json::array();
  for (const auto& peg : s.pegs)
    pegs.push_back({{"color", planner::to_string(peg.color)},
                    {"base", vec(peg.base)},
                    {"height", peg.height},
                    {"occupant", peg.occupant < 0 ? json(nullptr)
                                                  : json(planner::to_string(s.rings[static_cast<std::size_t>(peg.occupant)].color))}});
  j["pegs"] = pegs;
  return j.dump();
}

World::World(const Scenario& scenario)
    : scenario_(scenario), state_(initial_state(scenario)), fired_(scenario.disturbances.size(), false) {
  for (const auto& d : scenario_.disturbances)
    if (d.at_time.has_value() == d.on_action.has_value())
      throw WorldError(WorldError::Kind::scenario, "disturbance needs exactly one trigger");
  if (scenario_.trace_every < 1) throw WorldError(WorldError::Kind::scenario, "trace_every must be >= 1");
  record();
}

void World::set_trace(std::ostream* sink) {
  trace_ = sink;
  if (trace_ && state_.ticks == 0) *trace_ << state_to_json(state_) << '\n';
}

void World::record() {
  const std::string line = state_to_json(state_) + "\n";
  trace_hash_ = fnv1a(line, trace_hash_);
  if (trace_) *trace_ << line;
}

void World::carry(int a) {
  const auto& arm = state_.arms[a];
  if (arm.held < 0) return;
  auto& ring = state_.rings[static_cast<std::size_t>(arm.held)];
  if (ring.holder != a) return;
  ring.pose = compose(arm.pose, ring.rel);
  if (ring.threaded >= 0) {
    auto& peg = state_.pegs[static_cast<std::size_t>(ring.threaded)];
    // extracted once the whole ring clears the tip
    if (ring.pose.p.z() - peg.tip().z() > state_.geometry.ring_minor) {
      if (peg.occupant == arm.held) peg.occupant = -1;
      ring.threaded = -1;
    }
  }
}

void World::detach(int r) {
  auto& ring = state_.rings[static_cast<std::size_t>(r)];
  for (auto& arm : state_.arms)
    if (arm.held == r) arm.held = -1;  // gripper stays closed on nothing
  if (ring.peg >= 0 && state_.pegs[static_cast<std::size_t>(ring.peg)].occupant == r)
    state_.pegs[static_cast<std::size_t>(ring.peg)].occupant = -1;
  if (ring.threaded >= 0 && state_.pegs[static_cast<std::size_t>(ring.threaded)].occupant == r)
    state_.pegs[static_cast<std::size_t>(ring.threaded)].occupant = -1;
  ring.peg = ring.threaded = ring.holder = ring.second = -1;
}

void World::drop_to_base(int r, bool fallen) {
  detach(r);
  auto& ring = state_.rings[static_cast<std::size_t>(r)];
  ring.pose.p.z() = state_.geometry.ring_minor;
  ring.pose.q = Quaterniond::Identity();
  ring.status = fallen ? RingStatus::fallen : RingStatus::on_base;
}

GraspResult World::attempt_grasp(Arm a, Color c) {
  auto& arm = state_.arm(a);
  if (arm.closed) throw WorldError(WorldError::Kind::bad_command, std::string(planner::to_string(a)) + " gripper is closed");
  if (arm.grasp_failure_armed) {
    arm.grasp_failure_armed = false;
    return {false, GraspFailure::disturbance};
  }
  const int r = state_.ring_index(c);
  if (r < 0) return {false, GraspFailure::too_far};
  auto& ring = state_.rings[static_cast<std::size_t>(r)];
  if (ring.status == RingStatus::hidden) return {false, GraspFailure::too_far};
  if (ring_circle_distance(arm.pose.p, ring, state_.geometry.ring_major) > state_.geometry.capture_radius)
    return {false, GraspFailure::too_far};
  arm.closed = true;
  arm.held = r;
  const int ai = planner::index(a);
  if (ring.status == RingStatus::in_hand) {
    if (ring.holder != ai) ring.second = ai;
    return {};
  }
  if (ring.status == RingStatus::on_peg) {
    ring.threaded = ring.peg;
    ring.peg = -1;
  }
  ring.status = RingStatus::in_hand;
  ring.holder = ai;
  ring.rel = relative(arm.pose, ring.pose);
  return {};
}

void World::attempt_release(Arm a) {
  auto& arm = state_.arm(a);
  if (!arm.closed) throw WorldError(WorldError::Kind::bad_command, std::string(planner::to_string(a)) + " gripper is open");
  arm.closed = false;
  const int r = arm.held;
  arm.held = -1;
  if (r < 0) return;
  auto& ring = state_.rings[static_cast<std::size_t>(r)];
  const int ai = planner::index(a);
  if (ring.second == ai) {
    ring.second = -1;
    return;
  }
  if (ring.second >= 0) {
    // hand-off: the other gripper now carries it
    ring.holder = ring.second;
    ring.second = -1;
    ring.rel = relative(state_.arms[ring.holder].pose, ring.pose);
    return;
  }
  const auto& g = state_.geometry;
  int target = ring.threaded;
  bool fallen = false;
  if (target < 0) {
    for (std::size_t k = 0; k < state_.pegs.size(); ++k) {
      const auto& peg = state_.pegs[k];
      if (lateral(ring.pose.p, peg) > g.thread_tolerance || ring.pose.p.z() < peg.tip().z()) continue;
      if (peg.occupant >= 0 && peg.occupant != r) {
        fallen = true;
        break;
      }
      target = static_cast<int>(k);
      break;
    }
    if (target < 0) fallen = true;
  }
  if (fallen) {
    drop_to_base(r, true);
    return;
  }
  detach(r);
  auto& peg = state_.pegs[static_cast<std::size_t>(target)];
  ring.status = RingStatus::on_peg;
  ring.peg = target;
  ring.pose = {peg.base + g.ring_minor * peg.axis, Quaterniond::Identity()};
  peg.occupant = r;
}

WorldEvent World::apply(const Disturbance& d) { return fire(d); }

WorldEvent World::fire(const Disturbance& d) {
  WorldEvent ev;
  ev.kind = WorldEvent::Kind::disturbance;
  ev.disturbance = d;
  ev.time = state_.time;
  const auto name = [](Color c) { return std::string(planner::to_string(c)); };
  ev.text = std::string(to_string(d.kind)) + "(";
  const int r = state_.ring_index(d.color);
  auto need_ring = [&](int idx, Color c) {
    if (idx < 0) throw WorldError(WorldError::Kind::bad_command, "no " + name(c) + " ring in the scene");
  };
  switch (d.kind) {
    case DisturbanceKind::move_ring: {
      need_ring(r, d.color);
      ev.text += name(d.color) + ")";
      if (!d.position.allFinite() || !state_.geometry.in_workspace(d.position))
        throw WorldError(WorldError::Kind::out_of_workspace, "move_ring target outside workspace");
      const bool was_hidden = state_.rings[static_cast<std::size_t>(r)].status == RingStatus::hidden;
      drop_to_base(r, false);
      auto& ring = state_.rings[static_cast<std::size_t>(r)];
      ring.pose.p = Vector3d(d.position.x(), d.position.y(), state_.geometry.ring_minor);
      if (was_hidden) ring.status = RingStatus::hidden;
      break;
    }
    case DisturbanceKind::drop_ring:
      need_ring(r, d.color);
      ev.text += name(d.color) + ")";
      if (state_.rings[static_cast<std::size_t>(r)].status != RingStatus::hidden) drop_to_base(r, true);
      break;
    case DisturbanceKind::occupy_peg: {
      const int by = state_.ring_index(d.by);
      need_ring(by, d.by);
      ev.text += name(d.color) + "," + name(d.by) + ")";
      int target = -1;
      for (std::size_t k = 0; k < state_.pegs.size(); ++k)
        if (state_.pegs[k].color == d.color && state_.pegs[k].occupant < 0) {
          target = static_cast<int>(k);
          break;
        }
      if (target < 0) {
        ev.text += " ignored: no free peg";
        break;
      }
      detach(by);
      auto& ring = state_.rings[static_cast<std::size_t>(by)];
      auto& peg = state_.pegs[static_cast<std::size_t>(target)];
      ring.status = RingStatus::on_peg;
      ring.peg = target;
      ring.pose = {peg.base + state_.geometry.ring_minor * peg.axis, Quaterniond::Identity()};
      peg.occupant = by;
      break;
    }
    case DisturbanceKind::hide_ring: {
      need_ring(r, d.color);
      ev.text += name(d.color) + ")";
      auto& ring = state_.rings[static_cast<std::size_t>(r)];
      if (ring.status == RingStatus::hidden) break;
      // a hidden ring is out of the scene: it leaves hands and pegs, remembering its peg
      const int peg = ring.status == RingStatus::on_peg ? ring.peg : -1;
      const RingStatus before = ring.status == RingStatus::in_hand ? RingStatus::fallen : ring.status;
      if (ring.status == RingStatus::in_hand) drop_to_base(r, true);
      detach(r);
      ring.before_hide = before;
      ring.peg = peg;
      ring.status = RingStatus::hidden;
      break;
    }
    case DisturbanceKind::reveal_ring: {
      need_ring(r, d.color);
      ev.text += name(d.color) + ")";
      auto& ring = state_.rings[static_cast<std::size_t>(r)];
      if (ring.status != RingStatus::hidden) break;
      if (ring.before_hide == RingStatus::on_peg && state_.pegs[static_cast<std::size_t>(ring.peg)].occupant < 0) {
        ring.status = RingStatus::on_peg;
        state_.pegs[static_cast<std::size_t>(ring.peg)].occupant = r;
      } else {
        ring.peg = -1;
        ring.status = ring.before_hide == RingStatus::fallen ? RingStatus::fallen : RingStatus::on_base;
      }
      break;
    }
    case DisturbanceKind::grasp_failure:
      ev.text += std::string(planner::to_string(d.arm)) + ")";
      state_.arm(d.arm).grasp_failure_armed = true;
      break;
  }
  return ev;
}

std::vector<WorldEvent> World::tick(const std::array<std::optional<ArmCommand>, 2>& commands, double dt) {
  if (!(dt > 0) || !std::isfinite(dt)) throw WorldError(WorldError::Kind::bad_command, "dt must be positive");
  for (int a = 0; a < 2; ++a) {
    if (!commands[a] || !commands[a]->target) continue;
    const auto& target = *commands[a]->target;
    if (!finite(target)) throw WorldError(WorldError::Kind::bad_command, "non-finite pose command");
    if (!state_.geometry.in_workspace(target.p))
      throw WorldError(WorldError::Kind::out_of_workspace,
                       std::string(planner::to_string(static_cast<Arm>(a))) + " command leaves the workspace");
  }
  std::vector<WorldEvent> events;
  for (int a = 0; a < 2; ++a)
    if (commands[a] && commands[a]->target) state_.arms[a].pose = {commands[a]->target->p, commands[a]->target->q.normalized()};
  for (int a = 0; a < 2; ++a) carry(a);
  for (int a = 0; a < 2; ++a) {
    if (!commands[a] || !commands[a]->op) continue;
    const Arm arm = static_cast<Arm>(a);
    if (*commands[a]->op == GripperOp::release) {
      attempt_release(arm);
      continue;
    }
    const auto result = attempt_grasp(arm, commands[a]->ring);
    if (!result.ok) {
      WorldEvent ev;
      ev.kind = WorldEvent::Kind::grasp_failed;
      ev.time = state_.time;
      ev.arm = arm;
      ev.reason = result.reason;
      ev.text = "grasp(" + std::string(planner::to_string(arm)) + ",ring," +
                std::string(planner::to_string(commands[a]->ring)) + ") failed: " + std::string(to_string(result.reason));
      events.push_back(ev);
    }
  }
  state_.ticks += 1;
  state_.time += dt;
  for (std::size_t i = 0; i < scenario_.disturbances.size(); ++i) {
    const auto& d = scenario_.disturbances[i];
    if (fired_[i] || !d.at_time || *d.at_time > state_.time + 1e-9) continue;
    fired_[i] = true;
    events.push_back(fire(d));
  }
  if (state_.ticks % static_cast<std::uint64_t>(scenario_.trace_every) == 0) record();
  return events;
}

std::vector<WorldEvent> World::notify_action(const std::string& action_text) {
  std::vector<WorldEvent> events;
  for (std::size_t i = 0; i < scenario_.disturbances.size(); ++i) {
    const auto& d = scenario_.disturbances[i];
    if (fired_[i] || !d.on_action || *d.on_action != action_text) continue;
    fired_[i] = true;
    events.push_back(fire(d));
  }
  return events;
}

}  // namespace pegring::world
