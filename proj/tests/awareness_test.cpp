#include <random>

#include "doctest.h"
#include "json.hpp"
#include "pegring/awareness/awareness.hpp"

using namespace pegring::awareness;
using pegring::planner::GroundAction;
using pegring::planner::ObjectClass;
using pegring::world::Scenario;
using pegring::world::World;
namespace at = pegring::planner::atoms;
namespace world = pegring::world;

namespace {

using Commands = std::array<std::optional<world::ArmCommand>, 2>;

Commands move_to(Arm a, const Vector3d& p) {
  Commands c;
  c[pegring::planner::index(a)] = world::ArmCommand{world::Pose{p, world::down_orientation()}, std::nullopt, Color::red};
  return c;
}

std::set<GroundAtom> without_distances(const std::set<GroundAtom>& atoms) {
  std::set<GroundAtom> out;
  for (const auto& a : atoms)
    if (a.predicate != pegring::planner::Predicate::distance) out.insert(a);
  return out;
}

std::vector<Vector3d> circle(const Vector3d& c, double r, int n, double phase = 0.0) {
  std::vector<Vector3d> out;
  for (int k = 0; k < n; ++k) {
    const double a = phase + 2.0 * M_PI * k / n;
    out.push_back(c + r * Vector3d(std::cos(a), std::sin(a), 0.0));
  }
  return out;
}

}  // namespace

TEST_CASE("scenario A externals from an observation") {
  World w(*world::builtin_scenario("A"));
  const auto ext = compute_externals(observe(w.state()), w.state().geometry);
  CHECK(ext == world::ground_truth_atoms(w.state()));
  const std::set<GroundAtom> expected = {at::reachable(Arm::psm1, ObjectClass::ring, Color::red),
                                         at::reachable(Arm::psm1, ObjectClass::ring, Color::yellow),
                                         at::reachable(Arm::psm1, ObjectClass::peg, Color::red),
                                         at::reachable(Arm::psm1, ObjectClass::peg, Color::blue),
                                         at::reachable(Arm::psm2, ObjectClass::peg, Color::yellow),
                                         at::reachable(Arm::psm2, ObjectClass::peg, Color::green),
                                         at::on(Color::red, Color::grey)};
  CHECK(without_distances(ext) == expected);
  CHECK(ext.size() == expected.size() + 2);
}

TEST_CASE("threading and holding geometry") {
  const auto g = world::GeometryConfig{};
  Observation obs;
  obs.pegs = {{Color::red, Vector3d(-0.03, 0.02, 0.0)}};
  obs.arms[0].pose.p = Vector3d(-0.04, 0.0, 0.05);
  obs.arms[1].pose.p = Vector3d(0.04, 0.0, 0.05);
  SUBCASE("ring on the peg axis at base height") {
    obs.rings[pegring::planner::index(Color::blue)] = RingObs{Vector3d(-0.03, 0.02, g.ring_minor), Vector3d::UnitZ()};
    CHECK(compute_externals(obs, g).count(at::on(Color::blue, Color::red)));
  }
  SUBCASE("held ring") {
    const RingObs ring{Vector3d(-0.01, 0.0, 0.04), Vector3d::UnitZ()};
    obs.rings[pegring::planner::index(Color::green)] = ring;
    obs.arms[0].pose.p = ring.center + Vector3d(g.ring_major, 0, 0);
    obs.arms[0].closed = true;
    const auto ext = compute_externals(obs, g);
    CHECK(ext.count(at::in_hand(Arm::psm1, Color::green)));
    CHECK(ext.count(at::distance(Arm::psm1, Color::green, 0)));
    CHECK(ext.count(at::closed_gripper(Arm::psm1)));
    CHECK_FALSE(ext.count(at::reachable(Arm::psm1, ObjectClass::ring, Color::green)));
  }
  SUBCASE("open gripper at the rim holds nothing") {
    const RingObs ring{Vector3d(-0.01, 0.0, 0.04), Vector3d::UnitZ()};
    obs.rings[pegring::planner::index(Color::green)] = ring;
    obs.arms[0].pose.p = ring.center + Vector3d(g.ring_major, 0, 0);
    CHECK_FALSE(compute_externals(obs, g).count(at::in_hand(Arm::psm1, Color::green)));
  }
}

TEST_CASE("grasp point") {
  SUBCASE("one peg: diametrically opposite point") {
    const Vector3d c(0.01, -0.02, 0.0015);
    const auto pts = circle(c, 0.008, 72);
    const Vector3d peg(0.01 + 0.03, -0.02, 0.0);
    const auto t = grasp_point(pts, {peg});
    CHECK((t.position - (c - Vector3d(0.008, 0, 0))).norm() < 1e-12);
    CHECK(t.kind == TargetPose::Kind::grasp);
    CHECK((t.orientation * Vector3d::UnitZ() - Vector3d(0, 0, -1)).norm() < 1e-12);
    CHECK(std::abs(t.orientation.norm() - 1.0) < 1e-12);
  }
  SUBCASE("exhaustive argmax oracle, serial and parallel agree") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-0.05, 0.05);
    std::uniform_int_distribution<int> count(8, 3000), npegs(1, 6);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<Vector3d> pts;
      const Vector3d c(u(rng), u(rng), 0.0);
      std::normal_distribution<double> noise(0.0, 5e-4);
      for (const auto& p : circle(c, 0.008, count(rng), u(rng))) pts.push_back(p + Vector3d(noise(rng), noise(rng), noise(rng)));
      if (trial % 10 == 0) pts.push_back(pts[3]);  // exact tie
      std::vector<Vector3d> pegs;
      for (int k = npegs(rng); k > 0; --k) pegs.emplace_back(u(rng), u(rng), 0.0);

      std::size_t oracle = 0;
      double best = -1, best_sqrt = -1;
      std::size_t oracle_sqrt = 0;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        double v = 0;
        for (const auto& p : pegs) v += (pts[i] - p).squaredNorm();
        if (v > best) best = v, oracle = i;
        if (std::sqrt(v) > best_sqrt) best_sqrt = std::sqrt(v), oracle_sqrt = i;
      }
      CHECK(grasp_index(pts, pegs) == oracle);
      CHECK(grasp_index_serial(pts, pegs) == oracle);
      CHECK(oracle_sqrt == oracle);
    }
  }
  SUBCASE("ties go to the smallest index") {
    std::vector<Vector3d> pts(20, Vector3d(0.01, 0.0, 0.0));
    pts[0] = Vector3d(0.0, 0.0, 0.0);
    CHECK(grasp_index(pts, {Vector3d(-0.02, 0, 0)}) == 1);
  }
  SUBCASE("degenerate input") {
    std::vector<Vector3d> line;
    for (int k = 0; k < 8; ++k) line.emplace_back(0.001 * k, 0.0, 0.0);
    try {
      grasp_point(line, {Vector3d::Zero()});
      FAIL("expected DegenerateRing");
    } catch (const AwarenessError& e) {
      CHECK(e.kind == AwarenessError::Kind::degenerate_ring);
    }
    CHECK_THROWS_AS(grasp_point(circle(Vector3d::Zero(), 0.008, 7), {Vector3d::Zero()}), AwarenessError);
    CHECK_THROWS_AS(grasp_point(circle(Vector3d::Zero(), 0.008, 9), {}), AwarenessError);
  }
  SUBCASE("tilted ring: approach along the plane normal") {
    const Quaterniond tilt(Eigen::AngleAxisd(0.4, Vector3d(1, 1, 0).normalized()));
    std::vector<Vector3d> pts;
    for (const auto& p : circle(Vector3d::Zero(), 0.008, 40)) pts.push_back(tilt * p);
    const auto t = grasp_point(pts, {Vector3d(0.03, 0, 0)});
    const Vector3d n = tilt * Vector3d::UnitZ();
    CHECK((t.orientation * Vector3d::UnitZ() + n).norm() < 1e-9);
  }
}

TEST_CASE("peg target") {
  const PegObs peg{Color::red, Vector3d(-0.035, 0.03, 0.0), Vector3d::UnitZ(), 0.02};
  const auto t = peg_target(peg);
  CHECK((t.position - Vector3d(-0.035, 0.03, 0.035)).norm() < 1e-15);
  CHECK(t.kind == TargetPose::Kind::peg_approach);
  CHECK((t.orientation * Vector3d::UnitZ() - Vector3d(0, 0, -1)).norm() < 1e-9);
  CHECK((peg_target(peg, 0.0).position - peg.tip()).norm() == 0.0);
}

TEST_CASE("transfer target") {
  const double R = 0.008;
  SUBCASE("grasp at 0 degrees, take at 180") {
    const RingObs ring{Vector3d(0.0, 0.0, 0.04), Vector3d::UnitZ()};
    const auto t = transfer_target(ring.center + Vector3d(R, 0, 0), ring, R);
    CHECK((t.position - (ring.center - Vector3d(R, 0, 0))).norm() < 1e-15);
    CHECK(t.kind == TargetPose::Kind::transfer_take);
  }
  SUBCASE("diameter and rotated planes") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int k = 0; k < 100; ++k) {
      const Quaterniond q = Quaterniond(u(rng), u(rng), u(rng), u(rng)).normalized();
      const RingObs ring{Vector3d(u(rng), u(rng), u(rng)) * 0.05, q * Vector3d::UnitZ()};
      const double angle = M_PI * u(rng);
      const Vector3d grasp = ring.center + q * Vector3d(R * std::cos(angle), R * std::sin(angle), 0.0);
      const auto t = transfer_target(grasp, ring, R);
      CHECK(std::abs((t.position - grasp).norm() - 2 * R) < 1e-9);
      // in the ring plane, through the center
      CHECK(std::abs((t.position - ring.center).dot(ring.normal)) < 1e-12);
      CHECK(((t.position + grasp) / 2 - ring.center).norm() < 1e-12);
    }
  }
}

TEST_CASE("stale pegs") {
  PegMemory memory;
  std::vector<PegObs> pegs = {{Color::red, Vector3d(-0.035, 0.03, 0)}, {Color::grey, Vector3d(0.045, 0, 0)}};
  memory.check(pegs);
  pegs[1].base.x() += 0.0015;
  CHECK(memory.check(pegs)[1].base.x() == 0.045);
  pegs[1].base.x() += 0.001;
  try {
    memory.check(pegs);
    FAIL("expected StalePegs");
  } catch (const AwarenessError& e) {
    CHECK(e.kind == AwarenessError::Kind::stale_pegs);
  }
  pegs.pop_back();
  CHECK_THROWS_AS(memory.check(pegs), AwarenessError);
}

TEST_CASE("monitor branches") {
  SUBCASE("hidden ring during move to ring") {
    World w(*world::builtin_scenario("A"));
    const auto action = GroundAction::move_ring(Arm::psm1, Color::yellow);
    CHECK_FALSE(monitor(action, {}, observe(w.state()), w.state().geometry));
    world::Disturbance d;
    d.kind = world::DisturbanceKind::hide_ring;
    d.color = Color::yellow;
    w.apply(d);
    const auto ev = monitor(action, {}, observe(w.state()), w.state().geometry);
    REQUIRE(ev);
    CHECK(ev->reason == FailureReason::ring_not_retrieved);
    CHECK(ev->explanation.find("move(psm1,ring,yellow)") != std::string::npos);
    CHECK(ev->explanation.find("ring yellow") != std::string::npos);
    CHECK(ev->explanation.find("branch: ring not retrieved") != std::string::npos);
    const auto j = nlohmann::json::parse(to_json_line(*ev));
    CHECK(j["reason"] == "ring_not_retrieved");
    CHECK(j["action"] == "move(psm1,ring,yellow)");
  }
  SUBCASE("peg occupied and ring fallen while carrying, within one tick") {
    auto sc = *world::builtin_scenario("C");
    world::Disturbance occupy;
    occupy.kind = world::DisturbanceKind::occupy_peg;
    occupy.color = Color::red;
    occupy.by = Color::blue;
    occupy.at_time = 0.1;
    sc.disturbances.push_back(occupy);
    World w(sc);
    const auto& g = w.state().geometry;
    w.tick(move_to(Arm::psm1, world::ring_point(*w.state().ring(Color::red), g.ring_major, 0.0)), 0.01);
    REQUIRE(w.attempt_grasp(Arm::psm1, Color::red).ok);
    const auto action = GroundAction::move_peg(Arm::psm1, Color::red);
    auto obs = observe(w.state());
    MonitorContext ctx;
    ctx.held = Color::red;
    ctx.carry_offset_z = obs.arms[0].pose.p.z() - obs.ring(Color::red)->center.z();
    ctx.target_peg = destination_peg(obs, g, Arm::psm1, Color::red, Color::red);
    CHECK(ctx.target_peg == 0);
    std::optional<FailureEvent> ev;
    int fired_at = -1, seen_at = -1;
    for (int k = 1; k <= 20 && !ev; ++k) {
      const auto events = w.tick(move_to(Arm::psm1, w.state().arm(Arm::psm1).pose.p + Vector3d(0, 0, 0.001)), 0.01);
      if (!events.empty()) fired_at = k;
      ev = monitor(action, ctx, observe(w.state()), g);
      if (ev) seen_at = k;
    }
    REQUIRE(ev);
    CHECK(ev->reason == FailureReason::peg_occupied);
    CHECK(seen_at == fired_at);
    CHECK(ev->explanation.find("peg red") != std::string::npos);

    world::Disturbance drop;
    drop.kind = world::DisturbanceKind::drop_ring;
    drop.color = Color::red;
    w.apply(drop);
    const auto fell = monitor(GroundAction::move_center(Arm::psm1), ctx, observe(w.state()), g);
    REQUIRE(fell);
    CHECK(fell->reason == FailureReason::ring_fallen);
    CHECK(fell->explanation.find("branch: ring fallen") != std::string::npos);
  }
  SUBCASE("grey destination is the nearest free grey peg on the arm's side") {
    auto sc = *world::builtin_scenario("B");
    sc.geometry.pegs.push_back({Color::grey, Eigen::Vector2d(-0.045, 0.05)});
    sc.geometry.pegs.push_back({Color::grey, Eigen::Vector2d(0.045, 0.0)});
    World w(sc);
    const auto obs = observe(w.state());
    CHECK(destination_peg(obs, w.state().geometry, Arm::psm1, Color::grey) == 4);
    CHECK(destination_peg(obs, w.state().geometry, Arm::psm2, Color::grey) == 6);
  }
  SUBCASE("grasp failures and timeouts carry explanations") {
    const auto e = grasp_failure_event(GroundAction::grasp(Arm::psm1, Color::yellow), world::GraspFailure::disturbance,
                                       false, 1.5);
    CHECK(e.reason == FailureReason::grasp_failed);
    CHECK(e.explanation.find("grasp(psm1,ring,yellow)") != std::string::npos);
    const auto t = timeout_event(GroundAction::move_center(Arm::psm2), 5.0, 9.0);
    CHECK(t.reason == FailureReason::timeout);
    CHECK_FALSE(t.explanation.empty());
  }
}

namespace {

// random but physically sensible scene: rings spread apart, grippers only close on rings,
// releases only over free pegs or open base away from everything
Scenario random_layout(std::mt19937_64& rng) {
  auto sc = *world::builtin_scenario("empty");
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  std::uniform_int_distribution<int> greys(0, 3);
  for (int k = greys(rng); k > 0; --k) {
    for (int attempt = 0; attempt < 50; ++attempt) {
      const Eigen::Vector2d p(u(rng), u(rng));
      bool ok = true;
      for (const auto& peg : sc.geometry.pegs) ok = ok && (peg.position - p).norm() > 0.02;
      if (ok) {
        sc.geometry.pegs.push_back({Color::grey, p});
        break;
      }
    }
  }
  std::vector<Eigen::Vector2d> taken;
  for (const auto& peg : sc.geometry.pegs) taken.push_back(peg.position);
  std::vector<bool> peg_used(sc.geometry.pegs.size(), false);
  for (Color c : pegring::planner::kColors) {
    if (rng() % 5 == 0) continue;
    if (rng() % 3 == 0) {
      const auto k = static_cast<std::size_t>(rng() % sc.geometry.pegs.size());
      if (!peg_used[k]) {
        peg_used[k] = true;
        sc.rings.push_back({c, std::nullopt, static_cast<int>(k)});
        continue;
      }
    }
    for (int attempt = 0; attempt < 100; ++attempt) {
      const Eigen::Vector2d p(u(rng), u(rng));
      bool ok = true;
      for (const auto& t : taken) ok = ok && (t - p).norm() > 0.026;
      if (ok) {
        taken.push_back(p);
        sc.rings.push_back({c, p, std::nullopt});
        break;
      }
    }
  }
  return sc;
}

void random_actions(World& w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> angle(-M_PI, M_PI), lift(0.0, 0.04), u(-0.05, 0.05);
  const auto& g = w.state().geometry;
  const int steps = static_cast<int>(rng() % 7);
  for (int s = 0; s < steps; ++s) {
    const auto& st = w.state();
    const Arm a = rng() % 2 ? Arm::psm1 : Arm::psm2;
    const auto& arm = st.arm(a);
    if (!arm.closed) {
      // approach and grasp some ring on this arm's side (or the other arm's ring at height)
      std::vector<int> options;
      for (std::size_t i = 0; i < st.rings.size(); ++i) {
        const auto& r = st.rings[i];
        if (r.status == world::RingStatus::hidden) continue;
        if (r.status == world::RingStatus::in_hand) {
          if (r.pose.p.z() > 0.03 && r.second < 0) options.push_back(static_cast<int>(i));
        } else if (world::side_of(r.pose.p) == a) {
          options.push_back(static_cast<int>(i));
        }
      }
      if (options.empty()) continue;
      const auto& r = st.rings[static_cast<std::size_t>(options[rng() % options.size()])];
      double phi = angle(rng);
      if (r.status == world::RingStatus::in_hand) {
        // the opposite side of the current holder
        const Vector3d rel = st.arms[r.holder].pose.p - r.pose.p;
        phi = std::atan2(rel.y(), rel.x()) + M_PI;
      }
      const Color color = r.color;
      w.tick(move_to(a, world::ring_point(r, g.ring_major, phi)), 0.01);
      w.attempt_grasp(a, color);
      continue;
    }
    const int held = arm.held;
    if (held < 0) {
      w.attempt_release(a);
      continue;
    }
    const auto& ring = st.rings[static_cast<std::size_t>(held)];
    const Vector3d offset = arm.pose.p - ring.pose.p;
    if (ring.second >= 0 || ring.holder != pegring::planner::index(a)) {
      w.attempt_release(a);
      continue;
    }
    const int choice = static_cast<int>(rng() % 4);
    if (choice == 0 || ring.pose.p.z() < 0.03) {
      // straight up (may stay threaded)
      w.tick(move_to(a, arm.pose.p + Vector3d(0, 0, lift(rng))), 0.01);
    } else if (choice == 1) {
      // over a free peg, then let go
      std::vector<int> free;
      for (std::size_t k = 0; k < st.pegs.size(); ++k)
        if (st.pegs[k].occupant < 0) free.push_back(static_cast<int>(k));
      if (free.empty()) continue;
      const auto& peg = st.pegs[static_cast<std::size_t>(free[rng() % free.size()])];
      const Vector3d jitter(0.002 * std::cos(angle(rng)), 0.002 * std::sin(angle(rng)), 0.0);
      w.tick(move_to(a, peg.tip() + Vector3d(0, 0, 0.015) + jitter + offset), 0.01);
      w.attempt_release(a);
    } else if (choice == 2) {
      // open base far from everything
      for (int attempt = 0; attempt < 50; ++attempt) {
        const Vector3d p(u(rng), u(rng), 0.04);
        bool ok = true;
        for (const auto& peg : st.pegs) ok = ok && (peg.base.head<2>() - p.head<2>()).norm() > 0.02;
        for (std::size_t i = 0; i < st.rings.size(); ++i)
          if (static_cast<int>(i) != held) ok = ok && (st.rings[i].pose.p.head<2>() - p.head<2>()).norm() > 0.026;
        for (const auto& other : st.arms) ok = ok && (other.pose.p - (p + offset)).norm() > 0.03;
        if (!ok || !g.in_workspace(p + offset)) continue;
        w.tick(move_to(a, p + offset), 0.01);
        w.attempt_release(a);
        break;
      }
    } else {
      w.tick(move_to(a, Vector3d(0.0, 0.0, 0.045) + offset), 0.01);
    }
  }
}

}  // namespace

TEST_CASE("ground-truth externals match the scene on 1000 random scenes") {
  std::mt19937_64 rng(2024);
  int mismatches = 0;
  int held_scenes = 0, threaded_scenes = 0, handoffs = 0;
  for (int scene = 0; scene < 1000; ++scene) {
    World w(random_layout(rng));
    random_actions(w, rng);
    const auto& s = w.state();
    for (const auto& r : s.rings) {
      held_scenes += r.status == world::RingStatus::in_hand;
      threaded_scenes += r.threaded >= 0;
      handoffs += r.second >= 0;
    }
    const auto truth = world::ground_truth_atoms(s);
    const auto ext = compute_externals(observe(s), s.geometry);
    if (truth != ext) {
      ++mismatches;
      if (mismatches <= 3) {
        std::string diff;
        for (const auto& a : truth)
          if (!ext.count(a)) diff += " -" + pegring::planner::to_string(a);
        for (const auto& a : ext)
          if (!truth.count(a)) diff += " +" + pegring::planner::to_string(a);
        MESSAGE("scene " << scene << ":" << diff);
      }
    }
  }
  CHECK(mismatches == 0);
  // the generator reaches the interesting states
  CHECK(held_scenes > 100);
  CHECK(threaded_scenes > 10);
  CHECK(handoffs > 10);
}
