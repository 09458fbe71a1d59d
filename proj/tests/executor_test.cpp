#include <algorithm>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "pegring/executor/executor.hpp"

using namespace pegring;
using executor::ExecutorConfig;
using planner::AggregateMode;
using planner::Arm;
using planner::Color;
using planner::GroundAction;

namespace {

const executor::GestureModels& models() {
  static const auto m = executor::learn_default_models();
  return m;
}

executor::RunResult run_builtin(const std::string& name, AggregateMode mode,
                                executor::PerceptionSource p = executor::PerceptionSource::ground_truth) {
  ExecutorConfig cfg;
  cfg.mode = mode;
  cfg.perception = p;
  executor::Executor ex(*world::builtin_scenario(name), cfg, models());
  return ex.run();
}

std::vector<std::string> moves(const planner::Plan& plan) {
  std::vector<std::string> out;
  for (const auto& s : plan.steps)
    if (s.action.kind != planner::ActionKind::grasp && s.action.kind != planner::ActionKind::release)
      out.push_back(planner::to_string(s.action));
  return out;
}

planner::State plan_state(executor::Executor& ex) {
  const auto obs = awareness::observe(ex.world().state());
  return planner::ground_externals(awareness::compute_externals(obs, ex.world().state().geometry));
}

world::Scenario one_ring(double x, double y) {
  auto sc = *world::builtin_scenario("empty");
  sc.name = "one_ring";
  sc.rings = {{Color::red, Eigen::Vector2d(x, y), std::nullopt}};
  return sc;
}

}  // namespace

TEST_CASE("scenario A recovers from the failed grasp with one replan") {
  const auto r = run_builtin("A", AggregateMode::per_step);
  const auto& rep = r.report;
  CHECK(rep.status == executor::RunStatus::done);
  CHECK(rep.goal_satisfied);
  CHECK(rep.replans == 1);
  REQUIRE(rep.failures.size() == 1);
  CHECK(rep.failures[0].reason == awareness::FailureReason::grasp_failed);
  CHECK(rep.failures[0].action == "grasp(psm1,ring,yellow)");
  REQUIRE(rep.plans.size() == 2);
  CHECK(rep.plans[1].trigger == "grasp_failed");
  const auto first = moves(rep.plans[0].plan);
  const auto second = moves(rep.plans[1].plan);
  REQUIRE_FALSE(second.empty());
  CHECK(second.front() == "move(psm1,ring,yellow)");
  // red is handled first, so the failure comes after red is home and the new plan is yellow's tail
  const std::vector<std::string> skeleton = {"move(psm1,ring,red)",    "extract(psm1,ring,red)",
                                             "move(psm1,peg,red)",     "move(psm1,ring,yellow)",
                                             "move(psm1,center)",      "move(psm2,center)",
                                             "move(psm2,peg,yellow)"};
  CHECK(first == skeleton);
  CHECK(second == std::vector<std::string>(skeleton.begin() + 3, skeleton.end()));
  CHECK(rep.safety_violations == 0);
}

TEST_CASE("scenario B parks a blocking ring on the grey peg") {
  for (auto mode : {AggregateMode::per_step, AggregateMode::per_arm}) {
    CAPTURE(planner::to_string(mode));
    const auto r = run_builtin("B", mode);
    CHECK(r.report.status == executor::RunStatus::done);
    CHECK(r.report.goal_satisfied);
    CHECK(r.report.replans == 0);
    REQUIRE_FALSE(r.report.plans.empty());
    const auto m = moves(r.report.plans[0].plan);
    CHECK(std::find(m.begin(), m.end(), "move(psm1,peg,grey)") != m.end());
  }
}

TEST_CASE("scenario C finishes sooner with both arms working") {
  const auto step = run_builtin("C", AggregateMode::per_step);
  const auto arm = run_builtin("C", AggregateMode::per_arm);
  CHECK(step.report.goal_satisfied);
  CHECK(arm.report.goal_satisfied);
  CHECK(arm.report.total_sim_time < step.report.total_sim_time);
  // two moves of one timestep overlap in sim time
  bool overlap = false;
  const auto& ex = arm.report.executed;
  for (std::size_t i = 0; i + 1 < ex.size(); ++i)
    for (std::size_t k = i + 1; k < ex.size(); ++k)
      if (ex[i].t == ex[k].t && ex[i].action.rfind("move", 0) == 0 && ex[k].action.rfind("move", 0) == 0 &&
          ex[i].start < ex[k].end && ex[k].start < ex[i].end)
        overlap = true;
  CHECK(overlap);
}

TEST_CASE("every scenario completes in both modes, clear of the pegs") {
  for (const auto& name : world::builtin_names())
    for (auto mode : {AggregateMode::per_step, AggregateMode::per_arm}) {
      CAPTURE(name);
      CAPTURE(planner::to_string(mode));
      const auto sc = *world::builtin_scenario(name);
      const auto r = run_builtin(name, mode);
      CHECK(r.report.status == executor::RunStatus::done);
      CHECK(r.report.goal_satisfied);
      CHECK(r.report.safety_violations == 0);
      CHECK(executor::min_peg_clearance(r.trajectory, world::initial_state(sc)) >= 0.005);
    }
}

TEST_CASE("runs are deterministic") {
  const auto a = run_builtin("A", AggregateMode::per_arm);
  const auto b = run_builtin("A", AggregateMode::per_arm);
  CHECK(executor::report_to_json(a.report) == executor::report_to_json(b.report));
  CHECK(a.report.trace_hash == b.report.trace_hash);
  CHECK(a.report.trace_hash != 0);
}

TEST_CASE("report round-trips through JSON") {
  const auto r = run_builtin("A", AggregateMode::per_step);
  const auto text = executor::report_to_json(r.report);
  const auto back = executor::report_from_json(text);
  CHECK(executor::report_to_json(back) == text);
  CHECK(back.plans.size() == r.report.plans.size());
  CHECK(back.plans[0].plan == r.report.plans[0].plan);
  CHECK(text.find("planning_wall_ms") == std::string::npos);
  CHECK(executor::report_to_json(r.report, true).find("planning_wall_ms") != std::string::npos);
  CHECK_THROWS(executor::report_from_json("{}"));
}

TEST_CASE("trajectory CSV round trip") {
  const auto r = run_builtin("C", AggregateMode::per_arm);
  const auto path = std::filesystem::temp_directory_path() / "pegring_traj_test.csv";
  executor::save_trajectory_csv(r.trajectory, path);
  const auto back = executor::load_trajectory_csv(path);
  REQUIRE(back.size() == r.trajectory.size());
  for (std::size_t i = 0; i < back.size(); i += 37) {
    CHECK(back[i].t == doctest::Approx(r.trajectory[i].t));
    CHECK((back[i].arms[1].p - r.trajectory[i].arms[1].p).norm() < 1e-12);
    CHECK(back[i].closed == r.trajectory[i].closed);
  }
  std::filesystem::remove(path);
  CHECK_THROWS_AS(executor::load_trajectory_csv(path), executor::ExecutorError);
}

TEST_CASE("execute_step follows a ring moved mid-rollout") {
  auto sc = one_ring(-0.02, 0.0);
  world::Disturbance d;
  d.kind = world::DisturbanceKind::move_ring;
  d.color = Color::red;
  d.position = Eigen::Vector3d(-0.02, 0.02, 0.0);
  d.at_time = 0.5;
  sc.disturbances.push_back(d);
  executor::Executor ex(sc, {}, models());
  std::optional<awareness::FailureEvent> failure;
  const auto out = ex.execute_step({GroundAction::move_ring(Arm::psm1, Color::red)}, plan_state(ex), &failure);
  INFO((failure ? failure->explanation : std::string()));
  REQUIRE(out == executor::StepOutcome::completed);
  const auto* ring = ex.world().state().ring(Color::red);
  REQUIRE(ring);
  CHECK(ring->pose.p.y() == doctest::Approx(0.02));
  // the gripper ends on the moved ring's rim, close enough to grasp
  const double rim = std::abs((ex.world().state().arm(Arm::psm1).pose.p - ring->pose.p).head<2>().norm() -
                              ex.world().state().geometry.ring_major);
  CHECK(rim < 0.004);
  const auto g = ex.execute_step({GroundAction::grasp(Arm::psm1, Color::red)}, plan_state(ex), &failure);
  CHECK(g == executor::StepOutcome::completed);
  CHECK(ex.world().state().arm(Arm::psm1).held == ex.world().state().ring_index(Color::red));
}

TEST_CASE("a ring hidden mid-rollout interrupts within one observation cycle") {
  for (auto source : {executor::PerceptionSource::ground_truth, executor::PerceptionSource::synthetic}) {
    CAPTURE(executor::to_string(source));
    auto sc = one_ring(-0.02, 0.0);
    world::Disturbance d;
    d.kind = world::DisturbanceKind::hide_ring;
    d.color = Color::red;
    d.at_time = 0.3;
    sc.disturbances.push_back(d);
    ExecutorConfig cfg;
    cfg.perception = source;
    executor::Executor ex(sc, cfg, models());
    std::optional<awareness::FailureEvent> failure;
    const auto out = ex.execute_step({GroundAction::move_ring(Arm::psm1, Color::red)}, plan_state(ex), &failure);
    REQUIRE(out == executor::StepOutcome::interrupted);
    REQUIRE(failure);
    CHECK(failure->reason == awareness::FailureReason::ring_not_retrieved);
    const int cycle = source == executor::PerceptionSource::ground_truth ? 1 : cfg.perception_every;
    CHECK(failure->time - 0.3 <= cycle * cfg.dt + 1e-9);
  }
}

TEST_CASE("unreachable targets time out") {
  auto sc = one_ring(-0.02, 0.0);
  ExecutorConfig cfg;
  cfg.action_timeout = 0.2;
  executor::Executor ex(sc, cfg, models());
  std::optional<awareness::FailureEvent> failure;
  const auto out = ex.execute_step({GroundAction::move_ring(Arm::psm1, Color::red)}, plan_state(ex), &failure);
  REQUIRE(out == executor::StepOutcome::interrupted);
  CHECK(failure->reason == awareness::FailureReason::timeout);
}

TEST_CASE("a dropped ring mid-run triggers a replan and still finishes") {
  auto sc = *world::builtin_scenario("C");
  world::Disturbance d;
  d.kind = world::DisturbanceKind::drop_ring;
  d.color = Color::red;
  d.on_action = "move(psm1,peg,red)";
  sc.disturbances.push_back(d);
  ExecutorConfig cfg;
  executor::Executor ex(sc, cfg, models());
  const auto r = ex.run();
  CHECK(r.report.goal_satisfied);
  CHECK(r.report.replans >= 1);
  REQUIRE_FALSE(r.report.failures.empty());
  CHECK(r.report.failures[0].reason == awareness::FailureReason::ring_fallen);
  // the new plan is grounded from the post-failure scene: red is loose, not in hand
  const auto& ext = r.report.plans[1].externals;
  CHECK(std::find(ext.begin(), ext.end(), "in_hand(psm1,ring,red)") == ext.end());
  CHECK(std::find(ext.begin(), ext.end(), "reachable(psm1,ring,red)") != ext.end());
}

TEST_CASE("scenario A runs on synthetic perception") {
  const auto r = run_builtin("A", AggregateMode::per_step, executor::PerceptionSource::synthetic);
  CHECK(r.report.status == executor::RunStatus::done);
  CHECK(r.report.goal_satisfied);
  CHECK(r.report.replans == 1);
}

TEST_CASE("models save and load") {
  const auto dir = std::filesystem::temp_directory_path() / "pegring_models_test";
  executor::save_models(models(), dir);
  const auto back = executor::load_models(dir);
  for (auto g : executor::kGestures) CHECK(dmp::model_to_json(back[g]) == dmp::model_to_json(models()[g]));
  std::filesystem::remove(dir / "move_peg.json");
  CHECK_THROWS_AS(executor::load_models(dir), executor::ExecutorError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("bad demo configuration") {
  executor::DemoConfig cfg;
  cfg.count = 0;
  CHECK_THROWS_AS(executor::generate_demos(executor::Gesture::move_ring, cfg), executor::ExecutorError);
  CHECK(executor::parse_gesture("move_peg") == executor::Gesture::move_peg);
  CHECK_FALSE(executor::parse_gesture("wave"));
}
