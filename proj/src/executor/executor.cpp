#include <chrono>
#include <cmath>
#include <map>
#include <thread>

#include "json.hpp"
#include "pegring/executor/executor.hpp"

namespace pegring::executor {

using awareness::FailureEvent;
using json = nlohmann::json;
namespace at = planner::atoms;

std::string_view to_string(PerceptionSource p) {
  return p == PerceptionSource::ground_truth ? "gt" : "synth";
}

std::optional<PerceptionSource> parse_perception(std::string_view text) {
  if (text == "gt" || text == "ground_truth") return PerceptionSource::ground_truth;
  if (text == "synth" || text == "synthetic") return PerceptionSource::synthetic;
  return std::nullopt;
}

std::string_view to_string(RunStatus s) { return s == RunStatus::done ? "done" : "failed_permanently"; }

namespace {

std::optional<Color> held_by(const planner::State& s, Arm a) {
  for (auto c : planner::kColors)
    if (s.holds(at::in_hand(a, c))) return c;
  return std::nullopt;
}

double lateral(const Vector3d& x, const awareness::PegObs& peg) {
  const Vector3d d = x - peg.base;
  return (d - d.dot(peg.axis) * peg.axis).norm();
}

double min_jerk(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * u * (10 - 15 * u + 6 * u * u);
}

Vector3d clamp_to(const Vector3d& p, const world::GeometryConfig& g) {
  return p.cwiseMax(g.workspace_min).cwiseMin(g.workspace_max);
}

std::uint64_t frame_seed(std::uint64_t seed, std::uint64_t tick) {
  std::uint64_t x = seed * 0x9e3779b97f4a7c15ull + tick;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  return x ^ (x >> 31);
}

}  // namespace

struct Executor::ArmTask {
  GroundAction action;
  enum class Phase { move, gripper, extract, done } phase = Phase::done;
  std::optional<Gesture> gesture;
  dmp::DmpState dmp;
  double start = 0.0;
  awareness::MonitorContext ctx;
  std::vector<int> skip;            // pegs left out of the obstacle field
  Vector3d carry = Vector3d::Zero();  // gripper minus ring center, for carried rings
  Quaterniond hold = Quaterniond::Identity();
  bool give = false;
  std::optional<Color> take;        // move_center without a ring: the ring to take over
  bool settled = false;             // take: a frame was seen after the giver stopped
  int dwell = 0;
  bool op_sent = false;
  Vector3d from = Vector3d::Zero(), to = Vector3d::Zero();
  int executed = -1;                // index into the report's executed list
};

Executor::Executor(const world::Scenario& scenario, ExecutorConfig cfg, GestureModels models)
    : scenario_(scenario), cfg_(std::move(cfg)), models_(std::move(models)), world_(scenario) {
  if (!(cfg_.dt > 0) || cfg_.replan_budget < 0 || !(cfg_.action_timeout > 0) || cfg_.perception_every < 1 ||
      !(cfg_.tau > 0) || !(cfg_.converge_tol > 0) || !(cfg_.speed > 0))
    throw ExecutorError(ExecutorError::Kind::config, "invalid executor configuration");
  speed_ = cfg_.speed;
}

awareness::Observation Executor::snapshot() {
  const auto& s = world_.state();
  if (cfg_.perception == PerceptionSource::ground_truth) return awareness::observe(s);
  auto rc = cfg_.render;
  rc.seed = frame_seed(cfg_.seed, s.ticks);
  const auto pcfg = perception::config_for(s.geometry, rc.seed);
  const auto cloud = perception::subsample(perception::render_cloud(s, rc), pcfg.leaf);
  if (!pegs_) {
    // pegs are identified once, on the first frame
    const auto est = perception::estimate_plane_and_pegs(cloud, pcfg);
    pegs_ = peg_memory_.check(est.pegs);
  }
  return perception::to_observation(perception::segment_rings(cloud, pcfg), *pegs_, s);
}

const awareness::Observation& Executor::refresh(bool force) {
  const auto ticks = world_.state().ticks;
  if (obs_tick_ == ticks) return obs_;
  const bool due = cfg_.perception == PerceptionSource::ground_truth || force || obs_tick_ == ~0ull ||
                   ticks % static_cast<std::uint64_t>(cfg_.perception_every) == 0;
  if (due) {
    obs_ = snapshot();
    obs_tick_ = ticks;
  }
  return obs_;
}

std::vector<dmp::Obstacle> Executor::obstacles(const std::vector<int>& skip, const Vector3d& target) const {
  std::vector<dmp::Obstacle> out;
  for (std::size_t k = 0; k < obs_.pegs.size(); ++k) {
    if (std::find(skip.begin(), skip.end(), static_cast<int>(k)) != skip.end()) continue;
    dmp::Obstacle o = cfg_.obstacle;
    o.position = obs_.pegs[k].base;
    o.height = obs_.pegs[k].height;
    // a target inside the influence zone (a rim point next to a peg) would never be reached
    o.r_infl = std::min(o.r_infl, std::max(0.0, dmp::obstacle_distance(target, o) - 0.002));
    out.push_back(o);
  }
  return out;
}

void Executor::publish(const std::string& line) {
  if (supervisor_) supervisor_->publish(line);
}

void Executor::publish_state() {
  if (!supervisor_) return;
  json j = json::parse(world::state_to_json(world_.state()));
  j["type"] = "state";
  publish(j.dump());
}

void Executor::supervise() {
  if (!supervisor_) return;
  for (;;) {
    for (const auto& cmd : supervisor_->poll()) {
      switch (cmd.kind) {
        case SupervisorCommand::Kind::pause: paused_ = true; break;
        case SupervisorCommand::Kind::resume: paused_ = false; break;
        case SupervisorCommand::Kind::set_speed: speed_ = cmd.speed; break;
        case SupervisorCommand::Kind::disturbance:
          try {
            const auto ev = world_.apply(cmd.disturbance);
            publish(json{{"type", "event"}, {"time", ev.time}, {"text", ev.text}}.dump());
          } catch (const world::WorldError& e) {
            publish(json{{"type", "error"}, {"message", e.what()}}.dump());
          }
          obs_tick_ = ~0ull;  // the scene changed under the last observation
          break;
      }
    }
    if (!paused_) return;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
}

bool Executor::start_task(ArmTask& task, const planner::State& plan_state, std::optional<FailureEvent>* failure) {
  const auto& g = world_.state().geometry;
  const auto& a = task.action;
  const int ai = planner::index(a.arm);
  const auto& arm = obs_.arms[ai];
  task.start = world_.state().time;
  task.gesture = gesture_of(a);
  task.ctx = {};
  task.skip.clear();
  task.hold = arm.pose.q;
  const auto held = held_by(plan_state, a.arm);
  switch (a.kind) {
    case planner::ActionKind::move_ring: {
      task.phase = ArmTask::Phase::move;
      break;
    }
    case planner::ActionKind::move_peg:
    case planner::ActionKind::move_center: {
      task.phase = ArmTask::Phase::move;
      task.ctx.held = held;
      if (held) {
        if (const auto& ring = obs_.ring(*held)) {
          task.carry = arm.pose.p - ring->center;
          task.ctx.carry_offset_z = arm.pose.p.z() - ring->center.z();
        }
      }
      if (a.kind == planner::ActionKind::move_peg) {
        task.ctx.target_peg = awareness::destination_peg(obs_, g, a.arm, a.color, held);
        if (task.ctx.target_peg >= 0) task.skip.push_back(task.ctx.target_peg);
      } else {
        task.give = held.has_value();
        if (!task.give) task.take = held_by(plan_state, planner::other(a.arm));
      }
      break;
    }
    case planner::ActionKind::grasp:
    case planner::ActionKind::release:
      task.phase = ArmTask::Phase::gripper;
      task.op_sent = false;
      task.dwell = std::max(1, static_cast<int>(std::lround(cfg_.gripper_time / cfg_.dt)));
      break;
    case planner::ActionKind::extract: {
      task.phase = ArmTask::Phase::extract;
      task.from = arm.pose.p;
      task.to = arm.pose.p;
      const auto& ring = obs_.ring(a.color);
      if (ring && !obs_.pegs.empty()) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < obs_.pegs.size(); ++k)
          if (lateral(ring->center, obs_.pegs[k]) < lateral(ring->center, obs_.pegs[best])) best = k;
        const auto& peg = obs_.pegs[best];
        const double rise = peg.tip().dot(peg.axis) + g.ring_minor + cfg_.extract_clearance - ring->center.dot(peg.axis);
        task.to = arm.pose.p + std::max(0.0, rise) * peg.axis;
      }
      break;
    }
  }
  if (task.phase == ArmTask::Phase::move) {
    task.dmp = dmp::start_state(arm.pose.p, arm.pose.q);
    if (auto f = awareness::monitor(a, task.ctx, obs_, g)) {
      *failure = f;
      return false;
    }
  }
  return true;
}

std::optional<world::Pose> Executor::live_target(ArmTask& task) {
  const auto& g = world_.state().geometry;
  const auto& a = task.action;
  switch (a.kind) {
    case planner::ActionKind::move_ring: {
      const auto& ring = obs_.ring(a.color);
      if (!ring) return std::nullopt;
      std::vector<Vector3d> pegs;
      for (const auto& p : obs_.pegs) pegs.push_back(p.base);
      const auto t = awareness::grasp_point(awareness::ring_samples(*ring, g.ring_major), pegs);
      return world::Pose{t.position, t.orientation};
    }
    case planner::ActionKind::move_peg: {
      if (task.ctx.target_peg < 0) return std::nullopt;
      const auto t = awareness::peg_target(obs_.pegs[static_cast<std::size_t>(task.ctx.target_peg)]);
      return world::Pose{t.position + task.carry, task.hold};
    }
    case planner::ActionKind::move_center: {
      if (task.give) return world::Pose{awareness::transfer_give_target(g).position + task.carry, task.hold};
      if (!task.take) return std::nullopt;
      const auto& ring = obs_.ring(*task.take);
      if (!ring) return std::nullopt;
      const auto& giver = obs_.arms[planner::index(planner::other(a.arm))];
      const auto t = awareness::transfer_target(giver.pose.p, *ring, g.ring_major);
      return world::Pose{t.position, t.orientation};
    }
    default: return std::nullopt;
  }
}

StepOutcome Executor::execute_step(const std::vector<GroundAction>& step, const planner::State& plan_state,
                                   std::optional<FailureEvent>* failure) {
  failure->reset();
  const auto& g = world_.state().geometry;
  refresh(true);
  std::vector<ArmTask> tasks(step.size());
  const auto finish = [&](ArmTask& t, const std::string& outcome) {
    t.phase = ArmTask::Phase::done;
    if (!report_ || t.executed < 0) return;
    auto& e = report_->executed[static_cast<std::size_t>(t.executed)];
    if (!e.outcome.empty()) return;
    e.end = world_.state().time;
    e.outcome = outcome;
    if (outcome == "completed")
      publish(json{{"type", "action"}, {"time", e.end}, {"action", e.action}, {"status", "done"}}.dump());
  };
  const auto interrupt = [&](const FailureEvent& f) {
    *failure = f;
    for (auto& t : tasks)
      finish(t, planner::to_string(t.action) == f.action ? std::string(awareness::to_string(f.reason)) : "interrupted");
    return StepOutcome::interrupted;
  };
  for (std::size_t i = 0; i < step.size(); ++i) {
    tasks[i].action = step[i];
    const auto text = planner::to_string(step[i]);
    for (const auto& ev : world_.notify_action(text))
      publish(json{{"type", "event"}, {"time", ev.time}, {"text", ev.text}}.dump());
    if (report_) {
      report_->executed.push_back({text, plan_index_, 0, world_.state().time, world_.state().time, ""});
      tasks[i].executed = static_cast<int>(report_->executed.size()) - 1;
    }
    publish(json{{"type", "action"}, {"time", world_.state().time}, {"action", text}, {"status", "start"}}.dump());
  }
  refresh(true);
  for (auto& t : tasks) {
    std::optional<FailureEvent> f;
    if (!start_task(t, plan_state, &f)) return interrupt(*f);
  }

  const auto pace_start = std::chrono::steady_clock::now();
  std::uint64_t paced = 0;
  for (;;) {
    bool all_done = true;
    for (const auto& t : tasks) all_done = all_done && t.phase == ArmTask::Phase::done;
    if (all_done) return StepOutcome::completed;
    if (world_.state().time > cfg_.max_sim_time)
      return interrupt(awareness::timeout_event(step[0], cfg_.max_sim_time, world_.state().time));

    supervise();
    std::array<std::optional<world::ArmCommand>, 2> commands;
    for (auto& t : tasks) {
      const int ai = planner::index(t.action.arm);
      switch (t.phase) {
        case ArmTask::Phase::move: {
          const auto target = live_target(t);
          // without a target the monitor reports on the next observation; hold still
          if (!target) break;
          const auto& model = models_[*t.gesture];
          t.dmp = dmp::integrate_step(model, t.dmp, {target->p, target->q}, obstacles(t.skip, target->p), cfg_.dt, cfg_.tau);
          commands[ai] = world::ArmCommand{world::Pose{clamp_to(t.dmp.x, g), t.dmp.q}, std::nullopt, Color::red};
          break;
        }
        case ArmTask::Phase::gripper:
          if (!t.op_sent) {
            const bool grasp = t.action.kind == planner::ActionKind::grasp;
            commands[ai] = world::ArmCommand{std::nullopt, grasp ? world::GripperOp::grasp : world::GripperOp::release,
                                             t.action.color};
            // a release on an already open gripper is a no-op here
            if (!grasp && !world_.state().arms[ai].closed) commands[ai].reset();
            t.op_sent = true;
          }
          break;
        case ArmTask::Phase::extract: {
          const double u = (world_.state().time + cfg_.dt - t.start) / cfg_.extract_time;
          const Vector3d p = t.from + (t.to - t.from) * min_jerk(u);
          commands[ai] = world::ArmCommand{world::Pose{clamp_to(p, g), obs_.arms[ai].pose.q}, std::nullopt, Color::red};
          break;
        }
        case ArmTask::Phase::done: break;
      }
    }

    const auto events = world_.tick(commands, cfg_.dt);
    {
      const auto& s = world_.state();
      TrajectoryRow row;
      row.t = s.time;
      for (int a = 0; a < 2; ++a) {
        row.arms[a] = s.arms[a].pose;
        row.closed[a] = s.arms[a].closed;
      }
      trajectory_.push_back(row);
    }
    for (const auto& ev : events) {
      if (ev.kind == world::WorldEvent::Kind::disturbance) {
        publish(json{{"type", "event"}, {"time", ev.time}, {"text", ev.text}}.dump());
        continue;
      }
      for (auto& t : tasks)
        if (t.phase == ArmTask::Phase::gripper && t.action.arm == ev.arm &&
            t.action.kind == planner::ActionKind::grasp) {
          const bool transfer = held_by(plan_state, planner::other(t.action.arm)) == t.action.color;
          return interrupt(awareness::grasp_failure_event(t.action, ev.reason, transfer, world_.state().time));
        }
    }
    if (world_.state().ticks % 10 == 0) publish_state();

    const bool fresh = obs_tick_ != world_.state().ticks;
    refresh(false);
    const bool observed = obs_tick_ == world_.state().ticks && fresh;
    const double now = world_.state().time;
    for (auto& t : tasks) {
      switch (t.phase) {
        case ArmTask::Phase::move: {
          if (observed)
            if (auto f = awareness::monitor(t.action, t.ctx, obs_, g)) return interrupt(*f);
          if (t.take) {
            // the take point rides on the giver's ring; converging on a stale frame while
            // the giver still moves leaves the taker short
            bool giver_moving = false;
            for (const auto& o : tasks) giver_moving = giver_moving || (&o != &t && o.phase == ArmTask::Phase::move);
            if (giver_moving) t.settled = false;
            else if (observed) t.settled = true;
          }
          const auto target = live_target(t);
          if (target && (!t.take || t.settled) && t.dmp.s < cfg_.converge_phase &&
              (t.dmp.x - target->p).norm() < cfg_.converge_tol) {
            finish(t, "completed");
            break;
          }
          if (now - t.start > cfg_.action_timeout + 1e-9)
            return interrupt(awareness::timeout_event(t.action, cfg_.action_timeout, now));
          break;
        }
        case ArmTask::Phase::gripper:
          if (--t.dwell <= 0) finish(t, "completed");
          break;
        case ArmTask::Phase::extract:
          if (now - t.start >= cfg_.extract_time - 1e-9) finish(t, "completed");
          break;
        case ArmTask::Phase::done: break;
      }
    }
    if (supervisor_ && supervisor_->realtime()) {
      ++paced;
      const auto due = pace_start + std::chrono::duration<double>(static_cast<double>(paced) * cfg_.dt / speed_);
      std::this_thread::sleep_until(std::chrono::time_point_cast<std::chrono::steady_clock::duration>(due));
    }
  }
}

RunResult Executor::run() {
  RunResult result;
  RunReport& rep = result.report;
  rep.scenario = scenario_.name;
  rep.mode = cfg_.mode;
  rep.optimize = cfg_.optimize;
  rep.perception = cfg_.perception;
  rep.seed = cfg_.seed;
  rep.replan_budget = cfg_.replan_budget;
  report_ = &rep;
  const auto& g = world_.state().geometry;
  std::string trigger = "initial";
  publish_state();

  for (;;) {
    supervise();
    refresh(true);
    const auto ext = awareness::compute_externals(obs_, g);
    const auto initial = planner::ground_externals(ext);
    if (rep.plans.size() > 0 && trigger == "goal_check" && planner::goal_holds(initial, planner::goal_rings(initial))) {
      rep.status = RunStatus::done;
      break;
    }
    PlanRecord rec;
    rec.start_time = world_.state().time;
    rec.trigger = trigger;
    for (const auto& a : ext) rec.externals.push_back(planner::to_string(a));
    const auto t0 = std::chrono::steady_clock::now();
    const auto plan = cfg_.optimize ? planner::solve_optimized(initial, cfg_.mode, cfg_.horizon_cap)
                                    : planner::solve(initial, cfg_.mode, cfg_.horizon_cap);
    rec.planning_wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (!plan) {
      rec.plan.mode = cfg_.mode;
      rep.plans.push_back(rec);
      rep.status = RunStatus::failed_permanently;
      rep.status_reason = "no_plan";
      break;
    }
    rec.plan = *plan;
    rep.plans.push_back(rec);
    plan_index_ = static_cast<int>(rep.plans.size()) - 1;
    {
      json steps = json::array();
      for (const auto& s : plan->steps) steps.push_back({{"t", s.t}, {"action", planner::to_string(s.action)}});
      publish(json{{"type", "plan"}, {"time", world_.state().time}, {"index", plan_index_}, {"trigger", trigger},
                   {"horizon", plan->horizon}, {"steps", steps}}
                  .dump());
    }
    if (plan->steps.empty()) {
      rep.status = RunStatus::done;
      break;
    }

    std::map<int, std::vector<GroundAction>> by_t;
    for (const auto& s : plan->steps) by_t[s.t].push_back(s.action);
    planner::State state = initial;
    std::optional<FailureEvent> failure;
    bool stop = false;
    for (const auto& [t, actions] : by_t) {
      for (const auto& a : actions)
        if (planner::check_executability(state, a)) ++rep.safety_violations;
      const auto before = rep.executed.size();
      const auto outcome = execute_step(actions, state, &failure);
      for (auto k = before; k < rep.executed.size(); ++k) rep.executed[k].t = t;
      if (outcome == StepOutcome::interrupted) break;
      try {
        state = planner::apply_step(state, actions);
      } catch (const planner::PlannerError&) {
        ++rep.safety_violations;
        stop = true;
        break;
      }
    }
    if (stop) {
      rep.status = RunStatus::failed_permanently;
      rep.status_reason = "unsafe_plan";
      break;
    }
    if (failure) {
      rep.failures.push_back(*failure);
      publish(json{{"type", "failure"}, {"time", failure->time}, {"action", failure->action},
                   {"reason", awareness::to_string(failure->reason)}, {"explanation", failure->explanation}}
                  .dump());
      publish(json{{"type", "explanation"}, {"time", failure->time}, {"text", failure->explanation}}.dump());
      trigger = std::string(awareness::to_string(failure->reason));
    } else {
      trigger = "goal_check";
      refresh(true);
      const auto after = planner::ground_externals(awareness::compute_externals(obs_, g));
      if (planner::goal_holds(after, planner::goal_rings(after))) {
        rep.status = RunStatus::done;
        break;
      }
    }
    if (world_.state().time > cfg_.max_sim_time) {
      rep.status = RunStatus::failed_permanently;
      rep.status_reason = "sim_time_limit";
      break;
    }
    if (rep.replans >= cfg_.replan_budget) {
      rep.status = RunStatus::failed_permanently;
      rep.status_reason = "replan_budget_exhausted";
      break;
    }
    ++rep.replans;
  }

  const auto& s = world_.state();
  rep.goal_satisfied = world::goal_satisfied(s);
  rep.total_sim_time = s.time;
  rep.ticks = s.ticks;
  rep.trace_hash = world_.trace_hash();
  report_ = nullptr;
  publish_state();
  publish(json{{"type", "report"}, {"report", json::parse(report_to_json(rep))}}.dump());
  result.trajectory = trajectory_;
  return result;
}

RunResult run(const world::Scenario& scenario, const ExecutorConfig& cfg) {
  Executor ex(scenario, cfg, learn_default_models());
  return ex.run();
}

double min_peg_clearance(const Trajectory& tr, const world::SceneState& scene) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& row : tr)
    for (const auto& arm : row.arms)
      for (const auto& peg : scene.pegs) {
        dmp::Obstacle o;
        o.position = peg.base;
        o.height = peg.height;
        best = std::min(best, dmp::obstacle_distance(arm.p, o));
      }
  return best;
}

}  // namespace pegring::executor
