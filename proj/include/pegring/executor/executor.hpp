#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pegring/awareness/awareness.hpp"
#include "pegring/dmp/dmp.hpp"
#include "pegring/perception/perception.hpp"
#include "pegring/planner/planner.hpp"
#include "pegring/world/world.hpp"

namespace pegring::executor {

using Eigen::Quaterniond;
using Eigen::Vector3d;
using planner::AggregateMode;
using planner::Arm;
using planner::Color;
using planner::GroundAction;

struct ExecutorError : std::runtime_error {
  enum class Kind { config, models };
  Kind kind;
  ExecutorError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
};

// ---- gesture models --------------------------------------------------------

enum class Gesture : std::uint8_t { move_ring, move_peg, move_center };
inline constexpr Gesture kGestures[] = {Gesture::move_ring, Gesture::move_peg, Gesture::move_center};
std::string_view to_string(Gesture g);
std::optional<Gesture> parse_gesture(std::string_view text);
std::optional<Gesture> gesture_of(const GroundAction& a);  // nullopt for grasp/release/extract

struct DemoConfig {
  int count = 6;            // demos per gesture
  double duration = 1.3;    // s
  double rate = 100.0;      // Hz
  double noise = 0.0;       // m, per-sample jitter
  std::uint64_t seed = 1;
};

/// Synthetic tele-operation stand-ins: min-jerk reaches between desk-scale endpoints with
/// a vertical bump whose height is a gesture-specific fraction of the reach (at most 0.2).
std::vector<dmp::Demo> generate_demos(Gesture g, const DemoConfig& cfg);

struct GestureModels {
  std::array<dmp::DmpModel, 3> models;

  const dmp::DmpModel& operator[](Gesture g) const { return models[static_cast<std::size_t>(g)]; }
  dmp::DmpModel& operator[](Gesture g) { return models[static_cast<std::size_t>(g)]; }
};

GestureModels learn_default_models(const DemoConfig& cfg = {});
/// <dir>/<gesture>.json for each gesture.
GestureModels load_models(const std::filesystem::path& dir);
void save_models(const GestureModels& m, const std::filesystem::path& dir);

// ---- run configuration and report ------------------------------------------

enum class PerceptionSource : std::uint8_t { ground_truth, synthetic };
std::string_view to_string(PerceptionSource p);
std::optional<PerceptionSource> parse_perception(std::string_view text);

struct ExecutorConfig {
  AggregateMode mode = AggregateMode::per_step;
  bool optimize = false;
  PerceptionSource perception = PerceptionSource::ground_truth;
  std::uint64_t seed = 0;
  double dt = 0.01;
  int replan_budget = 10;
  double action_timeout = 5.0;    // s of sim time per move
  double converge_tol = 0.002;    // m
  double converge_phase = 0.01;
  double tau = 1.0;
  double gripper_time = 0.1;      // s a grasp or release occupies
  double extract_time = 0.6;      // s for the straight lift off a peg
  double extract_clearance = 0.005;  // ring center above the tip after extraction, beyond the minor radius
  int perception_every = 10;      // ticks between synthetic frames
  perception::RenderConfig render{40.0, 0.0005, 0};
  dmp::Obstacle obstacle;         // template for every peg; position and height are filled in
  int horizon_cap = planner::kDefaultHorizonCap;
  double max_sim_time = 600.0;
  double speed = 1.0;             // wall-clock pacing factor under a real-time supervisor
};

enum class RunStatus : std::uint8_t { done, failed_permanently };
std::string_view to_string(RunStatus s);

struct PlanRecord {
  double start_time = 0.0;
  std::vector<std::string> externals;  // atoms the plan was grounded from, sorted
  planner::Plan plan;
  double planning_wall_ms = 0.0;       // not serialized into the deterministic report
  std::string trigger;                 // "initial", a failure reason, or "goal_check"
};

struct ExecutedAction {
  std::string action;
  int plan = 0;        // index into RunReport::plans
  int t = 0;           // plan timestep
  double start = 0.0;
  double end = 0.0;
  std::string outcome;  // "completed" or a failure reason
};

struct RunReport {
  std::string scenario;
  AggregateMode mode = AggregateMode::per_step;
  bool optimize = false;
  PerceptionSource perception = PerceptionSource::ground_truth;
  std::uint64_t seed = 0;
  RunStatus status = RunStatus::done;
  std::string status_reason;  // why the run stopped when not done
  bool goal_satisfied = false;
  double total_sim_time = 0.0;
  std::uint64_t ticks = 0;
  int replans = 0;
  int replan_budget = 10;
  int safety_violations = 0;
  std::vector<awareness::FailureEvent> failures;
  std::vector<PlanRecord> plans;
  std::vector<ExecutedAction> executed;
  std::uint64_t trace_hash = 0;

  std::vector<double> planning_wall_ms() const;
};

/// Schema-stable JSON (sorted keys). Wall-clock planning times are left out unless asked
/// for, so two runs of the same scenario and seed give identical bytes.
std::string report_to_json(const RunReport& r, bool include_timing = false);
RunReport report_from_json(const std::string& text);

struct TrajectoryRow {
  double t = 0.0;
  std::array<world::Pose, 2> arms;
  std::array<bool, 2> closed{false, false};
};

/// One per tick, for plots and clearance checks.
using Trajectory = std::vector<TrajectoryRow>;
void save_trajectory_csv(const Trajectory& tr, const std::filesystem::path& path);
Trajectory load_trajectory_csv(const std::filesystem::path& path);

// ---- supervisor hooks ------------------------------------------------------

/// Commands a supervisor may inject; applied between ticks.
struct SupervisorCommand {
  enum class Kind { disturbance, pause, resume, set_speed } kind = Kind::disturbance;
  world::Disturbance disturbance;
  double speed = 1.0;
};

/// The executor calls these from its own thread. A bridge implements them over a socket.
class Supervisor {
 public:
  virtual ~Supervisor() = default;
  virtual void publish(const std::string& json_line) = 0;
  virtual std::vector<SupervisorCommand> poll() = 0;
  /// True when ticks should be paced to wall-clock time.
  virtual bool realtime() const { return false; }
};

// ---- executor --------------------------------------------------------------

struct RunResult {
  RunReport report;
  Trajectory trajectory;
};

enum class StepOutcome : std::uint8_t { completed, interrupted };

class Executor {
 public:
  Executor(const world::Scenario& scenario, ExecutorConfig cfg, GestureModels models);

  /// The closed loop: observe, ground externals, plan, execute with per-tick monitoring,
  /// replan on failure until the goal holds or the replan budget is spent.
  RunResult run();

  /// One plan step on the live world (all actions of one timestep run together).
  /// On interruption the failure is in `failure`.
  StepOutcome execute_step(const std::vector<GroundAction>& step, const planner::State& plan_state,
                           std::optional<awareness::FailureEvent>* failure);

  void set_supervisor(Supervisor* s) { supervisor_ = s; }
  void set_trace(std::ostream* sink) { world_.set_trace(sink); }

  world::World& world() { return world_; }
  const awareness::Observation& observation() const { return obs_; }
  const Trajectory& trajectory() const { return trajectory_; }
  const ExecutorConfig& config() const { return cfg_; }

 private:
  struct ArmTask;

  const awareness::Observation& refresh(bool force);
  awareness::Observation snapshot();
  std::vector<dmp::Obstacle> obstacles(const std::vector<int>& skip, const Vector3d& target) const;
  bool start_task(ArmTask& task, const planner::State& plan_state, std::optional<awareness::FailureEvent>* failure);
  std::optional<world::Pose> live_target(ArmTask& task);
  void tick(std::array<std::optional<world::ArmCommand>, 2>& commands, std::vector<world::WorldEvent>* events);
  void supervise();
  void publish(const std::string& line);
  void publish_state();

  world::Scenario scenario_;
  ExecutorConfig cfg_;
  GestureModels models_;
  world::World world_;
  awareness::Observation obs_;
  std::uint64_t obs_tick_ = ~0ull;
  awareness::PegMemory peg_memory_;
  std::optional<std::vector<awareness::PegObs>> pegs_;
  Trajectory trajectory_;
  Supervisor* supervisor_ = nullptr;
  bool paused_ = false;
  double speed_ = 1.0;
  RunReport* report_ = nullptr;
  int plan_index_ = 0;
};

/// Convenience: learn default models and run.
RunResult run(const world::Scenario& scenario, const ExecutorConfig& cfg);

/// Minimum distance from either gripper to any peg axis segment over the trajectory.
double min_peg_clearance(const Trajectory& tr, const world::SceneState& scene);

}  // namespace pegring::executor
