#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "pegring/planner/atoms.hpp"

namespace pegring::world {

using Eigen::Quaterniond;
using Eigen::Vector3d;
using planner::Arm;
using planner::Color;
using planner::GroundAtom;

struct WorldError : std::runtime_error {
  enum class Kind { out_of_workspace, bad_command, scenario };
  Kind kind;
  WorldError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
};

struct Pose {
  Vector3d p = Vector3d::Zero();
  Quaterniond q = Quaterniond::Identity();
};

/// Gripper pointing down: tool z axis antiparallel to the base normal.
inline Quaterniond down_orientation() { return Quaterniond(0.0, 1.0, 0.0, 0.0); }

struct PegSpec {
  Color color = Color::grey;
  Eigen::Vector2d position = Eigen::Vector2d::Zero();  // on the base plane
};

struct GeometryConfig {
  double base_size = 0.12;  // square, centered at the origin, top face at z = 0
  double peg_height = 0.02;
  double peg_radius = 0.002;
  double ring_major = 0.008;
  double ring_minor = 0.0015;
  Vector3d workspace_min{-0.08, -0.08, -0.005};
  Vector3d workspace_max{0.08, 0.08, 0.12};
  double capture_radius = 0.004;
  double thread_tolerance = 0.003;
  std::vector<PegSpec> pegs;

  void validate() const;
  bool in_workspace(const Vector3d& p) const;
};

enum class RingStatus : std::uint8_t { on_base, on_peg, in_hand, fallen, hidden };
std::string_view to_string(RingStatus s);

struct RingState {
  Color color = Color::red;
  Pose pose;  // center; the ring plane normal is pose.q * z
  RingStatus status = RingStatus::on_base;
  int peg = -1;       // on_peg: the peg index
  int threaded = -1;  // in_hand but still around a peg axis (not yet extracted)
  int holder = -1;    // in_hand: arm index carrying the ring
  int second = -1;    // second arm during a hand-off
  Pose rel;           // ring pose in the carrying gripper's frame
  RingStatus before_hide = RingStatus::on_base;

  Vector3d normal() const { return pose.q * Vector3d::UnitZ(); }
};

struct PegState {
  Color color = Color::grey;
  Vector3d base = Vector3d::Zero();
  Vector3d axis = Vector3d::UnitZ();
  double height = 0.02;
  double radius = 0.002;
  int occupant = -1;  // ring index

  Vector3d tip() const { return base + height * axis; }
};

struct ArmState {
  Pose pose;
  bool closed = false;
  int held = -1;  // ring index
  bool grasp_failure_armed = false;
};

struct SceneState {
  double time = 0.0;
  std::uint64_t ticks = 0;
  std::array<ArmState, 2> arms;
  std::vector<RingState> rings;
  std::vector<PegState> pegs;
  GeometryConfig geometry;

  const ArmState& arm(Arm a) const { return arms[planner::index(a)]; }
  ArmState& arm(Arm a) { return arms[planner::index(a)]; }
  int ring_index(Color c) const;  // -1 if absent
  const RingState* ring(Color c) const;
};

/// Divider plane x = 0; psm1 owns x <= 0 (boundary included).
Arm side_of(const Vector3d& p);

/// Distance from a point to the ring's core circle, and the closest circle point.
double ring_circle_distance(const Vector3d& point, const RingState& ring, double major, Vector3d* closest = nullptr);

/// Ring-frame point at `angle` on the core circle.
Vector3d ring_point(const RingState& ring, double major, double angle);

enum class DisturbanceKind : std::uint8_t { move_ring, drop_ring, occupy_peg, hide_ring, reveal_ring, grasp_failure };
std::string_view to_string(DisturbanceKind k);
std::optional<DisturbanceKind> parse_disturbance_kind(std::string_view text);

struct Disturbance {
  DisturbanceKind kind = DisturbanceKind::drop_ring;
  Color color = Color::red;  // ring, except occupy_peg where it names the peg
  Color by = Color::red;     // occupy_peg: the ring put on the peg
  Arm arm = Arm::psm1;       // grasp_failure
  Vector3d position = Vector3d::Zero();  // move_ring: new center
  // trigger: exactly one of these
  std::optional<double> at_time;
  std::optional<std::string> on_action;  // action text, fires when that action starts
};

struct Scenario {
  std::string name;
  std::uint64_t seed = 0;
  GeometryConfig geometry;
  struct RingPlacement {
    Color color = Color::red;
    std::optional<Eigen::Vector2d> position;  // on the base
    std::optional<int> peg;                   // or threaded on pegs[peg]
  };
  std::vector<RingPlacement> rings;
  std::array<Vector3d, 2> arm_start{Vector3d(-0.04, 0.0, 0.05), Vector3d(0.04, 0.0, 0.05)};
  std::vector<Disturbance> disturbances;
  int trace_every = 10;
};

/// Built-ins: A, B, C, complete, empty.
std::optional<Scenario> builtin_scenario(std::string_view name);
const std::vector<std::string>& builtin_names();

std::string scenario_to_json(const Scenario& s);
/// Rejects unknown keys at every level.
Scenario scenario_from_json(const std::string& text);
Scenario load_scenario(const std::filesystem::path& path);
void save_scenario(const Scenario& s, const std::filesystem::path& path);

/// A builtin name or a path to a JSON file.
Scenario resolve_scenario(const std::string& name_or_path);

SceneState initial_state(const Scenario& s);

enum class GraspFailure : std::uint8_t { too_far, disturbance };
std::string_view to_string(GraspFailure f);

struct GraspResult {
  bool ok = true;
  GraspFailure reason = GraspFailure::too_far;
};

enum class GripperOp : std::uint8_t { grasp, release };

struct ArmCommand {
  std::optional<Pose> target;
  std::optional<GripperOp> op;
  Color ring = Color::red;  // grasp target
};

struct WorldEvent {
  enum class Kind { disturbance, grasp_failed } kind = Kind::disturbance;
  double time = 0.0;
  std::string text;
  Disturbance disturbance;
  Arm arm = Arm::psm1;
  GraspFailure reason = GraspFailure::too_far;
};

/// Atoms read straight off the scene's status fields.
std::set<GroundAtom> ground_truth_atoms(const SceneState& s);
/// reachable/3 atoms only.
std::set<GroundAtom> reachability(const SceneState& s);

/// Ring placed on each color's matching peg, for every ring the goal quantifies over.
bool goal_satisfied(const SceneState& s);

/// One compact JSON object (no trailing newline); arms, rings, pegs and time.
std::string state_to_json(const SceneState& s);

/// FNV-1a 64 over bytes.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ull);

/// Single-writer simulation. Readers take snapshots through state().
class World {
 public:
  explicit World(const Scenario& scenario);

  const SceneState& state() const { return state_; }
  const Scenario& scenario() const { return scenario_; }

  /// Sets commanded arm poses, carries held rings, runs gripper ops, fires due
  /// disturbances and advances time. Throws OutOfWorkspace before mutating anything.
  std::vector<WorldEvent> tick(const std::array<std::optional<ArmCommand>, 2>& commands, double dt);

  GraspResult attempt_grasp(Arm arm, Color ring);
  void attempt_release(Arm arm);

  /// Fires disturbances waiting on this action text.
  std::vector<WorldEvent> notify_action(const std::string& action_text);

  /// Applies a disturbance right now (bridge commands, tests).
  WorldEvent apply(const Disturbance& d);

  /// Trace lines are written every `trace_every` ticks when a sink is attached.
  /// Attached at tick 0 the sink also gets the initial snapshot.
  void set_trace(std::ostream* sink);
  std::uint64_t trace_hash() const { return trace_hash_; }

 private:
  void carry(int arm);
  void drop_to_base(int ring, bool fallen);
  void detach(int ring);
  WorldEvent fire(const Disturbance& d);
  void record();

  Scenario scenario_;
  SceneState state_;
  std::vector<bool> fired_;
  std::ostream* trace_ = nullptr;
  std::uint64_t trace_hash_ = 0xcbf29ce484222325ull;
};

}  // namespace pegring::world
