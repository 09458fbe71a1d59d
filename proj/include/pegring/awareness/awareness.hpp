#pragma once

#include <array>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "pegring/planner/planner.hpp"
#include "pegring/world/world.hpp"

namespace pegring::awareness {

using Eigen::Quaterniond;
using Eigen::Vector3d;
using planner::Arm;
using planner::Color;
using planner::GroundAtom;

struct AwarenessError : std::runtime_error {
  enum class Kind { stale_pegs, degenerate_ring, bad_input };
  Kind kind;
  AwarenessError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
};

enum class Source : std::uint8_t { ground_truth, perception };

struct RingObs {
  Vector3d center = Vector3d::Zero();
  Vector3d normal = Vector3d::UnitZ();
};

struct PegObs {
  Color color = Color::grey;
  Vector3d base = Vector3d::Zero();
  Vector3d axis = Vector3d::UnitZ();
  double height = 0.02;

  Vector3d tip() const { return base + height * axis; }
};

struct ArmObs {
  world::Pose pose;
  bool closed = false;
};

struct Observation {
  Source source = Source::ground_truth;
  double time = 0.0;
  std::array<std::optional<RingObs>, planner::kColorCount> rings;  // by color; empty = not retrieved
  std::vector<PegObs> pegs;
  std::array<ArmObs, 2> arms;

  const std::optional<RingObs>& ring(Color c) const { return rings[planner::index(c)]; }
};

/// Ground-truth observation: poses straight from the scene, hidden rings left out.
Observation observe(const world::SceneState& s);

double ring_circle_distance(const Vector3d& point, const RingObs& ring, double major, Vector3d* closest = nullptr);

/// Geometric grounding: on from threading geometry, in_hand from capture distance,
/// reachable from the divider rule, distance in mm to the ring circle.
std::set<GroundAtom> compute_externals(const Observation& obs, const world::GeometryConfig& g);

/// Keeps the first peg estimate and checks later ones against it.
class PegMemory {
 public:
  explicit PegMemory(double tolerance = 0.002) : tolerance_(tolerance) {}

  /// Freezes on first use; throws StalePegs when a peg moves by more than the tolerance
  /// or the peg set changes. Returns the frozen pegs.
  const std::vector<PegObs>& check(const std::vector<PegObs>& pegs);
  bool frozen() const { return frozen_.has_value(); }

 private:
  double tolerance_;
  std::optional<std::vector<PegObs>> frozen_;
};

struct TargetPose {
  enum class Kind : std::uint8_t { grasp, peg_approach, transfer_give, transfer_take };
  Vector3d position = Vector3d::Zero();
  Quaterniond orientation = Quaterniond::Identity();
  Kind kind = Kind::grasp;
};

std::string_view to_string(TargetPose::Kind k);

/// Gripper orientation whose approach (tool z) axis is `approach`.
Quaterniond approach_orientation(const Vector3d& approach);

/// Index of the point maximizing sum_p |r - p|^2; smallest index wins ties.
std::size_t grasp_index(const std::vector<Vector3d>& points, const std::vector<Vector3d>& pegs);
std::size_t grasp_index_serial(const std::vector<Vector3d>& points, const std::vector<Vector3d>& pegs);

/// Plane normal of a ring cloud (z >= 0), throws DegenerateRing for collinear clouds.
Vector3d ring_normal(const std::vector<Vector3d>& points);

TargetPose grasp_point(const std::vector<Vector3d>& points, const std::vector<Vector3d>& pegs);

/// Core-circle samples standing in for a ring cloud on ground truth.
std::vector<Vector3d> ring_samples(const RingObs& ring, double major, int count = 72);

inline constexpr double kPegApproachOffset = 0.015;
TargetPose peg_target(const PegObs& peg, double offset = kPegApproachOffset);

/// Point of the ring circle diametrically opposite the holder's grasp point.
TargetPose transfer_target(const Vector3d& holder_grasp, const RingObs& ring, double major);

/// Meeting point for hand-offs: above the divider, clear of the peg tops.
TargetPose transfer_give_target(const world::GeometryConfig& g);

enum class FailureReason : std::uint8_t {
  ring_not_retrieved,
  ring_fallen,
  peg_occupied,
  grasp_failed,
  transfer_failed,
  timeout
};
std::string_view to_string(FailureReason r);

struct FailureEvent {
  std::string action;
  FailureReason reason = FailureReason::ring_not_retrieved;
  double time = 0.0;
  std::string explanation;
};

/// {"time":..,"action":..,"reason":..,"explanation":..}
std::string to_json_line(const FailureEvent& e);

/// Filled by the executor when an action starts.
struct MonitorContext {
  std::optional<Color> held;   // ring the arm carries (move to peg / center)
  double carry_offset_z = 0.0; // gripper z minus ring z at action start
  int target_peg = -1;         // move to peg: index into the observation's pegs
};

/// One observation cycle of the situation monitor. nullopt while nominal.
std::optional<FailureEvent> monitor(const planner::GroundAction& action, const MonitorContext& ctx,
                                    const Observation& obs, const world::GeometryConfig& g);

FailureEvent grasp_failure_event(const planner::GroundAction& action, world::GraspFailure why, bool transfer,
                                 double time);
FailureEvent timeout_event(const planner::GroundAction& action, double limit, double time);

/// Peg index a move-to-peg action should aim at: the colored peg, or the nearest free
/// grey peg on the arm's side. -1 if none.
int destination_peg(const Observation& obs, const world::GeometryConfig& g, Arm arm, Color peg_color,
                    std::optional<Color> carried = std::nullopt);

/// True if some ring other than `except` sits threaded on the peg.
bool peg_occupied(const Observation& obs, const world::GeometryConfig& g, int peg,
                  std::optional<Color> except = std::nullopt);

}  // namespace pegring::awareness
