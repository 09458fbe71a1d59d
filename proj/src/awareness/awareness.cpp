#include "pegring/awareness/awareness.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "json.hpp"

namespace pegring::awareness {

namespace {

using planner::ActionKind;
namespace at = planner::atoms;

std::string name(Color c) { return std::string(planner::to_string(c)); }

double lateral(const Vector3d& p, const PegObs& peg) {
  const Vector3d d = p - peg.base;
  return (d - d.dot(peg.axis) * peg.axis).norm();
}

// threaded: center near the axis and not clear of the tip
bool threaded_on(const RingObs& ring, const PegObs& peg, const world::GeometryConfig& g) {
  return lateral(ring.center, peg) <= g.thread_tolerance && (ring.center - peg.tip()).dot(peg.axis) <= g.ring_minor;
}

int mm(double meters) { return static_cast<int>(std::lround(1000.0 * meters)); }

bool on_base(const Vector3d& p, const world::GeometryConfig& g) {
  return std::abs(p.x()) <= g.base_size / 2 && std::abs(p.y()) <= g.base_size / 2;
}

// ring each closed gripper holds, by capture distance
std::array<int, 2> holders(const Observation& obs, const world::GeometryConfig& g) {
  std::array<int, 2> held{-1, -1};
  for (int a = 0; a < 2; ++a) {
    if (!obs.arms[a].closed) continue;
    double best = g.capture_radius;
    for (int c = 0; c < planner::kColorCount; ++c) {
      if (!obs.rings[c]) continue;
      const double d = ring_circle_distance(obs.arms[a].pose.p, *obs.rings[c], g.ring_major);
      if (d <= best) {
        if (held[a] >= 0 && d == best) continue;
        best = d;
        held[a] = c;
      }
    }
  }
  return held;
}

}  // namespace

Observation observe(const world::SceneState& s) {
  Observation obs;
  obs.source = Source::ground_truth;
  obs.time = s.time;
  for (const auto& ring : s.rings) {
    if (ring.status == world::RingStatus::hidden) continue;
    obs.rings[planner::index(ring.color)] = RingObs{ring.pose.p, ring.normal()};
  }
  for (const auto& peg : s.pegs) obs.pegs.push_back({peg.color, peg.base, peg.axis, peg.height});
  for (int a = 0; a < 2; ++a) obs.arms[a] = {s.arms[a].pose, s.arms[a].closed};
  return obs;
}

double ring_circle_distance(const Vector3d& point, const RingObs& ring, double major, Vector3d* closest) {
  const Vector3d n = ring.normal.normalized();
  const Vector3d d = point - ring.center;
  Vector3d u = d - d.dot(n) * n;
  if (u.norm() < 1e-12) u = n.unitOrthogonal();
  const Vector3d c = ring.center + major * u.normalized();
  if (closest) *closest = c;
  return (point - c).norm();
}

std::set<GroundAtom> compute_externals(const Observation& obs, const world::GeometryConfig& g) {
  std::set<GroundAtom> out;
  const auto held = holders(obs, g);
  std::array<bool, planner::kColorCount> in_some_hand{};
  for (Arm a : planner::kArms) {
    const int ai = planner::index(a);
    if (obs.arms[ai].closed) out.insert(at::closed_gripper(a));
    if (held[ai] < 0) continue;
    const auto c = static_cast<Color>(held[ai]);
    in_some_hand[held[ai]] = true;
    out.insert(at::in_hand(a, c));
    out.insert(at::distance(a, c, mm(ring_circle_distance(obs.arms[ai].pose.p, *obs.rings[held[ai]], g.ring_major))));
  }
  std::vector<bool> peg_taken(obs.pegs.size(), false);
  for (int c = 0; c < planner::kColorCount; ++c) {
    if (!obs.rings[c]) continue;
    const auto& ring = *obs.rings[c];
    for (std::size_t k = 0; k < obs.pegs.size(); ++k)
      if (threaded_on(ring, obs.pegs[k], g)) {
        out.insert(at::on(static_cast<Color>(c), obs.pegs[k].color));
        peg_taken[k] = true;
        break;
      }
    if (in_some_hand[c] || !on_base(ring.center, g)) continue;
    const Arm a = world::side_of(ring.center);
    out.insert(at::reachable(a, planner::ObjectClass::ring, static_cast<Color>(c)));
    out.insert(at::distance(a, static_cast<Color>(c),
                            mm(ring_circle_distance(obs.arms[planner::index(a)].pose.p, ring, g.ring_major))));
  }
  for (std::size_t k = 0; k < obs.pegs.size(); ++k) {
    const auto& peg = obs.pegs[k];
    if (peg.color == Color::grey && peg_taken[k]) continue;
    out.insert(at::reachable(world::side_of(peg.base), planner::ObjectClass::peg, peg.color));
  }
  return out;
}

const std::vector<PegObs>& PegMemory::check(const std::vector<PegObs>& pegs) {
  if (!frozen_) {
    frozen_ = pegs;
    return *frozen_;
  }
  if (pegs.size() != frozen_->size())
    throw AwarenessError(AwarenessError::Kind::stale_pegs, "peg count changed from " + std::to_string(frozen_->size()) +
                                                               " to " + std::to_string(pegs.size()));
  for (std::size_t k = 0; k < pegs.size(); ++k) {
    const auto& a = (*frozen_)[k];
    const auto& b = pegs[k];
    const double shift = (a.base - b.base).norm();
    if (a.color != b.color || shift > tolerance_) {
      std::ostringstream msg;
      msg << "peg " << k << " (" << name(a.color) << ") moved " << shift * 1000.0 << " mm from the initial estimate";
      throw AwarenessError(AwarenessError::Kind::stale_pegs, msg.str());
    }
  }
  return *frozen_;
}

std::string_view to_string(TargetPose::Kind k) {
  switch (k) {
    case TargetPose::Kind::grasp: return "grasp";
    case TargetPose::Kind::peg_approach: return "peg_approach";
    case TargetPose::Kind::transfer_give: return "transfer_give";
    case TargetPose::Kind::transfer_take: return "transfer_take";
  }
  return "?";
}

Quaterniond approach_orientation(const Vector3d& approach) {
  // straight down gives the default gripper pose exactly
  return (Quaterniond::FromTwoVectors(-Vector3d::UnitZ(), approach.normalized()) * world::down_orientation()).normalized();
}

namespace {

double objective(const Vector3d& r, const std::vector<Vector3d>& pegs) {
  double sum = 0.0;
  for (const auto& p : pegs) sum += (r - p).squaredNorm();
  return sum;
}

void check_grasp_input(const std::vector<Vector3d>& points, const std::vector<Vector3d>& pegs) {
  if (points.size() < 8) throw AwarenessError(AwarenessError::Kind::bad_input, "grasp point needs at least 8 ring points");
  if (pegs.empty()) throw AwarenessError(AwarenessError::Kind::bad_input, "grasp point needs at least one peg");
}

}  // namespace

std::size_t grasp_index_serial(const std::vector<Vector3d>& points, const std::vector<Vector3d>& pegs) {
  check_grasp_input(points, pegs);
  std::size_t best = 0;
  double best_value = -1.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double v = objective(points[i], pegs);
    if (v > best_value) {
      best_value = v;
      best = i;
    }
  }
  return best;
}

std::size_t grasp_index(const std::vector<Vector3d>& points, const std::vector<Vector3d>& pegs) {
  check_grasp_input(points, pegs);
  const auto n = static_cast<std::ptrdiff_t>(points.size());
  std::size_t best = 0;
  double best_value = -1.0;
#pragma omp parallel
  {
    std::size_t local = 0;
    double local_value = -1.0;
#pragma omp for schedule(static) nowait
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const double v = objective(points[static_cast<std::size_t>(i)], pegs);
      if (v > local_value) {
        local_value = v;
        local = static_cast<std::size_t>(i);
      }
    }
#pragma omp critical
    if (local_value > best_value || (local_value == best_value && local < best)) {
      best_value = local_value;
      best = local;
    }
  }
  return best;
}

Vector3d ring_normal(const std::vector<Vector3d>& points) {
  if (points.size() < 3) throw AwarenessError(AwarenessError::Kind::degenerate_ring, "too few points for a plane");
  Vector3d mean = Vector3d::Zero();
  for (const auto& p : points) mean += p;
  mean /= static_cast<double>(points.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : points) cov += (p - mean) * (p - mean).transpose();
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  const auto& ev = eig.eigenvalues();
  // collinear: only one direction carries spread
  if (!(ev(1) > 1e-12 * std::max(ev(2), 1e-300)) || ev(2) <= 0.0)
    throw AwarenessError(AwarenessError::Kind::degenerate_ring, "ring points are collinear");
  Vector3d n = eig.eigenvectors().col(0).normalized();
  if (n.z() < 0 || (n.z() == 0 && (n.y() < 0 || (n.y() == 0 && n.x() < 0)))) n = -n;
  return n;
}

TargetPose grasp_point(const std::vector<Vector3d>& points, const std::vector<Vector3d>& pegs) {
  const std::size_t i = grasp_index(points, pegs);
  const Vector3d n = ring_normal(points);
  return {points[i], approach_orientation(-n), TargetPose::Kind::grasp};
}

std::vector<Vector3d> ring_samples(const RingObs& ring, double major, int count) {
  const Vector3d n = ring.normal.normalized();
  const Vector3d e1 = n.unitOrthogonal();
  const Vector3d e2 = n.cross(e1);
  std::vector<Vector3d> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    const double a = 2.0 * M_PI * k / count;
    out.push_back(ring.center + major * (std::cos(a) * e1 + std::sin(a) * e2));
  }
  return out;
}

TargetPose peg_target(const PegObs& peg, double offset) {
  return {peg.tip() + offset * peg.axis, approach_orientation(-Vector3d::UnitZ()), TargetPose::Kind::peg_approach};
}

TargetPose transfer_target(const Vector3d& holder_grasp, const RingObs& ring, double major) {
  const Vector3d n = ring.normal.normalized();
  Vector3d u = holder_grasp - ring.center;
  u -= u.dot(n) * n;
  if (u.norm() < 1e-12) u = n.unitOrthogonal();
  const Vector3d n_up = n.z() < 0 ? Vector3d(-n) : n;
  return {ring.center - major * u.normalized(), approach_orientation(-n_up), TargetPose::Kind::transfer_take};
}

TargetPose transfer_give_target(const world::GeometryConfig& g) {
  return {Vector3d(0.0, 0.0, 2.0 * g.peg_height), world::down_orientation(), TargetPose::Kind::transfer_give};
}

std::string_view to_string(FailureReason r) {
  switch (r) {
    case FailureReason::ring_not_retrieved: return "ring_not_retrieved";
    case FailureReason::ring_fallen: return "ring_fallen";
    case FailureReason::peg_occupied: return "peg_occupied";
    case FailureReason::grasp_failed: return "grasp_failed";
    case FailureReason::transfer_failed: return "transfer_failed";
    case FailureReason::timeout: return "timeout";
  }
  return "?";
}

std::string to_json_line(const FailureEvent& e) {
  nlohmann::json j = {{"time", e.time}, {"action", e.action}, {"reason", to_string(e.reason)}, {"explanation", e.explanation}};
  return j.dump();
}

bool peg_occupied(const Observation& obs, const world::GeometryConfig& g, int peg, std::optional<Color> except) {
  const auto& p = obs.pegs.at(static_cast<std::size_t>(peg));
  for (int c = 0; c < planner::kColorCount; ++c) {
    if (!obs.rings[c] || (except && planner::index(*except) == c)) continue;
    if (threaded_on(*obs.rings[c], p, g)) return true;
  }
  return false;
}

int destination_peg(const Observation& obs, const world::GeometryConfig& g, Arm arm, Color peg_color,
                    std::optional<Color> carried) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  const Vector3d from = obs.arms[planner::index(arm)].pose.p;
  for (std::size_t k = 0; k < obs.pegs.size(); ++k) {
    const auto& peg = obs.pegs[k];
    if (peg.color != peg_color) continue;
    if (peg_color != Color::grey) return static_cast<int>(k);
    if (world::side_of(peg.base) != arm || peg_occupied(obs, g, static_cast<int>(k), carried)) continue;
    const double d = (peg.tip() - from).norm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(k);
    }
  }
  return best;
}

namespace {

FailureEvent event(const planner::GroundAction& action, FailureReason reason, double time, const std::string& detail,
                   std::string_view branch) {
  FailureEvent e;
  e.action = planner::to_string(action);
  e.reason = reason;
  e.time = time;
  e.explanation = e.action + ": " + detail + " [branch: " + std::string(branch) + "]";
  return e;
}

}  // namespace

std::optional<FailureEvent> monitor(const planner::GroundAction& action, const MonitorContext& ctx,
                                    const Observation& obs, const world::GeometryConfig& g) {
  const int ai = planner::index(action.arm);
  switch (action.kind) {
    case ActionKind::move_ring:
      if (!obs.ring(action.color))
        return event(action, FailureReason::ring_not_retrieved, obs.time,
                     "pose of ring " + name(action.color) + " is not retrieved", "ring not retrieved");
      return std::nullopt;
    case ActionKind::move_peg:
    case ActionKind::move_center: {
      const bool to_peg = action.kind == ActionKind::move_peg;
      const std::string_view branch = to_peg ? "ring fallen or peg occupied" : "ring fallen";
      if (ctx.held) {
        const auto& ring = obs.ring(*ctx.held);
        const auto& arm = obs.arms[ai];
        const std::string who = "ring " + name(*ctx.held);
        if (!ring)
          return event(action, FailureReason::ring_fallen, obs.time, who + " is no longer observed in the gripper", branch);
        if (!arm.closed || ring_circle_distance(arm.pose.p, *ring, g.ring_major) > g.capture_radius)
          return event(action, FailureReason::ring_fallen, obs.time, who + " detached from the gripper", branch);
        const double drop = (arm.pose.p.z() - ring->center.z()) - ctx.carry_offset_z;
        if (drop > 0.01) {
          std::ostringstream msg;
          msg << who << " dropped " << drop * 1000.0 << " mm below the gripper";
          return event(action, FailureReason::ring_fallen, obs.time, msg.str(), branch);
        }
      }
      if (to_peg) {
        const std::string peg = "peg " + name(action.color);
        if (ctx.target_peg < 0)
          return event(action, FailureReason::peg_occupied, obs.time, "no free " + peg + " on this arm's side", branch);
        if (peg_occupied(obs, g, ctx.target_peg, ctx.held))
          return event(action, FailureReason::peg_occupied, obs.time,
                       "destination " + peg + " (#" + std::to_string(ctx.target_peg) + ") became occupied", branch);
      }
      return std::nullopt;
    }
    default:
      return std::nullopt;
  }
}

FailureEvent grasp_failure_event(const planner::GroundAction& action, world::GraspFailure why, bool transfer,
                                 double time) {
  const std::string detail = "grasp of ring " + name(action.color) + " failed (" + std::string(world::to_string(why)) + ")";
  if (transfer) return event(action, FailureReason::transfer_failed, time, detail + " during the hand-off", "transfer failed");
  return event(action, FailureReason::grasp_failed, time, detail, "grasp failed");
}

FailureEvent timeout_event(const planner::GroundAction& action, double limit, double time) {
  std::ostringstream msg;
  msg << "did not converge within " << limit << " s";
  return event(action, FailureReason::timeout, time, msg.str(), "action timeout");
}

}  // namespace pegring::awareness
