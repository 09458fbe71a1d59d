#pragma once

#include <cmath>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace pegring::dmp {

using Eigen::Matrix3d;
using Eigen::Quaterniond;
using Eigen::Vector3d;

struct DmpError : std::runtime_error {
  enum class Kind { degenerate_demo, rank_deficient, non_finite_state, degenerate_goal, bad_input, io };
  Kind kind;
  DmpError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
};

struct CanonicalSystem {
  double alpha = 4.0;
  double tau = 1.0;

  double phase(double t) const;
  // exact update, so the phase carries no integration error
  double step(double s, double dt) const;
};

struct BasisConfig {
  int count = 15;
  double width_factor = 1.2;  // h = width_factor * center spacing

  std::vector<double> centers() const;
  double width() const;
};

/// Mollifier kernel exp(-1/(1-r^2)), r = |s - c| / h, zero outside.
double mollifier(double s, double center, double width);

struct Gains {
  double K = 150.0;
  double alpha = 4.0;
  double D() const;
};

struct DmpModel {
  Vector3d K = Vector3d::Constant(150.0);
  Vector3d D = Vector3d::Constant(2.0 * std::sqrt(150.0));
  double Kq = 150.0;
  double Dq = 2.0 * std::sqrt(150.0);
  double alpha = 4.0;
  BasisConfig basis;
  // weights live in the normalized frame (start 0, goal 1,1,1); one row per basis function
  Eigen::MatrixX3d weights;
  Eigen::MatrixX3d weights_q;
  Vector3d x0_learn = Vector3d::Zero();
  Vector3d g_learn = Vector3d::Ones();
  double duration = 1.0;  // mean demo duration (s) at tau = 1

  /// f(s) = sum(w psi) / sum(psi) * s, in the normalized frame.
  Vector3d forcing(double s) const;
  Vector3d forcing_q(double s) const;
};

struct TrajectorySample {
  double t = 0.0;
  Vector3d x = Vector3d::Zero();
  Quaterniond q = Quaterniond::Identity();
};

using Demo = std::vector<TrajectorySample>;

struct Obstacle {
  Vector3d position = Vector3d::Zero();  // base of the axis
  double height = 0.0;                   // vertical segment length, 0 for a point
  double r_infl = 0.015;
  double strength = 0.05;
  double decay = 150.0;
};

struct DmpState {
  Vector3d x = Vector3d::Zero();
  Vector3d v = Vector3d::Zero();
  Quaterniond q = Quaterniond::Identity();
  Vector3d omega = Vector3d::Zero();
  double s = 1.0;
  // rollout start; the (g - x0) s term always uses these
  Vector3d x0 = Vector3d::Zero();
  Quaterniond q0 = Quaterniond::Identity();
};

struct DmpGoal {
  Vector3d g = Vector3d::Zero();
  Quaterniond q = Quaterniond::Identity();
};

DmpState start_state(const Vector3d& x0, const Quaterniond& q0);

/// Resample to a uniform grid (linear for position, slerp for orientation).
Demo resample(const Demo& demo, double rate_hz = 100.0);

DmpModel learn(const std::vector<Demo>& demos, const Gains& gains = {}, const BasisConfig& basis = {});

/// Rotation + scaling taking the normalized displacement (1,1,1) onto g - x0.
/// The twist about the displacement is fixed by world up, so the map commutes
/// with rotations about z.
Matrix3d roto_dilatation(const Vector3d& x0, const Vector3d& g);

/// Transform from the learned displacement to the new one, applied to forcing output.
Matrix3d generalize(const DmpModel& model, const Vector3d& x0_new, const Vector3d& g_new);

/// Point-to-segment distance and the closest point on the obstacle axis.
double obstacle_distance(const Vector3d& x, const Obstacle& o, Vector3d* closest = nullptr);
double obstacle_potential(const Vector3d& x, const std::vector<Obstacle>& obstacles);
inline constexpr double kMaxObstacleAccel = 10.0;
Vector3d obstacle_gradient(const Vector3d& x, const std::vector<Obstacle>& obstacles);

/// 2 log(g * conj(q)), with g flipped onto q's hemisphere first.
Vector3d quaternion_error(const Quaterniond& g, const Quaterniond& q);
Quaterniond quaternion_exp(const Vector3d& v);  // exp of a pure quaternion (0, v)
Vector3d quaternion_log(const Quaterniond& q);

void quaternion_step(Quaterniond& q, Vector3d& omega, const Quaterniond& g, const Quaterniond& q0, double s,
                     const Vector3d& forcing, double Kq, double Dq, double h);

/// Substep ceiling in model time (t / tau). A tick is split into equal substeps no longer
/// than this, so rollouts at different tau visit the same path.
inline constexpr double kMaxSubstep = 1e-3;

DmpState integrate_step(const DmpModel& model, const DmpState& state, const DmpGoal& goal,
                        const std::vector<Obstacle>& obstacles, double dt, double tau);

struct Rollout {
  std::vector<double> t;
  std::vector<DmpState> states;
};

/// Integrate from x0/q0 for `duration` seconds at step dt.
Rollout rollout(const DmpModel& model, const Vector3d& x0, const Quaterniond& q0, const DmpGoal& goal,
                const std::vector<Obstacle>& obstacles, double tau, double duration, double dt = 0.01);

/// Mean pointwise L2 error of replaying each demo from its own endpoints.
double replay_error(const DmpModel& model, const Demo& demo, const std::vector<Obstacle>& obstacles = {});

Demo load_demo_csv(const std::filesystem::path& path);
void save_demo_csv(const Demo& demo, const std::filesystem::path& path);
DmpModel load_model(const std::filesystem::path& path);
void save_model(const DmpModel& model, const std::filesystem::path& path);
std::string model_to_json(const DmpModel& model);
DmpModel model_from_json(const std::string& text);

}  // namespace pegring::dmp
