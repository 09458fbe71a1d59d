#include "pegring/dmp/dmp.hpp"

#include <algorithm>
#include <numeric>

#include <Eigen/QR>

namespace pegring::dmp {

namespace {

bool finite(const Vector3d& v) { return v.allFinite(); }

Vector3d basis_average(const Eigen::MatrixX3d& w, const BasisConfig& basis, double s) {
  const auto centers = basis.centers();
  const double h = basis.width();
  Vector3d num = Vector3d::Zero();
  double den = 0.0;
  for (std::size_t i = 0; i < centers.size(); ++i) {
    const double psi = mollifier(s, centers[i], h);
    if (psi == 0.0) continue;
    num += psi * w.row(static_cast<Eigen::Index>(i)).transpose();
    den += psi;
  }
  if (den == 0.0) return Vector3d::Zero();
  return num / den * s;
}

// columns of an orthonormal frame whose first axis is d; twist fixed by world up
Matrix3d frame(const Vector3d& d) {
  const Vector3d e1 = d.normalized();
  Vector3d e2 = Vector3d::UnitZ().cross(e1);
  if (e2.norm() < 1e-9) e2 = e1.cross(Vector3d::UnitX());
  e2.normalize();
  Matrix3d F;
  F.col(0) = e1;
  F.col(1) = e2;
  F.col(2) = e1.cross(e2);
  return F;
}

}  // namespace

double CanonicalSystem::phase(double t) const { return std::exp(-alpha * t / tau); }
double CanonicalSystem::step(double s, double dt) const { return s * std::exp(-alpha * dt / tau); }

std::vector<double> BasisConfig::centers() const {
  std::vector<double> c(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) c[static_cast<std::size_t>(i)] = static_cast<double>(i) / (count - 1);
  return c;
}

double BasisConfig::width() const { return width_factor / (count - 1); }

double mollifier(double s, double center, double width) {
  const double r = std::abs(s - center) / width;
  if (r >= 1.0) return 0.0;
  return std::exp(-1.0 / (1.0 - r * r));
}

double Gains::D() const { return 2.0 * std::sqrt(K); }

Vector3d DmpModel::forcing(double s) const { return basis_average(weights, basis, s); }
Vector3d DmpModel::forcing_q(double s) const { return basis_average(weights_q, basis, s); }

DmpState start_state(const Vector3d& x0, const Quaterniond& q0) {
  DmpState st;
  st.x = st.x0 = x0;
  st.q = st.q0 = q0.normalized();
  return st;
}

Demo resample(const Demo& demo, double rate_hz) {
  if (demo.size() < 2) throw DmpError(DmpError::Kind::bad_input, "demo needs at least 2 samples");
  for (std::size_t i = 1; i < demo.size(); ++i)
    if (!(demo[i].t > demo[i - 1].t)) throw DmpError(DmpError::Kind::bad_input, "demo time not strictly increasing");
  const double t0 = demo.front().t;
  const double T = demo.back().t - t0;
  const auto n = static_cast<std::size_t>(std::max(2.0, std::round(T * rate_hz) + 1));
  Demo out(n);
  std::size_t j = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = k + 1 == n ? demo.back().t : t0 + T * static_cast<double>(k) / static_cast<double>(n - 1);
    while (j + 2 < demo.size() && demo[j + 1].t <= t) ++j;
    const auto& a = demo[j];
    const auto& b = demo[j + 1];
    const double u = std::clamp((t - a.t) / (b.t - a.t), 0.0, 1.0);
    out[k].t = t;
    if (u == 0.0) {
      out[k].x = a.x;
      out[k].q = a.q;
    } else if (u == 1.0) {
      out[k].x = b.x;
      out[k].q = b.q;
    } else {
      out[k].x = a.x + u * (b.x - a.x);
      out[k].q = a.q.slerp(u, b.q);
    }
  }
  return out;
}

Matrix3d roto_dilatation(const Vector3d& x0, const Vector3d& g) {
  const Vector3d d = g - x0;
  const double n = d.norm();
  if (!(n > 1e-6)) throw DmpError(DmpError::Kind::degenerate_goal, "start and goal coincide");
  static const Matrix3d reference = frame(Vector3d::Ones());
  return (n / std::sqrt(3.0)) * frame(d) * reference.transpose();
}

Matrix3d generalize(const DmpModel& model, const Vector3d& x0_new, const Vector3d& g_new) {
  return roto_dilatation(x0_new, g_new) * roto_dilatation(model.x0_learn, model.g_learn).inverse();
}

DmpModel learn(const std::vector<Demo>& demos, const Gains& gains, const BasisConfig& basis) {
  if (demos.empty()) throw DmpError(DmpError::Kind::bad_input, "no demonstrations");
  if (!(gains.K > 0) || !(gains.alpha > 0)) throw DmpError(DmpError::Kind::bad_input, "gains must be positive");
  if (basis.count < 2) throw DmpError(DmpError::Kind::bad_input, "basis needs at least 2 functions");

  DmpModel m;
  m.K = Vector3d::Constant(gains.K);
  m.D = Vector3d::Constant(gains.D());
  m.Kq = gains.K;
  m.Dq = gains.D();
  m.alpha = gains.alpha;
  m.basis = basis;

  const auto centers = basis.centers();
  const double width = basis.width();
  const Eigen::Index N = basis.count;

  std::vector<Eigen::RowVectorXd> rows;
  std::vector<Vector3d> targets;
  std::vector<Vector3d> targets_q;
  double duration = 0.0;
  Vector3d x0_sum = Vector3d::Zero();
  Vector3d g_sum = Vector3d::Zero();

  for (const auto& raw : demos) {
    if (raw.size() < 10) throw DmpError(DmpError::Kind::bad_input, "demo needs at least 10 samples");
    const Demo demo = resample(raw);
    const Vector3d x0 = demo.front().x;
    const Vector3d g = demo.back().x;
    if ((g - x0).norm() < 1e-6) throw DmpError(DmpError::Kind::degenerate_demo, "demo start and goal coincide");
    const Matrix3d Sinv = roto_dilatation(x0, g).inverse();
    const double T = demo.back().t - demo.front().t;
    duration += T;
    x0_sum += x0;
    g_sum += g;

    const std::size_t n = demo.size();
    const double h = T / static_cast<double>(n - 1);  // tau = 1: the demo's own time

    std::vector<Vector3d> xs(n);
    std::vector<Quaterniond> qs(n);
    for (std::size_t k = 0; k < n; ++k) {
      xs[k] = Sinv * (demo[k].x - x0);
      qs[k] = demo[k].q.normalized();
      if (k > 0 && qs[k].dot(qs[k - 1]) < 0) qs[k].coeffs() *= -1.0;
    }
    // inverse of the semi-implicit Euler step: backward velocity, then forward acceleration
    std::vector<Vector3d> vs(n, Vector3d::Zero());
    std::vector<Vector3d> ws(n, Vector3d::Zero());
    for (std::size_t k = 1; k < n; ++k) {
      vs[k] = (xs[k] - xs[k - 1]) / h;
      ws[k] = quaternion_log(qs[k] * qs[k - 1].conjugate()) * 2.0 / h;
    }
    const Quaterniond gq = qs.back();
    const Vector3d e0 = quaternion_error(gq, qs.front());
    for (std::size_t k = 0; k + 1 < n; ++k) {
      const double s = std::exp(-gains.alpha * static_cast<double>(k) * h);  // uniform grid
      const Vector3d a = (vs[k + 1] - vs[k]) / h;
      const Vector3d f =
          (a - gains.K * (Vector3d::Ones() - xs[k]) + gains.D() * vs[k] + gains.K * Vector3d::Ones() * s) / gains.K;
      const Vector3d wd = (ws[k + 1] - ws[k]) / h;
      const Vector3d fq = (wd - gains.K * quaternion_error(gq, qs[k]) + gains.D() * ws[k] + gains.K * e0 * s) / gains.K;

      Eigen::RowVectorXd row(N);
      double den = 0.0;
      for (Eigen::Index i = 0; i < N; ++i) {
        row(i) = mollifier(s, centers[static_cast<std::size_t>(i)], width);
        den += row(i);
      }
      if (den > 0) row *= s / den;
      rows.push_back(std::move(row));
      targets.push_back(f);
      targets_q.push_back(fq);
    }
  }

  Eigen::MatrixXd A(static_cast<Eigen::Index>(rows.size()), N);
  Eigen::MatrixX3d b(A.rows(), 3);
  Eigen::MatrixX3d bq(A.rows(), 3);
  for (Eigen::Index r = 0; r < A.rows(); ++r) {
    A.row(r) = rows[static_cast<std::size_t>(r)];
    b.row(r) = targets[static_cast<std::size_t>(r)].transpose();
    bq.row(r) = targets_q[static_cast<std::size_t>(r)].transpose();
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  if (qr.rank() < N) throw DmpError(DmpError::Kind::rank_deficient, "regression system is singular");
  m.weights = qr.solve(b);
  m.weights_q = qr.solve(bq);

  const double count = static_cast<double>(demos.size());
  m.duration = duration / count;
  m.x0_learn = x0_sum / count;
  m.g_learn = g_sum / count;
  if ((m.g_learn - m.x0_learn).norm() < 1e-6) {
    // demos cancel out on average; any displacement works as the reference
    m.x0_learn = Vector3d::Zero();
    m.g_learn = Vector3d::Ones();
  }
  return m;
}

double obstacle_distance(const Vector3d& x, const Obstacle& o, Vector3d* closest) {
  Vector3d c = o.position;
  if (o.height > 0) c.z() = std::clamp(x.z(), o.position.z(), o.position.z() + o.height);
  if (closest) *closest = c;
  return (x - c).norm();
}

namespace {

// U(d) and dU/dd for one obstacle: exponential inside, cubic fade over the outer fifth
std::pair<double, double> potential_1d(double d, const Obstacle& o) {
  if (d >= o.r_infl) return {0.0, 0.0};
  const double e = o.strength * std::exp(-o.decay * d);
  const double inner = 0.8 * o.r_infl;
  if (d <= inner) return {e, -o.decay * e};
  const double width = o.r_infl - inner;
  const double u = (d - inner) / width;
  const double w = 1.0 - 3.0 * u * u + 2.0 * u * u * u;
  const double dw = (-6.0 * u + 6.0 * u * u) / width;
  return {e * w, e * (dw - o.decay * w)};
}

}  // namespace

double obstacle_potential(const Vector3d& x, const std::vector<Obstacle>& obstacles) {
  double u = 0.0;
  for (const auto& o : obstacles) u += potential_1d(obstacle_distance(x, o), o).first;
  return u;
}

Vector3d obstacle_gradient(const Vector3d& x, const std::vector<Obstacle>& obstacles) {
  Vector3d acc = Vector3d::Zero();
  for (const auto& o : obstacles) {
    Vector3d c;
    const double d = obstacle_distance(x, o, &c);
    if (d >= o.r_infl || d < 1e-12) continue;
    const double dU = potential_1d(d, o).second;
    acc -= dU * (x - c) / d;
  }
  const double n = acc.norm();
  if (n > kMaxObstacleAccel) acc *= kMaxObstacleAccel / n;
  return acc;
}

Vector3d quaternion_log(const Quaterniond& q) {
  const Vector3d v = q.vec();
  const double n = v.norm();
  if (n < 1e-12) return Vector3d::Zero();
  return std::atan2(n, q.w()) * v / n;
}

Quaterniond quaternion_exp(const Vector3d& v) {
  const double n = v.norm();
  if (n < 1e-12) return Quaterniond(1.0, v.x(), v.y(), v.z()).normalized();
  const Vector3d axis = std::sin(n) * v / n;
  return Quaterniond(std::cos(n), axis.x(), axis.y(), axis.z());
}

Vector3d quaternion_error(const Quaterniond& g, const Quaterniond& q) {
  Quaterniond gg = g;
  if (gg.dot(q) < 0) gg.coeffs() *= -1.0;
  return 2.0 * quaternion_log(gg * q.conjugate());
}

void quaternion_step(Quaterniond& q, Vector3d& omega, const Quaterniond& g, const Quaterniond& q0, double s,
                     const Vector3d& forcing, double Kq, double Dq, double h) {
  const Vector3d rhs =
      Kq * quaternion_error(g, q) - Dq * omega - Kq * quaternion_error(g, q0) * s + Kq * forcing;
  omega += h * rhs;
  q = quaternion_exp(0.5 * h * omega) * q;
  q.normalize();
}

DmpState integrate_step(const DmpModel& model, const DmpState& state, const DmpGoal& goal,
                        const std::vector<Obstacle>& obstacles, double dt, double tau) {
  if (!(dt > 0) || !(tau > 0)) throw DmpError(DmpError::Kind::bad_input, "dt and tau must be positive");
  const double span = dt / tau;
  const int n = std::max(1, static_cast<int>(std::ceil(span / kMaxSubstep - 1e-9)));
  const double h = span / n;
  const double decay = std::exp(-model.alpha * h);

  Matrix3d S = Matrix3d::Zero();
  const bool shaped = (goal.g - state.x0).norm() > 1e-6;
  if (shaped) S = roto_dilatation(state.x0, goal.g);

  DmpState st = state;
  for (int i = 0; i < n; ++i) {
    const Vector3d f = shaped ? Vector3d(S * model.forcing(st.s)) : Vector3d::Zero();
    Vector3d a = model.K.cwiseProduct(goal.g - st.x) - model.D.cwiseProduct(st.v) -
                 model.K.cwiseProduct(goal.g - st.x0) * st.s + model.K.cwiseProduct(f);
    if (!obstacles.empty()) a += obstacle_gradient(st.x, obstacles);
    st.v += h * a;
    st.x += h * st.v;
    quaternion_step(st.q, st.omega, goal.q, st.q0, st.s, model.forcing_q(st.s), model.Kq, model.Dq, h);
    st.s *= decay;
  }
  if (!finite(st.x) || !finite(st.v) || !finite(st.omega) || !st.q.coeffs().allFinite())
    throw DmpError(DmpError::Kind::non_finite_state, "integration produced a non-finite state");
  return st;
}

Rollout rollout(const DmpModel& model, const Vector3d& x0, const Quaterniond& q0, const DmpGoal& goal,
                const std::vector<Obstacle>& obstacles, double tau, double duration, double dt) {
  Rollout r;
  DmpState st = start_state(x0, q0);
  const auto steps = static_cast<long>(std::llround(duration / dt));
  r.t.reserve(static_cast<std::size_t>(steps + 1));
  r.states.reserve(static_cast<std::size_t>(steps + 1));
  r.t.push_back(0.0);
  r.states.push_back(st);
  for (long k = 1; k <= steps; ++k) {
    st = integrate_step(model, st, goal, obstacles, dt, tau);
    r.t.push_back(static_cast<double>(k) * dt);
    r.states.push_back(st);
  }
  return r;
}

double replay_error(const DmpModel& model, const Demo& raw, const std::vector<Obstacle>& obstacles) {
  const Demo demo = resample(raw);
  const double T = demo.back().t - demo.front().t;
  const double dt = T / static_cast<double>(demo.size() - 1);
  const auto r = rollout(model, demo.front().x, demo.front().q, {demo.back().x, demo.back().q}, obstacles, 1.0, T, dt);
  double sum = 0.0;
  for (std::size_t k = 0; k < demo.size(); ++k) sum += (r.states[k].x - demo[k].x).norm();
  return sum / static_cast<double>(demo.size());
}

}  // namespace pegring::dmp
