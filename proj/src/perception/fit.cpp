#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <unordered_map>

#include <Eigen/Dense>
#include <unsupported/Eigen/NonLinearOptimization>
#include <unsupported/Eigen/NumericalDiff>

#include "pegring/perception/perception.hpp"

namespace pegring::perception {

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

struct PcaResult {
  Vector3d mean = Vector3d::Zero();
  Eigen::Vector3d values = Eigen::Vector3d::Zero();  // ascending
  Eigen::Matrix3d vectors = Eigen::Matrix3d::Identity();
};

template <class Get>
PcaResult pca(std::size_t n, Get get) {
  PcaResult r;
  for (std::size_t i = 0; i < n; ++i) r.mean += get(i);
  r.mean /= static_cast<double>(n);
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const Vector3d d = get(i) - r.mean;
    cov += d * d.transpose();
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  r.values = eig.eigenvalues();
  r.vectors = eig.eigenvectors();
  return r;
}

Vector3d up(Vector3d n) {
  n.normalize();
  if (n.z() < 0 || (n.z() == 0 && (n.y() < 0 || (n.y() == 0 && n.x() < 0)))) n = -n;
  return n;
}

// robust plane through points: 3-point RANSAC then PCA on the inliers
std::optional<std::pair<Plane, std::vector<std::size_t>>> fit_plane(const std::vector<Vector3d>& pts, double tol,
                                                                    int iterations, std::uint64_t seed) {
  if (pts.size() < 3) return std::nullopt;
  std::mt19937_64 rng(mix(seed));
  std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);
  std::size_t best_count = 0;
  Plane best;
  for (int it = 0; it < iterations; ++it) {
    const auto& a = pts[pick(rng)];
    const auto& b = pts[pick(rng)];
    const auto& c = pts[pick(rng)];
    const Vector3d n = (b - a).cross(c - a);
    if (n.norm() < 1e-12) continue;
    Plane p;
    p.normal = up(n);
    p.offset = p.normal.dot(a);
    std::size_t count = 0;
    for (const auto& x : pts) count += std::abs(p.distance(x)) < tol;
    if (count > best_count) {
      best_count = count;
      best = p;
    }
  }
  if (best_count < 3) return std::nullopt;
  std::vector<std::size_t> inliers;
  // two passes: the second, tighter one drops what merely grazes the slab
  for (double t : {tol, tol / 4}) {
    inliers.clear();
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (std::abs(best.distance(pts[i])) < t) inliers.push_back(i);
    if (inliers.size() < 3) return std::nullopt;
    const auto r = pca(inliers.size(), [&](std::size_t i) { return pts[inliers[i]]; });
    if (!(r.values(1) > 1e-12 * std::max(r.values(2), 1e-300))) return std::nullopt;
    best.normal = up(r.vectors.col(0));
    best.offset = best.normal.dot(r.mean);
  }
  inliers.clear();
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (std::abs(best.distance(pts[i])) < tol) inliers.push_back(i);
  best.inlier_fraction = static_cast<double>(inliers.size()) / static_cast<double>(pts.size());
  return std::make_pair(best, inliers);
}

// algebraic circle fit x^2 + y^2 + D x + E y + F = 0
std::optional<std::pair<Eigen::Vector2d, double>> fit_circle(const std::vector<Eigen::Vector2d>& pts) {
  if (pts.size() < 3) return std::nullopt;
  Eigen::MatrixX3d A(static_cast<Eigen::Index>(pts.size()), 3);
  Eigen::VectorXd b(static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    A(k, 0) = pts[i].x();
    A(k, 1) = pts[i].y();
    A(k, 2) = 1.0;
    b(k) = -pts[i].squaredNorm();
  }
  const Eigen::ColPivHouseholderQR<Eigen::MatrixX3d> qr(A);
  if (qr.rank() < 3) return std::nullopt;
  const Eigen::Vector3d s = qr.solve(b);
  const Eigen::Vector2d c(-s(0) / 2, -s(1) / 2);
  const double r2 = c.squaredNorm() - s(2);
  if (!(r2 > 0) || !std::isfinite(r2)) return std::nullopt;
  return std::make_pair(c, std::sqrt(r2));
}

struct Frame {
  Vector3d origin, e1, e2, n;

  Vector3d local(const Vector3d& x) const {
    const Vector3d d = x - origin;
    return {d.dot(e1), d.dot(e2), d.dot(n)};
  }
};

Frame frame_of(const Vector3d& origin, const Vector3d& n) {
  Frame f;
  f.origin = origin;
  f.n = n.normalized();
  f.e1 = f.n.unitOrthogonal();
  f.e2 = f.n.cross(f.e1);
  return f;
}

struct TorusFunctor {
  using Scalar = double;
  using InputType = Eigen::VectorXd;
  using ValueType = Eigen::VectorXd;
  using JacobianType = Eigen::MatrixXd;
  enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };

  const std::vector<Vector3d>* pts;
  Frame base;  // axis is perturbed in this frame

  int inputs() const { return 7; }
  int values() const { return static_cast<int>(pts->size()); }

  // x = center (3), axis tilt (2), R, r
  static TorusFit unpack(const Eigen::VectorXd& x, const Frame& f) {
    TorusFit t;
    t.center = x.head<3>();
    t.axis = up(f.n + x(3) * f.e1 + x(4) * f.e2);
    t.major = x(5);
    t.minor = x(6);
    return t;
  }

  int operator()(const Eigen::VectorXd& x, Eigen::VectorXd& fvec) const {
    const TorusFit t = unpack(x, base);
    for (std::size_t i = 0; i < pts->size(); ++i) fvec(static_cast<Eigen::Index>(i)) = torus_residual(t, (*pts)[i]);
    return 0;
  }
};

TorusFit refine(const TorusFit& start, const std::vector<Vector3d>& inliers) {
  TorusFunctor f;
  f.pts = &inliers;
  f.base = frame_of(start.center, start.axis);
  Eigen::VectorXd x(7);
  x << start.center, 0.0, 0.0, start.major, start.minor;
  Eigen::NumericalDiff<TorusFunctor> diff(f);
  Eigen::LevenbergMarquardt<Eigen::NumericalDiff<TorusFunctor>> lm(diff);
  lm.parameters.xtol = 1e-12;
  lm.parameters.ftol = 1e-14;
  lm.parameters.maxfev = 2000;
  lm.minimize(x);
  TorusFit t = TorusFunctor::unpack(x, f.base);
  if (!x.allFinite() || !(t.major > 0) || !(t.minor > 0)) return start;
  t.minor = std::abs(t.minor);
  return t;
}

struct Hypothesis {
  TorusFit t;
  bool valid = false;
};

std::size_t count_inliers(const TorusFit& t, const std::vector<Vector3d>& pts, double tol) {
  std::size_t n = 0;
  for (const auto& p : pts) n += std::abs(torus_residual(t, p)) < tol;
  return n;
}

std::vector<Hypothesis> hypotheses(const std::vector<Vector3d>& pts, const Plane& plane, const Vector3d& origin,
                                   const RansacConfig& cfg) {
  const Frame f = frame_of(origin, plane.normal);
  std::vector<Vector3d> local(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) local[i] = f.local(pts[i]);
  double extent = 0.0;
  for (const auto& l : local) extent = std::max(extent, l.head<2>().norm());
  std::mt19937_64 rng(mix(cfg.seed ^ 0x7465727573ull));
  std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);
  std::vector<Hypothesis> out(static_cast<std::size_t>(std::max(cfg.iterations, 0)));
  for (auto& h : out) {
    std::size_t idx[4];
    for (int k = 0; k < 4; ++k) {
      bool fresh;
      do {
        idx[k] = pick(rng);
        fresh = true;
        for (int j = 0; j < k; ++j) fresh = fresh && idx[j] != idx[k];
      } while (!fresh);
    }
    std::vector<Eigen::Vector2d> flat;
    double h0 = 0.0;
    for (auto i : idx) {
      flat.push_back(local[i].head<2>());
      h0 += local[i].z() / 4;
    }
    const auto circle = fit_circle(flat);
    if (!circle) continue;
    const auto& [c2, radius] = *circle;
    double rho_mean = 0.0;
    for (auto i : idx) rho_mean += (local[i].head<2>() - c2).norm() / 4;
    double tube = 0.0;
    for (auto i : idx) {
      const double dr = (local[i].head<2>() - c2).norm() - rho_mean;
      const double dh = local[i].z() - h0;
      tube += (dr * dr + dh * dh) / 4;
    }
    tube = std::sqrt(tube);
    if (!(rho_mean > tube) || !(tube > 0) || rho_mean > 2 * extent + 1e-9) continue;
    h.t.center = f.origin + c2.x() * f.e1 + c2.y() * f.e2 + h0 * f.n;
    h.t.axis = f.n;
    h.t.major = rho_mean;
    h.t.minor = tube;
    h.valid = true;
  }
  return out;
}

template <bool Parallel>
TorusFit ransac(const std::vector<Vector3d>& pts, const RansacConfig& cfg) {
  const auto no_model = [](const std::string& why) { return PerceptionError(PerceptionError::Kind::no_model, why); };
  if (pts.size() < 8) throw no_model("torus fit needs at least 8 points");
  // the tube is thin, so the ring's mid-plane takes most of the cluster within a few minor radii
  const double slab = std::max(2.0 * cfg.inlier_tol, 0.002);
  const auto plane = fit_plane(pts, slab, 200, cfg.seed);
  if (!plane) throw no_model("cluster has no plane (collinear points)");
  Vector3d origin = Vector3d::Zero();
  for (auto i : plane->second) origin += pts[i];
  origin /= static_cast<double>(plane->second.size());
  const auto hyps = hypotheses(pts, plane->first, origin, cfg);
  std::vector<std::size_t> counts(hyps.size(), 0);
  const auto n = static_cast<std::ptrdiff_t>(hyps.size());
  if constexpr (Parallel) {
#pragma omp parallel for schedule(dynamic, 8)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const auto& h = hyps[static_cast<std::size_t>(i)];
      if (h.valid) counts[static_cast<std::size_t>(i)] = count_inliers(h.t, pts, cfg.inlier_tol);
    }
  } else {
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const auto& h = hyps[static_cast<std::size_t>(i)];
      if (h.valid) counts[static_cast<std::size_t>(i)] = count_inliers(h.t, pts, cfg.inlier_tol);
    }
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < counts.size(); ++i)
    if (counts[i] > counts[best]) best = i;
  if (hyps.empty() || counts[best] == 0 ||
      static_cast<double>(counts[best]) / static_cast<double>(pts.size()) < cfg.min_inlier_fraction)
    throw no_model("best torus hypothesis explains too few points");

  TorusFit t = hyps[best].t;
  for (int round = 0; round < 3; ++round) {
    std::vector<Vector3d> inliers;
    for (const auto& p : pts)
      if (std::abs(torus_residual(t, p)) < cfg.inlier_tol) inliers.push_back(p);
    if (inliers.size() < 8) break;
    t = refine(t, inliers);
  }
  t.inliers = count_inliers(t, pts, cfg.inlier_tol);
  t.inlier_fraction = static_cast<double>(t.inliers) / static_cast<double>(pts.size());
  if (t.inlier_fraction < cfg.min_inlier_fraction) throw no_model("refined torus explains too few points");
  return t;
}

}  // namespace

double torus_residual(const TorusFit& t, const Vector3d& x) {
  const Vector3d d = x - t.center;
  const double h = d.dot(t.axis);
  const double rho = (d - h * t.axis).norm();
  return std::hypot(rho - t.major, h) - t.minor;
}

TorusFit ransac_torus(const std::vector<Vector3d>& points, const RansacConfig& cfg) { return ransac<true>(points, cfg); }

TorusFit ransac_torus_serial(const std::vector<Vector3d>& points, const RansacConfig& cfg) {
  return ransac<false>(points, cfg);
}

std::vector<std::vector<std::size_t>> euclidean_clusters(const std::vector<Vector3d>& points, double threshold) {
  if (!(threshold > 0)) throw PerceptionError(PerceptionError::Kind::bad_input, "cluster threshold must be positive");
  using Cell = std::array<std::int64_t, 3>;
  struct CellHash {
    std::size_t operator()(const Cell& c) const {
      return static_cast<std::size_t>(mix(static_cast<std::uint64_t>(c[0]) * 73856093ull ^
                                          static_cast<std::uint64_t>(c[1]) * 19349663ull ^
                                          static_cast<std::uint64_t>(c[2]) * 83492791ull));
    }
  };
  auto cell_of = [&](const Vector3d& p) {
    return Cell{static_cast<std::int64_t>(std::floor(p.x() / threshold)),
                static_cast<std::int64_t>(std::floor(p.y() / threshold)),
                static_cast<std::int64_t>(std::floor(p.z() / threshold))};
  };
  std::unordered_map<Cell, std::vector<std::size_t>, CellHash> grid;
  for (std::size_t i = 0; i < points.size(); ++i) grid[cell_of(points[i])].push_back(i);
  const double t2 = threshold * threshold;
  std::vector<int> label(points.size(), -1);
  std::vector<std::vector<std::size_t>> clusters;
  for (std::size_t seed = 0; seed < points.size(); ++seed) {
    if (label[seed] >= 0) continue;
    const int id = static_cast<int>(clusters.size());
    std::vector<std::size_t> members{seed};
    label[seed] = id;
    for (std::size_t head = 0; head < members.size(); ++head) {
      const auto& p = points[members[head]];
      const Cell c = cell_of(p);
      for (std::int64_t dx = -1; dx <= 1; ++dx)
        for (std::int64_t dy = -1; dy <= 1; ++dy)
          for (std::int64_t dz = -1; dz <= 1; ++dz) {
            const auto it = grid.find({c[0] + dx, c[1] + dy, c[2] + dz});
            if (it == grid.end()) continue;
            for (auto j : it->second)
              if (label[j] < 0 && (points[j] - p).squaredNorm() <= t2) {
                label[j] = id;
                members.push_back(j);
              }
          }
    }
    std::sort(members.begin(), members.end());
    clusters.push_back(std::move(members));
  }
  return clusters;
}

PerceptionConfig config_for(const world::GeometryConfig& g, std::uint64_t seed) {
  PerceptionConfig c;
  c.ring_major = g.ring_major;
  c.ring_minor = g.ring_minor;
  c.peg_min_height = std::max(0.005, 2 * g.ring_minor + 0.002);
  c.seed = seed;
  return c;
}

SceneEstimate estimate_plane_and_pegs(const Cloud& first, const PerceptionConfig& cfg) {
  const auto not_found = [](const std::string& why) {
    return PerceptionError(PerceptionError::Kind::plane_not_found, why);
  };
  std::vector<Vector3d> support;
  for (const auto& c : first)
    if (c.label == Label::base || c.label == Label::grey) support.push_back(c.p);
  if (support.size() < 3) throw not_found("no base points");
  const auto plane = fit_plane(support, cfg.plane_tol, cfg.ransac_iterations, cfg.seed);
  if (!plane) throw not_found("base points are degenerate");
  if (plane->first.inlier_fraction < cfg.min_plane_fraction)
    throw not_found("plane explains only " + std::to_string(plane->first.inlier_fraction * 100) + "% of base points");

  SceneEstimate est;
  est.plane = plane->first;
  const Plane& pl = est.plane;
  // only pegs reach this high above the base
  std::map<int, std::vector<Vector3d>> tall;
  for (const auto& c : first)
    if (c.label != Label::base && pl.distance(c.p) > cfg.peg_min_height) tall[static_cast<int>(c.label)].push_back(c.p);
  const Frame f = frame_of(pl.offset * pl.normal, pl.normal);
  for (const auto& [label, pts] : tall) {
    for (const auto& members : euclidean_clusters(pts, cfg.cluster_threshold)) {
      if (members.size() < 8) continue;
      std::vector<double> heights;
      for (auto i : members) heights.push_back(pl.distance(pts[i]));
      std::sort(heights.begin(), heights.end());
      if (heights.back() - heights.front() < cfg.peg_min_height) continue;
      const double height = heights[static_cast<std::size_t>(0.99 * static_cast<double>(heights.size() - 1))];
      // side points only: the cap would pull the circle inwards
      std::vector<Eigen::Vector2d> side;
      for (auto i : members)
        if (pl.distance(pts[i]) < height - 0.002) side.push_back(f.local(pts[i]).head<2>());
      const auto circle = fit_circle(side);
      if (!circle) continue;
      awareness::PegObs peg;
      peg.color = static_cast<Color>(label);
      peg.base = f.origin + circle->first.x() * f.e1 + circle->first.y() * f.e2;
      peg.axis = pl.normal;
      peg.height = height;
      est.pegs.push_back(peg);
    }
  }
  std::sort(est.pegs.begin(), est.pegs.end(), [](const auto& a, const auto& b) {
    return std::tuple(planner::index(a.color), a.base.x(), a.base.y()) <
           std::tuple(planner::index(b.color), b.base.x(), b.base.y());
  });
  return est;
}

RingDetections segment_rings(const Cloud& cloud, const PerceptionConfig& cfg) {
  RingDetections out;
  std::array<std::vector<Vector3d>, planner::kColorCount> by_color;
  for (const auto& c : cloud)
    if (c.label != Label::base && c.label != Label::grey) by_color[static_cast<int>(c.label)].push_back(c.p);
  for (int color = 0; color < planner::kColorCount; ++color) {
    const auto& pts = by_color[color];
    if (pts.size() < 8) continue;
    const auto clusters = euclidean_clusters(pts, cfg.cluster_threshold);
    std::optional<RingDetection> best;
    int tried = 0;
    for (std::size_t k = 0; k < clusters.size(); ++k) {
      if (clusters[k].size() < 20) continue;  // noise fragments
      std::vector<Vector3d> cluster;
      for (auto i : clusters[k]) cluster.push_back(pts[i]);
      RansacConfig rc;
      rc.iterations = cfg.ransac_iterations;
      rc.inlier_tol = cfg.inlier_tol;
      rc.min_inlier_fraction = cfg.min_inlier_fraction;
      rc.seed = mix(cfg.seed ^ mix(static_cast<std::uint64_t>(color) * 1000 + k));
      ++tried;
      TorusFit fit;
      try {
        fit = ransac_torus(cluster, rc);
      } catch (const PerceptionError&) {
        continue;
      }
      // a torus of the wrong size is a peg or clutter, not a ring
      // (a peg side fits as a wide torus with the peg radius as tube)
      if (std::abs(fit.major - cfg.ring_major) > 0.25 * cfg.ring_major || fit.minor < 0.5 * cfg.ring_minor ||
          fit.minor > 2 * cfg.ring_minor)
        continue;
      if (!best || fit.inlier_fraction > best->fit.inlier_fraction)
        best = RingDetection{fit, cluster.size(), 0};
    }
    if (best) {
      best->clusters_tried = tried;
      out[color] = best;
    }
  }
  return out;
}

awareness::Observation to_observation(const RingDetections& rings, const std::vector<awareness::PegObs>& pegs,
                                      const world::SceneState& kinematics) {
  awareness::Observation obs;
  obs.source = awareness::Source::perception;
  obs.time = kinematics.time;
  for (int c = 0; c < planner::kColorCount; ++c)
    if (rings[c]) obs.rings[c] = awareness::RingObs{rings[c]->fit.center, rings[c]->fit.axis};
  obs.pegs = pegs;
  for (int a = 0; a < 2; ++a) obs.arms[a] = {kinematics.arms[a].pose, kinematics.arms[a].closed};
  return obs;
}

}  // namespace pegring::perception
