#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pegring/awareness/awareness.hpp"
#include "pegring/world/world.hpp"

namespace pegring::perception {

using Eigen::Vector3d;
using planner::Color;

struct PerceptionError : std::runtime_error {
  enum class Kind { plane_not_found, no_model, bad_input, io };
  Kind kind;
  PerceptionError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
};

// first five match planner::Color
enum class Label : std::uint8_t { red, green, blue, yellow, grey, base };
inline constexpr int kLabelCount = 6;
std::string_view to_string(Label l);
std::optional<Label> parse_label(std::string_view text);
inline Label label_of(Color c) { return static_cast<Label>(planner::index(c)); }

struct CloudPoint {
  Vector3d p = Vector3d::Zero();
  Label label = Label::base;

  bool operator==(const CloudPoint&) const = default;
};

using Cloud = std::vector<CloudPoint>;

struct RenderConfig {
  double density = 50.0;  // points per cm^2 of surface
  double sigma = 0.0;     // isotropic Gaussian noise, m
  std::uint64_t seed = 0;
};

/// Samples ring tori, peg cylinders (side and cap) and the base square uniformly by
/// area; hidden rings emit nothing. Each surface patch has its own seeded stream,
/// so the parallel and serial versions return the same cloud.
Cloud render_cloud(const world::SceneState& s, const RenderConfig& cfg);
Cloud render_cloud_serial(const world::SceneState& s, const RenderConfig& cfg);

/// Voxel-grid decimation: one centroid per occupied voxel and label, ordered by voxel key.
Cloud subsample(const Cloud& cloud, double leaf);
Cloud subsample_serial(const Cloud& cloud, double leaf);

struct Plane {
  Vector3d normal = Vector3d::UnitZ();  // unit, pointing up
  double offset = 0.0;                  // normal . x = offset on the plane
  double inlier_fraction = 0.0;

  double distance(const Vector3d& x) const { return normal.dot(x) - offset; }
};

struct PerceptionConfig {
  double leaf = 0.001;
  double cluster_threshold = 0.004;
  int ransac_iterations = 500;
  double inlier_tol = 0.0008;
  double plane_tol = 0.0015;
  double min_inlier_fraction = 0.3;
  double min_plane_fraction = 0.5;
  // nominal ring size, used to reject implausible tori
  double ring_major = 0.008;
  double ring_minor = 0.0015;
  double peg_min_height = 0.005;  // points this far above the base cannot belong to a resting ring
  std::uint64_t seed = 0;
};

PerceptionConfig config_for(const world::GeometryConfig& g, std::uint64_t seed = 0);

struct SceneEstimate {
  Plane plane;
  std::vector<awareness::PegObs> pegs;
};

/// First-frame plane and peg estimation. Throws PlaneNotFound below the inlier threshold.
SceneEstimate estimate_plane_and_pegs(const Cloud& first, const PerceptionConfig& cfg);

/// Connected components under the distance threshold, each sorted, ordered by first index.
std::vector<std::vector<std::size_t>> euclidean_clusters(const std::vector<Vector3d>& points, double threshold);

struct TorusFit {
  Vector3d center = Vector3d::Zero();
  Vector3d axis = Vector3d::UnitZ();  // unit, z >= 0
  double major = 0.0;
  double minor = 0.0;
  std::size_t inliers = 0;
  double inlier_fraction = 0.0;
};

/// Distance from x to the torus surface (signed: negative inside the tube).
double torus_residual(const TorusFit& t, const Vector3d& x);

struct RansacConfig {
  int iterations = 500;
  double inlier_tol = 0.0008;
  double min_inlier_fraction = 0.3;
  std::uint64_t seed = 0;
};

/// RANSAC torus: robust cluster plane for the axis, 4-point circle hypotheses in that
/// plane, then Levenberg-Marquardt on the inliers. Throws NoModel.
TorusFit ransac_torus(const std::vector<Vector3d>& points, const RansacConfig& cfg);
TorusFit ransac_torus_serial(const std::vector<Vector3d>& points, const RansacConfig& cfg);

struct RingDetection {
  TorusFit fit;
  std::size_t cluster_size = 0;
  int clusters_tried = 0;
};

using RingDetections = std::array<std::optional<RingDetection>, planner::kColorCount>;

/// Per ring color (grey is pegs-only): cluster, fit, keep the best-fitting cluster.
RingDetections segment_rings(const Cloud& cloud, const PerceptionConfig& cfg);

/// Observation from detections, frozen pegs, and the arms' own kinematic state.
awareness::Observation to_observation(const RingDetections& rings, const std::vector<awareness::PegObs>& pegs,
                                      const world::SceneState& kinematics);

void save_cloud_csv(const Cloud& cloud, const std::filesystem::path& path);
Cloud load_cloud_csv(const std::filesystem::path& path);

}  // namespace pegring::perception
