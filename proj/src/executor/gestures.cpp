#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "pegring/executor/executor.hpp"

namespace pegring::executor {

std::string_view to_string(Gesture g) {
  switch (g) {
    case Gesture::move_ring: return "move_ring";
    case Gesture::move_peg: return "move_peg";
    case Gesture::move_center: return "move_center";
  }
  return "?";
}

std::optional<Gesture> parse_gesture(std::string_view text) {
  for (auto g : kGestures)
    if (to_string(g) == text) return g;
  return std::nullopt;
}

std::optional<Gesture> gesture_of(const GroundAction& a) {
  switch (a.kind) {
    case planner::ActionKind::move_ring: return Gesture::move_ring;
    case planner::ActionKind::move_peg: return Gesture::move_peg;
    case planner::ActionKind::move_center: return Gesture::move_center;
    default: return std::nullopt;
  }
}

namespace {

// bump height over reach length
double lift_ratio(Gesture g) {
  switch (g) {
    case Gesture::move_ring: return 0.15;
    case Gesture::move_peg: return 0.2;
    case Gesture::move_center: return 0.1;
  }
  return 0.0;
}

}  // namespace

std::vector<dmp::Demo> generate_demos(Gesture g, const DemoConfig& cfg) {
  if (cfg.count < 1 || !(cfg.duration > 0) || !(cfg.rate > 0) || !(cfg.noise >= 0))
    throw ExecutorError(ExecutorError::Kind::config, "bad demo configuration");
  std::mt19937_64 rng(cfg.seed * 31 + static_cast<std::uint64_t>(g));
  std::uniform_real_distribution<double> xy(-0.05, 0.05), z(0.005, 0.06);
  std::normal_distribution<double> jitter(0.0, cfg.noise > 0 ? cfg.noise : 1.0);
  std::vector<dmp::Demo> out;
  const int n = static_cast<int>(std::lround(cfg.duration * cfg.rate)) + 1;
  while (static_cast<int>(out.size()) < cfg.count) {
    const Vector3d a(xy(rng), xy(rng), z(rng)), b(xy(rng), xy(rng), z(rng));
    if ((b - a).norm() < 0.02) continue;
    const double lift = lift_ratio(g) * (b - a).norm();
    dmp::Demo d;
    for (int k = 0; k < n; ++k) {
      const double u = static_cast<double>(k) / (n - 1);
      const double mj = u * u * u * (10 - 15 * u + 6 * u * u);
      dmp::TrajectorySample s;
      s.t = u * cfg.duration;
      s.x = a + (b - a) * mj + Vector3d::UnitZ() * lift * 16 * u * u * (1 - u) * (1 - u);
      // endpoints stay exact so each demo starts and ends at rest
      if (cfg.noise > 0 && k > 0 && k < n - 1) s.x += Vector3d(jitter(rng), jitter(rng), jitter(rng));
      s.q = world::down_orientation();
      d.push_back(s);
    }
    out.push_back(std::move(d));
  }
  return out;
}

GestureModels learn_default_models(const DemoConfig& cfg) {
  GestureModels m;
  for (auto g : kGestures) m[g] = dmp::learn(generate_demos(g, cfg));
  return m;
}

GestureModels load_models(const std::filesystem::path& dir) {
  GestureModels m;
  for (auto g : kGestures) {
    const auto path = dir / (std::string(to_string(g)) + ".json");
    try {
      m[g] = dmp::load_model(path);
    } catch (const std::exception& e) {
      throw ExecutorError(ExecutorError::Kind::models, path.string() + ": " + e.what());
    }
  }
  return m;
}

void save_models(const GestureModels& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (auto g : kGestures) dmp::save_model(m[g], dir / (std::string(to_string(g)) + ".json"));
}

}  // namespace pegring::executor
