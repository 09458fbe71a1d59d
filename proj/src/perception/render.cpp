#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <tuple>

#include "pegring/perception/perception.hpp"

namespace pegring::perception {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

struct Patch {
  enum class Kind { torus, cylinder, disk, rect } kind = Kind::rect;
  Label label = Label::base;
  Vector3d origin = Vector3d::Zero();
  Eigen::Quaterniond q = Eigen::Quaterniond::Identity();
  double a = 0.0, b = 0.0;  // torus R, r; cylinder r, h; disk r; rect width, depth
  std::size_t count = 0;
};

double area(const Patch& p) {
  switch (p.kind) {
    case Patch::Kind::torus: return 4.0 * M_PI * M_PI * p.a * p.b;
    case Patch::Kind::cylinder: return 2.0 * M_PI * p.a * p.b;
    case Patch::Kind::disk: return M_PI * p.a * p.a;
    case Patch::Kind::rect: return p.a * p.b;
  }
  return 0.0;
}

// base tiles give the parallel loop enough independent work
constexpr int kBaseTiles = 8;

std::vector<Patch> patches(const world::SceneState& s, double density) {
  const auto& g = s.geometry;
  std::vector<Patch> out;
  const double tile = g.base_size / kBaseTiles;
  for (int i = 0; i < kBaseTiles; ++i)
    for (int j = 0; j < kBaseTiles; ++j) {
      Patch p;
      p.kind = Patch::Kind::rect;
      p.origin = Vector3d(-g.base_size / 2 + i * tile, -g.base_size / 2 + j * tile, 0.0);
      p.a = p.b = tile;
      out.push_back(p);
    }
  for (const auto& peg : s.pegs) {
    Patch side;
    side.kind = Patch::Kind::cylinder;
    side.label = label_of(peg.color);
    side.origin = peg.base;
    side.q = Eigen::Quaterniond::FromTwoVectors(Vector3d::UnitZ(), peg.axis);
    side.a = peg.radius;
    side.b = peg.height;
    out.push_back(side);
    Patch cap = side;
    cap.kind = Patch::Kind::disk;
    cap.origin = peg.tip();
    out.push_back(cap);
  }
  for (const auto& ring : s.rings) {
    if (ring.status == world::RingStatus::hidden) continue;
    Patch p;
    p.kind = Patch::Kind::torus;
    p.label = label_of(ring.color);
    p.origin = ring.pose.p;
    p.q = ring.pose.q;
    p.a = g.ring_major;
    p.b = g.ring_minor;
    out.push_back(p);
  }
  for (auto& p : out) p.count = static_cast<std::size_t>(std::lround(area(p) * 1e4 * density));
  return out;
}

void sample(const Patch& p, std::uint64_t seed, std::size_t id, double sigma, CloudPoint* dst) {
  std::mt19937_64 rng(splitmix(seed ^ splitmix(id)));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, sigma > 0 ? sigma : 1.0);
  for (std::size_t k = 0; k < p.count; ++k) {
    Vector3d local;
    switch (p.kind) {
      case Patch::Kind::torus: {
        const double u = 2.0 * M_PI * u01(rng);
        double v = 0.0;
        // area element grows with the distance from the axis
        do v = 2.0 * M_PI * u01(rng);
        while (u01(rng) * (p.a + p.b) > p.a + p.b * std::cos(v));
        const double rho = p.a + p.b * std::cos(v);
        local = Vector3d(rho * std::cos(u), rho * std::sin(u), p.b * std::sin(v));
        break;
      }
      case Patch::Kind::cylinder: {
        const double t = 2.0 * M_PI * u01(rng);
        local = Vector3d(p.a * std::cos(t), p.a * std::sin(t), p.b * u01(rng));
        break;
      }
      case Patch::Kind::disk: {
        const double t = 2.0 * M_PI * u01(rng);
        const double r = p.a * std::sqrt(u01(rng));
        local = Vector3d(r * std::cos(t), r * std::sin(t), 0.0);
        break;
      }
      case Patch::Kind::rect:
        local = Vector3d(p.a * u01(rng), p.b * u01(rng), 0.0);
        break;
    }
    Vector3d x = p.origin + p.q * local;
    if (sigma > 0) x += Vector3d(noise(rng), noise(rng), noise(rng));
    dst[k] = {x, p.label};
  }
}

std::vector<std::size_t> offsets(const std::vector<Patch>& ps) {
  std::vector<std::size_t> off(ps.size() + 1, 0);
  for (std::size_t i = 0; i < ps.size(); ++i) off[i + 1] = off[i] + ps[i].count;
  return off;
}

void check_render(const RenderConfig& cfg) {
  if (!(cfg.density > 0)) throw PerceptionError(PerceptionError::Kind::bad_input, "density must be positive");
  if (!(cfg.sigma >= 0)) throw PerceptionError(PerceptionError::Kind::bad_input, "noise sigma must be >= 0");
}

}  // namespace

std::string_view to_string(Label l) {
  switch (l) {
    case Label::base: return "base";
    default: return planner::to_string(static_cast<Color>(l));
  }
}

std::optional<Label> parse_label(std::string_view text) {
  if (text == "base") return Label::base;
  if (auto c = planner::parse_color(text)) return label_of(*c);
  return std::nullopt;
}

Cloud render_cloud_serial(const world::SceneState& s, const RenderConfig& cfg) {
  check_render(cfg);
  const auto ps = patches(s, cfg.density);
  const auto off = offsets(ps);
  Cloud cloud(off.back());
  for (std::size_t i = 0; i < ps.size(); ++i) sample(ps[i], cfg.seed, i, cfg.sigma, cloud.data() + off[i]);
  return cloud;
}

Cloud render_cloud(const world::SceneState& s, const RenderConfig& cfg) {
  check_render(cfg);
  const auto ps = patches(s, cfg.density);
  const auto off = offsets(ps);
  Cloud cloud(off.back());
  const auto n = static_cast<std::ptrdiff_t>(ps.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    sample(ps[k], cfg.seed, k, cfg.sigma, cloud.data() + off[k]);
  }
  return cloud;
}

namespace {

using Key = std::tuple<int, std::int64_t, std::int64_t, std::int64_t>;

Key voxel(const CloudPoint& c, double leaf) {
  return {static_cast<int>(c.label), static_cast<std::int64_t>(std::floor(c.p.x() / leaf)),
          static_cast<std::int64_t>(std::floor(c.p.y() / leaf)), static_cast<std::int64_t>(std::floor(c.p.z() / leaf))};
}

void check_leaf(double leaf) {
  if (!(leaf > 0)) throw PerceptionError(PerceptionError::Kind::bad_input, "leaf size must be positive");
}

}  // namespace

Cloud subsample_serial(const Cloud& cloud, double leaf) {
  check_leaf(leaf);
  std::map<Key, std::pair<Vector3d, std::size_t>> cells;
  for (const auto& c : cloud) {
    auto& cell = cells.try_emplace(voxel(c, leaf), Vector3d::Zero(), 0).first->second;
    cell.first += c.p;
    cell.second += 1;
  }
  Cloud out;
  out.reserve(cells.size());
  for (const auto& [key, cell] : cells)
    out.push_back({cell.first / static_cast<double>(cell.second), static_cast<Label>(std::get<0>(key))});
  return out;
}

Cloud subsample(const Cloud& cloud, double leaf) {
  check_leaf(leaf);
  const auto n = static_cast<std::ptrdiff_t>(cloud.size());
  std::vector<Key> keys(cloud.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) keys[static_cast<std::size_t>(i)] = voxel(cloud[static_cast<std::size_t>(i)], leaf);
  std::vector<std::size_t> order(cloud.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  // stable: points of one voxel are summed in input order, as in the serial version
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i < order.size(); ++i)
    if (i == 0 || keys[order[i]] != keys[order[i - 1]]) starts.push_back(i);
  starts.push_back(order.size());
  Cloud out(starts.size() - 1);
  const auto m = static_cast<std::ptrdiff_t>(out.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t v = 0; v < m; ++v) {
    const auto s0 = starts[static_cast<std::size_t>(v)];
    const auto s1 = starts[static_cast<std::size_t>(v) + 1];
    Vector3d sum = Vector3d::Zero();
    for (std::size_t i = s0; i < s1; ++i) sum += cloud[order[i]].p;
    out[static_cast<std::size_t>(v)] = {sum / static_cast<double>(s1 - s0), cloud[order[s0]].label};
  }
  return out;
}

void save_cloud_csv(const Cloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw PerceptionError(PerceptionError::Kind::io, "cannot write " + path.string());
  out.precision(17);
  out << "x,y,z,label\n";
  for (const auto& c : cloud) out << c.p.x() << ',' << c.p.y() << ',' << c.p.z() << ',' << to_string(c.label) << '\n';
}

Cloud load_cloud_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw PerceptionError(PerceptionError::Kind::io, "cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "x,y,z,label") throw PerceptionError(PerceptionError::Kind::io, path.string() + ": unexpected header");
  Cloud cloud;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    double x, y, z;
    std::string label;
    const auto bad = [&] {
      return PerceptionError(PerceptionError::Kind::io, path.string() + ":" + std::to_string(lineno) + ": bad row");
    };
    if (!(fields >> x >> y >> z >> label)) throw bad();
    const auto l = parse_label(label);
    if (!l || !std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z)) throw bad();
    cloud.push_back({Vector3d(x, y, z), *l});
  }
  return cloud;
}

}  // namespace pegring::perception
