// OpenMP kernels against their serial references: median wall time and output agreement.
#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#include "CLI11.hpp"
#include "pegring/perception/perception.hpp"

using namespace pegring;
using Eigen::Vector3d;

namespace {

double median_ms(int reps, const std::function<void()>& f) {
  std::vector<double> ms;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::nth_element(ms.begin(), ms.begin() + ms.size() / 2, ms.end());
  return ms[ms.size() / 2];
}

void row(const char* name, std::size_t n, double serial, double omp, bool same) {
  std::printf("%-14s %10zu %11.3f %11.3f %8.2fx  %s\n", name, n, serial, omp, serial / omp, same ? "yes" : "NO");
}

bool same_fit(const perception::TorusFit& a, const perception::TorusFit& b) {
  return a.inliers == b.inliers && (a.center - b.center).norm() < 1e-12 && (a.axis - b.axis).norm() < 1e-12;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kernel bench: OpenMP vs serial"};
  int reps = 7;
  double density = 400.0;
  std::uint64_t seed = 1;
  std::size_t grasp_points = 2'000'000;
  app.add_option("--reps", reps, "repetitions per kernel (median reported)")->check(CLI::PositiveNumber);
  app.add_option("--density", density, "render density, points per cm^2")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "noise and RANSAC seed");
  app.add_option("--grasp-points", grasp_points, "point count for grasp_index")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  const auto scene = world::initial_state(*world::builtin_scenario("complete"));
  const perception::RenderConfig rc{density, 0.0005, seed};
  std::printf("threads %d, reps %d, seed %llu\n\n", omp_get_max_threads(), reps,
              static_cast<unsigned long long>(seed));
  std::printf("%-14s %10s %11s %11s %9s  %s\n", "kernel", "n", "serial ms", "omp ms", "speedup", "same");

  perception::Cloud cs, cp;
  const double r_s = median_ms(reps, [&] { cs = perception::render_cloud_serial(scene, rc); });
  const double r_p = median_ms(reps, [&] { cp = perception::render_cloud(scene, rc); });
  row("render_cloud", cp.size(), r_s, r_p, cs == cp);

  perception::Cloud ss, sp;
  const double s_s = median_ms(reps, [&] { ss = perception::subsample_serial(cp, 0.0005); });
  const double s_p = median_ms(reps, [&] { sp = perception::subsample(cp, 0.0005); });
  row("subsample", cp.size(), s_s, s_p, ss == sp);

  std::vector<Vector3d> ring;
  for (const auto& q : cp)
    if (q.label == perception::Label::red) ring.push_back(q.p);
  const perception::RansacConfig rac{2000, 0.0008, 0.3, seed};
  perception::TorusFit fs, fp;
  const double f_s = median_ms(reps, [&] { fs = perception::ransac_torus_serial(ring, rac); });
  const double f_p = median_ms(reps, [&] { fp = perception::ransac_torus(ring, rac); });
  row("ransac_torus", ring.size(), f_s, f_p, same_fit(fs, fp));

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.01);
  std::vector<Vector3d> pts(grasp_points);
  for (auto& p : pts) p = Vector3d(g(rng), g(rng), g(rng));
  std::vector<Vector3d> pegs;
  for (const auto& peg : scene.pegs) pegs.push_back(peg.base);
  std::size_t gs = 0, gp = 0;
  const double g_s = median_ms(reps, [&] { gs = awareness::grasp_index_serial(pts, pegs); });
  const double g_p = median_ms(reps, [&] { gp = awareness::grasp_index(pts, pegs); });
  row("grasp_index", pts.size(), g_s, g_p, gs == gp);
  return cs == cp && ss == sp && same_fit(fs, fp) && gs == gp ? 0 : 1;
}
