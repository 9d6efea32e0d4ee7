// Times the production analytic map against the serial reference driver and
// reports the largest probability gap between them. The reference shares no
// conditioning or threading code, so agreement here is a real cross-check.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>

#include "grfhd/grf.hpp"
#include "grfhd/safety.hpp"
#include "grfhd/terrain.hpp"

using namespace grfhd;

namespace {

double run_timed(const char* label, SafetyMap& out,
                 const std::function<SafetyMap()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  out = fn();
  const double dt =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("  %-28s %8.3f s\n", label, dt);
  return dt;
}

}  // namespace

int main(int argc, char** argv) {
  int n = 24;
  int repeats = 3;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--size") == 0 && i + 1 < argc) {
      n = std::atoi(argv[++i]);
    } else if (std::strcmp(argv[i], "--repeats") == 0 && i + 1 < argc) {
      repeats = std::atoi(argv[++i]);
    } else {
      std::fprintf(stderr, "usage: %s [--size N] [--repeats R]\n", argv[0]);
      return 2;
    }
  }
  if (n < 12 || repeats < 1) {
    std::fprintf(stderr, "size must be >= 12 and repeats >= 1\n");
    return 2;
  }

  const DemGrid dem = generate_fractal_terrain(3, n, n, 1.0, 0.85, 0.25);
  const PointCloud pcd = simulate_lidar(dem, 2.0, 0.0166, 101);
  const GrfModel model(pcd, KernelParams{0.06, 8.0, 0.0166});
  LanderGeometry geom;
  geom.pad_radius = 2.5;
  geom.footprint_radius = 2.5;
  geom.n_orientations = 24;
  geom.footprint_step = 1.0;
  const SafetyThresholds thresholds;
  const RaisingFactors factors{1.5, 0.8};

  std::printf("grid %dx%d, %zu observations, %d orientations, %d repeat(s)\n", n, n,
              pcd.size(), geom.n_orientations, repeats);

  double best_prod = 1e30, best_ser = 1e30;
  SafetyMap prod, ser;
  for (int r = 0; r < repeats; ++r) {
    std::printf("repeat %d\n", r + 1);
    best_prod = std::min(best_prod, run_timed("production (threads auto)", prod, [&] {
                           return shd_map(model, geom, thresholds, factors, dem.grid);
                         }));
    best_ser = std::min(best_ser, run_timed("serial reference", ser, [&] {
                          return serial_reference::shd_map(model, geom, thresholds,
                                                           factors, dem.grid);
                        }));
  }

  double gap = 0.0;
  long valid = 0;
  for (std::size_t i = 0; i < prod.p_safe.size(); ++i) {
    if (prod.valid[i] != ser.valid[i]) {
      std::printf("validity masks disagree at pixel %zu\n", i);
      return 1;
    }
    if (!prod.valid[i]) continue;
    ++valid;
    gap = std::max(gap, std::abs(prod.p_slope[i] - ser.p_slope[i]));
    gap = std::max(gap, std::abs(prod.p_roughness[i] - ser.p_roughness[i]));
    gap = std::max(gap, std::abs(prod.p_safe[i] - ser.p_safe[i]));
  }

  std::printf("best production %.3f s, best serial %.3f s, speedup %.2fx\n", best_prod,
              best_ser, best_ser / best_prod);
  std::printf("%ld valid pixels, max abs probability gap %.3g\n", valid, gap);
  if (gap >= 1e-8) {
    std::printf("gap exceeds 1e-8: the implementations have diverged\n");
    return 1;
  }
  return 0;
}
