#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "grfhd/eval.hpp"
#include "grfhd/grf.hpp"
#include "grfhd/grid_io.hpp"
#include "grfhd/rng.hpp"
#include "grfhd/safety.hpp"
#include "grfhd/terrain.hpp"

using namespace grfhd;
namespace fs = std::filesystem;

namespace {

LanderGeometry small_geom() {
  LanderGeometry geom;
  geom.pad_radius = 2.5;
  geom.footprint_radius = 2.5;
  geom.n_orientations = 8;
  geom.footprint_step = 1.0;
  return geom;
}

GrfModel small_model(const DemGrid& dem) {
  const PointCloud pcd = simulate_lidar(dem, 2.0, 0.0166, 101);
  return GrfModel(pcd, KernelParams{0.05, 8.0, 0.0166});
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

bool maps_bitwise_equal(const SafetyMap& a, const SafetyMap& b) {
  return a.grid.same_as(b.grid) && a.valid == b.valid && bitwise_equal(a.p_slope, b.p_slope) &&
         bitwise_equal(a.p_roughness, b.p_roughness) && bitwise_equal(a.p_safe, b.p_safe);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("seed derivation and the raw generators are stable across builds") {
  // Snapshot values: any change here silently invalidates every stored
  // artifact and seeded fixture, so it must be a deliberate decision.
  CHECK(derive_seed(1, std::uint64_t{2}) == 328557841340930075ULL);
  CHECK(derive_seed(99, std::uint64_t{0}) == 8082502242805840686ULL);
  CHECK(derive_seed(42, "terrain") == 15135998848825566346ULL);
  Rng rng(12345);
  CHECK(rng.uniform() == 0.35762972288842587);
  CHECK(rng.normal() == -0.5029102480928328);
  CHECK(rng.next_u64() == 10325298820568433954ULL);
}

TEST_CASE("terrain, lidar and fit are reproducible end to end") {
  const DemGrid dem_a = generate_fractal_terrain(9, 24, 24, 1.0, 0.8, 0.3);
  const DemGrid dem_b = generate_fractal_terrain(9, 24, 24, 1.0, 0.8, 0.3);
  REQUIRE(bitwise_equal(dem_a.z, dem_b.z));

  const PointCloud pcd_a = simulate_lidar(dem_a, 2.0, 0.0166, 55, 0.1);
  const PointCloud pcd_b = simulate_lidar(dem_b, 2.0, 0.0166, 55, 0.1);
  REQUIRE(pcd_a.size() == pcd_b.size());
  CHECK(bitwise_equal(pcd_a.z, pcd_b.z));

  const FitBounds bounds = default_fit_bounds(pcd_a);
  const KernelParams init = default_fit_init(pcd_a, bounds);
  const FitResult fit_a = fit_hyperparameters(pcd_a, init, bounds, true);
  const FitResult fit_b = fit_hyperparameters(pcd_b, init, bounds, true);
  CHECK(fit_a.params.u == fit_b.params.u);
  CHECK(fit_a.params.ell == fit_b.params.ell);
  CHECK(fit_a.achieved_lml == fit_b.achieved_lml);
}

TEST_CASE("map builders are invariant to the thread count") {
  const DemGrid dem = generate_fractal_terrain(17, 18, 18, 1.0, 0.85, 0.25);
  const GrfModel model = small_model(dem);
  const LanderGeometry geom = small_geom();
  const SafetyThresholds thr;

  ShdOptions one, many;
  one.n_threads = 1;
  many.n_threads = 4;
  const SafetyMap shd_1 = shd_map(model, geom, thr, RaisingFactors{}, dem.grid, one);
  const SafetyMap shd_4 = shd_map(model, geom, thr, RaisingFactors{}, dem.grid, many);
  CHECK(maps_bitwise_equal(shd_1, shd_4));

  const SafetyMap mc_1 = mc_safety_map(model, geom, thr, 15, 7, dem.grid, 1);
  const SafetyMap mc_3 = mc_safety_map(model, geom, thr, 15, 7, dem.grid, 3);
  CHECK(maps_bitwise_equal(mc_1, mc_3));

  const SafetyTruth truth_1 = deterministic_eval(dem, geom, thr, 1);
  const SafetyTruth truth_3 = deterministic_eval(dem, geom, thr, 3);
  CHECK(bitwise_equal(truth_1.slope, truth_3.slope));
  CHECK(bitwise_equal(truth_1.roughness, truth_3.roughness));
  CHECK(truth_1.is_safe == truth_3.is_safe);
}

TEST_CASE("repeated sampling maps are identical for a fixed seed") {
  const DemGrid dem = generate_fractal_terrain(23, 16, 16, 1.0, 0.85, 0.25);
  const GrfModel model = small_model(dem);
  const SafetyMap a = mc_safety_map(model, small_geom(), SafetyThresholds{}, 20, 31, dem.grid);
  const SafetyMap b = mc_safety_map(model, small_geom(), SafetyThresholds{}, 20, 31, dem.grid);
  const SafetyMap c = mc_safety_map(model, small_geom(), SafetyThresholds{}, 20, 32, dem.grid);
  CHECK(maps_bitwise_equal(a, b));
  CHECK(!maps_bitwise_equal(a, c));
}

TEST_CASE("the shared-conditioning map agrees with the serial reference driver") {
  const DemGrid dem = generate_fractal_terrain(29, 14, 14, 1.0, 0.85, 0.25);
  const GrfModel model = small_model(dem);
  const LanderGeometry geom = small_geom();
  const SafetyThresholds thr;
  const RaisingFactors factors{1.5, 0.8};

  const SafetyMap fast = shd_map(model, geom, thr, factors, dem.grid);
  const SafetyMap ref = serial_reference::shd_map(model, geom, thr, factors, dem.grid);

  REQUIRE(fast.valid == ref.valid);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < fast.p_safe.size(); ++i) {
    if (!fast.valid[i]) continue;
    max_diff = std::max(max_diff, std::abs(fast.p_slope[i] - ref.p_slope[i]));
    max_diff = std::max(max_diff, std::abs(fast.p_roughness[i] - ref.p_roughness[i]));
  }
  CHECK(max_diff < 1e-8);
  MESSAGE("production vs serial reference, max abs probability gap: ", max_diff);
}

TEST_CASE("whole experiment runs are byte-identical, whatever the thread count") {
  const fs::path dir_a = fs::temp_directory_path() / "grfhd_det_run_a";
  const fs::path dir_b = fs::temp_directory_path() / "grfhd_det_run_b";
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);

  auto make_cfg = [](const fs::path& dir, int threads) {
    ExperimentConfig cfg;
    cfg.terrain.rows = cfg.terrain.cols = 16;
    cfg.terrain.seed = 3;
    cfg.terrain.hurst = 0.85;
    cfg.terrain.amplitude = 0.2;
    cfg.gsd_list = {2.0};
    cfg.noise_3sigma = 0.05;
    cfg.geometry.pad_radius = 2.5;
    cfg.geometry.footprint_radius = 2.5;
    cfg.geometry.n_orientations = 8;
    cfg.geometry.footprint_step = 1.0;
    cfg.fit_bounds.u_min = 0.05;
    cfg.fit_bounds.u_max = 0.0501;
    cfg.fit_bounds.ell_min = 7.99;
    cfg.fit_bounds.ell_max = 8.01;
    cfg.mc_samples = 15;
    cfg.seeds = {101};
    cfg.output_dir = dir.string();
    cfg.n_threads = threads;
    return cfg;
  };
  run_experiment(make_cfg(dir_a, 1));
  run_experiment(make_cfg(dir_b, 3));

  long compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(dir_a)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), dir_a);
    const fs::path other = dir_b / rel;
    REQUIRE_MESSAGE(fs::exists(other), rel.string());
    CHECK_MESSAGE(slurp(entry.path()) == slurp(other), rel.string());
    ++compared;
  }
  CHECK(compared >= 10);
}
