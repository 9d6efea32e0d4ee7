#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "grfhd/grf.hpp"
#include "grfhd/safety.hpp"
#include "grfhd/terrain.hpp"

namespace grfhd {

enum class MapChannel { p_slope, p_roughness, p_safe };

// Root-mean-squared difference of one probability channel over the pixels
// valid in both maps. Grids must match; zero common pixels is an error.
double rmse_probability(const SafetyMap& map_a, const SafetyMap& map_b,
                        MapChannel channel);

// Exhaustive raising-factor search grid. k1 is a plain arithmetic ladder;
// k2 is finer inside [k2_fine_min, k2_fine_max] and coarser outside.
struct KGrid {
  double k1_min = 0.25, k1_max = 8.0, k1_step = 0.25;
  double k2_min = 0.1, k2_max = 2.0;
  double k2_fine_min = 0.3, k2_fine_max = 1.2, k2_fine_step = 0.02;
  double k2_coarse_step = 0.1;

  void validate() const;
  std::vector<double> k1_values() const;
  std::vector<double> k2_values() const;
};

struct KOptResult {
  double k1 = 1.0;
  double k2 = 1.0;
  double slope_rmse = 0.0;
  double roughness_rmse = 0.0;
};

// Sequential grid search: k1 minimizes the slope-channel RMSE of
// raw^k1 against the oracle, then k2 minimizes the roughness-channel RMSE
// of raw^(k1*k2) at that k1. Ties break toward the smaller factor.
// raw_shd must be a unit-factor (k1 = k2 = 1) analytic map.
KOptResult optimize_raising_factors(const SafetyMap& raw_shd,
                                    const SafetyMap& oracle, const KGrid& grid);

// Pixelwise application of the raising factors to a unit-factor map.
SafetyMap apply_raising_factors(const SafetyMap& raw_shd,
                                const RaisingFactors& factors);

struct DetectionMetrics {
  double missed_hazard_rate = 0.0;  // predicted-safe among truth-unsafe
  double false_alarm_rate = 0.0;    // predicted-hazard among truth-safe
  double precision = 0.0;           // of predicted hazards
  double recall = 0.0;              // of true hazards
  long hazards = 0;
  long valid_pixels = 0;
};

// Binarizes p_safe at `binarize_at` (>= means predicted safe) and counts
// confusion entries against the deterministic truth, over pixels valid in
// both. Empty denominators yield rate 0 and precision/recall 1.
DetectionMetrics detection_metrics(const SafetyMap& prob_map,
                                   const SafetyTruth& truth, double binarize_at);

struct TerrainSpec {
  std::string file;  // nonempty: load this grid and ignore the generator
  int rows = 32, cols = 32;
  double resolution = 1.0;  // m
  double hurst = 0.8;
  double amplitude = 0.35;  // m RMS
  std::uint64_t seed = 1;
  std::optional<RockSpec> rocks;
};

// Per-field overrides of the data-driven fit bounds; unset fields keep the
// defaults computed from the point cloud.
struct FitBoundsOverride {
  std::optional<double> u_min, u_max, ell_min, ell_max, sigma_min, sigma_max;

  FitBounds apply(FitBounds base) const;
};

struct ExperimentConfig {
  TerrainSpec terrain;
  std::vector<double> gsd_list{1.5, 2.0, 3.0, 4.0};  // m
  double noise_3sigma = 0.05;                        // m
  double hole_fraction = 0.0;
  LanderGeometry geometry;  // footprint_step 0 means "use DEM resolution"
  SafetyThresholds thresholds;
  DenomMode denom_mode = DenomMode::paper;
  bool conservative_fourth_pad = false;
  bool fix_sigma = true;
  FitBoundsOverride fit_bounds;
  int mc_samples = 100;
  std::uint64_t mc_seed = 99;
  KGrid k_grid;
  std::vector<std::uint64_t> seeds{101};  // measurement-noise seeds
  double binarize_at = 0.5;
  std::string output_dir;
  int n_threads = 0;

  void validate() const;
};

// Strict parser: unknown keys anywhere in the document are rejected.
// `origin` names the source (file path or "<inline>") in error messages.
ExperimentConfig parse_experiment_config(const std::string& json_text,
                                         const std::string& origin);
ExperimentConfig load_experiment_config(const std::string& path);

struct CaseRecord {
  double gsd = 0.0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;  // set when ok is false

  KernelParams fitted;
  double achieved_lml = 0.0;
  double k1_opt = 1.0, k2_opt = 1.0;
  double slope_rmse = 0.0, roughness_rmse = 0.0;
  double mean_p_slope_safe = 0.0, mean_p_slope_unsafe = 0.0;
  double mean_p_rough_safe = 0.0, mean_p_rough_unsafe = 0.0;
  double baseline_missed_hazard = 0.0;
  double shd_missed_hazard = 0.0;
  double mc_missed_hazard = 0.0;
  long hazards = 0;
  long valid_pixels = 0;
};

struct EvalReport {
  std::vector<CaseRecord> cases;  // one per (gsd, seed), in config order
};

// Full pipeline per (gsd, seed) case: simulate measurements, fit the field,
// build baseline/sampling/analytic maps, optimize the raising factors
// against the sampling oracle, and score against the deterministic truth.
// Artifacts land under cfg.output_dir (terrain/, pcd/, models/, maps/,
// report.json). A failing case is recorded and the rest proceed.
EvalReport run_experiment(const ExperimentConfig& cfg);

}  // namespace grfhd
