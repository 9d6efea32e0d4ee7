#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "grfhd/grf.hpp"
#include "grfhd/lander.hpp"
#include "grfhd/terrain.hpp"

namespace grfhd {

struct SafetyThresholds {
  double slope_max = 0.17453292519943295;  // rad (10 degrees)
  double roughness_max = 0.3;              // m

  void validate() const;
};

// Exponents applied to the worst-case marginal probabilities: the slope
// channel is raised to k1, the roughness channel to k1*k2.
struct RaisingFactors {
  double k1 = 1.0;
  double k2 = 1.0;

  void validate() const;
};

// Denominator of the Gaussian CDF argument: `paper` uses sqrt(2)*sigma as
// printed in the source derivation, `standard` uses plain sigma (the usual
// Gaussian tail). Both are kept; the difference is surfaced in tests.
enum class DenomMode { paper, standard };
DenomMode denom_mode_from_string(const std::string& s);
std::string to_string(DenomMode mode);

// Per-pixel safety probabilities. Invalid pixels carry NaN in the
// probability channels and 0 in the valid mask.
struct SafetyMap {
  GridSpec grid;
  std::vector<double> p_slope;
  std::vector<double> p_roughness;
  std::vector<double> p_safe;
  std::vector<std::uint8_t> valid;
};

// Deterministic worst-case evaluation of a concrete surface.
struct SafetyTruth {
  GridSpec grid;
  std::vector<double> slope;      // rad, worst over orientations
  std::vector<double> roughness;  // m, worst over orientations and footprint
  std::vector<std::uint8_t> is_safe;
  std::vector<std::uint8_t> valid;
};

struct QuadFormMoments {
  double mean = 0.0;
  double var = 0.0;
};

// Moments of Z^T M Z for Z ~ N(mu, Sigma):
//   mean = tr(M Sigma) + mu^T M mu
//   var  = 2 tr(M Sigma M Sigma) + 4 mu^T M Sigma M mu
// Tiny negative variances from roundoff are clamped to zero.
QuadFormMoments quadform_moments(const Eigen::VectorXd& mu,
                                 const Eigen::MatrixXd& sigma,
                                 const Eigen::MatrixXd& m);

// P{Z^T A Z < tau_s} for the 3-pad elevation posterior, via the Gaussian
// approximation of the quadratic form. Degenerate spread (sigma < 1e-12)
// falls back to a step function on the mean.
double prob_slope_safe(const GrfPosterior& post, const QuadFormSlope& qf,
                       DenomMode mode = DenomMode::paper);

// Same approximation for the 4-dimensional [z1, z2, z3, z_p] posterior.
double prob_roughness_safe_point(const GrfPosterior& post,
                                 const QuadFormRoughness& qf,
                                 DenomMode mode = DenomMode::paper);

// Ground-clearance check for the pad left out of a contact triple. The
// posterior and pad set are ordered [contact 1, contact 2, contact 3,
// checked pad]; expected elevations span the landing plane and the checked
// pad must not sit below it (by more than 1e-12 m). The conservative
// variant shifts the checked pad down by 3 posterior standard deviations.
bool fourth_pad_feasible(const GrfPosterior& post, const PadSet& pads,
                         bool conservative);

SafetyTruth deterministic_eval(const DemGrid& dem, const LanderGeometry& geom,
                               const SafetyThresholds& thresholds,
                               int n_threads = 0);

struct ShdOptions {
  DenomMode denom_mode = DenomMode::paper;
  bool conservative_fourth_pad = false;
  int n_threads = 0;  // 0 = runtime default
};

// Analytic probabilistic safety map: per target, one joint conditioning over
// every pad and footprint offset, quadratic-form tail approximations
// minimized over orientations (and contact triples for 4 pads), then the
// raising factors applied.
SafetyMap shd_map(const GrfModel& model, const LanderGeometry& geom,
                  const SafetyThresholds& thresholds,
                  const RaisingFactors& factors, const GridSpec& grid,
                  const ShdOptions& opts = {});

// Sampling oracle: draws whole elevation fields from the posterior at the
// grid nodes and takes per-pixel pass fractions of the deterministic
// evaluation. Seed-deterministic and thread-count invariant.
SafetyMap mc_safety_map(const GrfModel& model, const LanderGeometry& geom,
                        const SafetyThresholds& thresholds, int n_samples,
                        std::uint64_t seed, const GridSpec& grid,
                        int n_threads = 0);

// Bilinear upsampling of the raw measurements followed by deterministic
// evaluation; probabilities are 0/1.
SafetyMap baseline_map(const PointCloud& pcd, const LanderGeometry& geom,
                       const SafetyThresholds& thresholds, const GridSpec& grid,
                       int n_threads = 0);

namespace serial_reference {
// Independent analytic driver kept for cross-checking the production map:
// no shared conditioning, no precomputed tables, no threading. Each
// (orientation, footprint point) conditions its own small posterior.
SafetyMap shd_map(const GrfModel& model, const LanderGeometry& geom,
                  const SafetyThresholds& thresholds,
                  const RaisingFactors& factors, const GridSpec& grid,
                  DenomMode denom_mode = DenomMode::paper,
                  bool conservative_fourth_pad = false);
}  // namespace serial_reference

struct SafetyMapMeta {
  std::string mode;  // "shd", "mc", or "baseline"
  SafetyThresholds thresholds;
  RaisingFactors factors;
  LanderGeometry geometry;
  std::string model_ref;  // model record path, empty when not model-based
  std::string denom_mode = "paper";
};

// Maps persist as three grid files (<base>.p_slope.grid, .p_roughness.grid,
// .p_safe.grid) plus <base>.meta.json; the valid mask is implied by nodata.
void save_safety_map(const std::string& base_path, const SafetyMap& map,
                     const SafetyMapMeta& meta);
std::pair<SafetyMap, SafetyMapMeta> load_safety_map(const std::string& base_path);

// Truth persists as <base>.slope.grid, .roughness.grid, .is_safe.grid.
void save_safety_truth(const std::string& base_path, const SafetyTruth& truth);
SafetyTruth load_safety_truth(const std::string& base_path);

}  // namespace grfhd
