#include "grfhd/safety.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <utility>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <json.hpp>

#include "grfhd/errors.hpp"
#include "grfhd/grid_io.hpp"

namespace grfhd {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kPi = 3.14159265358979323846264338327950288;
constexpr double kSqrt2 = 1.41421356237309504880168872420969808;
constexpr double kDegenerateSd = 1e-12;
constexpr double kClearanceTol = 1e-12;  // m, fourth-pad ground clearance
constexpr double kHullTol = 1e-9;

int resolve_threads(int n) {
#ifdef _OPENMP
  return n > 0 ? n : omp_get_max_threads();
#else
  (void)n;
  return 1;
#endif
}

double phi_cdf(double x) { return 0.5 * std::erfc(-x / kSqrt2); }

double event_probability(double tau, const QuadFormMoments& mom, DenomMode mode) {
  const double sd = std::sqrt(std::max(mom.var, 0.0));
  if (sd < kDegenerateSd) return mom.mean < tau ? 1.0 : 0.0;
  const double denom = mode == DenomMode::paper ? kSqrt2 * sd : sd;
  return phi_cdf((tau - mom.mean) / denom);
}

// k == 1 goes through untouched so a unit-factor run is bitwise reusable as
// the base of the raising-identity post-processing.
double raise(double p, double k) { return k == 1.0 ? p : std::pow(p, k); }

struct Plane {
  double a, b, c, d;
  double norm;  // sqrt(a^2 + b^2 + c^2)
};

// Landing plane through three contact points; c is twice the pad-triangle
// area and is positive for counterclockwise pads.
Plane plane_from_pads(const Point2& p1, const Point2& p2, const Point2& p3,
                      double z1, double z2, double z3) {
  const double x12 = p2.x - p1.x, x13 = p3.x - p1.x, x23 = p3.x - p2.x;
  const double y12 = p2.y - p1.y, y13 = p3.y - p1.y, y23 = p3.y - p2.y;
  Plane pl;
  pl.a = z1 * y23 - z2 * y13 + z3 * y12;
  pl.b = -(z1 * x23 - z2 * x13 + z3 * x12);
  pl.c = x12 * y13 - x13 * y12;
  pl.d = -(pl.a * p1.x + pl.b * p1.y + pl.c * z1);
  pl.norm = std::sqrt(pl.a * pl.a + pl.b * pl.b + pl.c * pl.c);
  return pl;
}

struct OrientationTables {
  std::vector<PadSet> pads;
  std::vector<std::vector<Point2>> footprints;
  std::vector<PadTriple> triples;
};

OrientationTables make_orientation_tables(const LanderGeometry& geom) {
  OrientationTables t;
  t.triples = pad_triples(geom.n_pads);
  for (const double theta : geom.thetas()) {
    t.pads.push_back(pad_locations(geom, theta));
    t.footprints.push_back(footprint_points(geom, theta));
  }
  return t;
}

struct PixelTruth {
  double slope = 0.0;
  double rough = 0.0;
  bool valid = false;
};

PixelTruth eval_truth_pixel(const DemGrid& dem, double tx, double ty,
                            const OrientationTables& tables) {
  PixelTruth out;
  for (std::size_t k = 0; k < tables.pads.size(); ++k) {
    const auto& pads = tables.pads[k].pad_xy;
    const int np = static_cast<int>(pads.size());
    std::array<double, 4> pz{};
    for (int i = 0; i < np; ++i) {
      pz[i] = bilinear_at(dem, tx + pads[i].x, ty + pads[i].y);
      if (std::isnan(pz[i])) return {};  // footprint leaves the data
    }
    const auto& fp = tables.footprints[k];
    std::vector<double> fz(fp.size());
    for (std::size_t j = 0; j < fp.size(); ++j) {
      fz[j] = bilinear_at(dem, tx + fp[j].x, ty + fp[j].y);
      if (std::isnan(fz[j])) return {};
    }

    double theta_slope = 0.0, theta_rough = 0.0;
    bool any_feasible = false;
    for (const auto& tri : tables.triples) {
      const Point2& a = pads[tri.contact[0]];
      const Point2& b = pads[tri.contact[1]];
      const Point2& c = pads[tri.contact[2]];
      const Plane pl = plane_from_pads(a, b, c, pz[tri.contact[0]],
                                       pz[tri.contact[1]], pz[tri.contact[2]]);
      if (tri.other >= 0) {
        const Point2& o = pads[tri.other];
        const double plane_z = (-pl.a * o.x - pl.b * o.y - pl.d) / pl.c;
        if (pz[tri.other] < plane_z - kClearanceTol) continue;
      }
      any_feasible = true;
      const double s =
          std::acos(std::clamp(pl.c / pl.norm, -1.0, 1.0));
      double r = 0.0;
      for (std::size_t j = 0; j < fp.size(); ++j)
        r = std::max(r, std::abs(pl.a * fp[j].x + pl.b * fp[j].y +
                                 pl.c * fz[j] + pl.d) /
                            pl.norm);
      theta_slope = std::max(theta_slope, s);
      theta_rough = std::max(theta_rough, r);
    }
    if (!any_feasible) continue;  // cannot happen with exact elevations
    out.slope = std::max(out.slope, theta_slope);
    out.rough = std::max(out.rough, theta_rough);
  }
  out.valid = true;
  return out;
}

SafetyTruth deterministic_eval_with_tables(const DemGrid& dem,
                                           const OrientationTables& tables,
                                           const SafetyThresholds& thresholds,
                                           int n_threads) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  SafetyTruth truth;
  truth.grid = dem.grid;
  const std::size_t size = dem.grid.size();
  truth.slope.assign(size, nan);
  truth.roughness.assign(size, nan);
  truth.is_safe.assign(size, 0);
  truth.valid.assign(size, 0);

  const long total = static_cast<long>(size);
  const int nt = resolve_threads(n_threads);
  (void)nt;
#ifdef _OPENMP
#pragma omp parallel for num_threads(nt) schedule(static)
#endif
  for (long pix = 0; pix < total; ++pix) {
    const int r = static_cast<int>(pix / dem.grid.cols);
    const int c = static_cast<int>(pix % dem.grid.cols);
    const PixelTruth pt =
        eval_truth_pixel(dem, dem.grid.x_of(c), dem.grid.y_of(r), tables);
    if (!pt.valid) continue;
    truth.slope[pix] = pt.slope;
    truth.roughness[pix] = pt.rough;
    truth.valid[pix] = 1;
    truth.is_safe[pix] = (pt.slope < thresholds.slope_max &&
                          pt.rough < thresholds.roughness_max)
                             ? 1
                             : 0;
  }
  return truth;
}

GrfPosterior extract_block(const GrfPosterior& post, const int* idx, int n) {
  GrfPosterior out;
  out.query_locations.resize(static_cast<std::size_t>(n));
  out.mean.resize(n);
  out.cov.resize(n, n);
  for (int i = 0; i < n; ++i) {
    out.query_locations[i] = post.query_locations[idx[i]];
    out.mean(i) = post.mean(idx[i]);
    for (int j = 0; j < n; ++j) out.cov(i, j) = post.cov(idx[i], idx[j]);
  }
  return out;
}

// Map validity: the footprint clearance disk must sit inside both the
// convex hull of the measurements and the map extent.
std::vector<std::uint8_t> model_validity_mask(const GridSpec& grid,
                                              const PointCloud& train,
                                              double footprint_radius) {
  std::vector<Point2> pts(train.x.size());
  for (std::size_t i = 0; i < train.x.size(); ++i) pts[i] = {train.x[i], train.y[i]};
  const std::vector<Point2> hull = convex_hull(std::move(pts));

  std::vector<std::uint8_t> valid(grid.size(), 0);
  for (int r = 0; r < grid.rows; ++r) {
    const double y = grid.y_of(r);
    for (int c = 0; c < grid.cols; ++c) {
      const double x = grid.x_of(c);
      const bool in_grid = x - footprint_radius >= grid.origin_x - kHullTol &&
                           x + footprint_radius <= grid.x_max() + kHullTol &&
                           y - footprint_radius >= grid.origin_y - kHullTol &&
                           y + footprint_radius <= grid.y_max() + kHullTol;
      if (in_grid && disk_in_hull({x, y}, footprint_radius, hull, kHullTol))
        valid[static_cast<std::size_t>(r) * grid.cols + c] = 1;
    }
  }
  return valid;
}

SafetyMap empty_map(const GridSpec& grid) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  SafetyMap map;
  map.grid = grid;
  map.p_slope.assign(grid.size(), nan);
  map.p_roughness.assign(grid.size(), nan);
  map.p_safe.assign(grid.size(), nan);
  map.valid.assign(grid.size(), 0);
  return map;
}

// Precomputed target-centered tables for the analytic driver: the offset
// union conditioned per target, plus every A and B form, all reused across
// targets.
struct ShdTables {
  std::vector<Point2> offsets;
  std::vector<std::vector<int>> pad_idx;  // [theta][pad]
  std::vector<std::vector<int>> fp_idx;   // [theta][footprint point]
  std::vector<PadSet> pads;               // [theta]
  std::vector<PadTriple> triples;
  std::vector<std::vector<QuadFormSlope>> slope_forms;  // [theta][triple]
  std::vector<std::vector<std::vector<QuadFormRoughness>>>
      rough_forms;  // [theta][triple][footprint point]
};

ShdTables make_shd_tables(const LanderGeometry& geom,
                          const SafetyThresholds& thresholds) {
  ShdTables t;
  t.triples = pad_triples(geom.n_pads);
  std::map<std::pair<double, double>, int> seen;
  auto intern = [&](const Point2& p) {
    const auto key = std::make_pair(p.x, p.y);
    const auto it = seen.find(key);
    if (it != seen.end()) return it->second;
    const int id = static_cast<int>(t.offsets.size());
    seen.emplace(key, id);
    t.offsets.push_back(p);
    return id;
  };

  const auto thetas = geom.thetas();
  for (const double theta : thetas) {
    const PadSet pads = pad_locations(geom, theta);
    const std::vector<Point2> fp = footprint_points(geom, theta);

    std::vector<int> pidx(pads.pad_xy.size());
    for (std::size_t i = 0; i < pads.pad_xy.size(); ++i)
      pidx[i] = intern(pads.pad_xy[i]);
    std::vector<int> fidx(fp.size());
    for (std::size_t j = 0; j < fp.size(); ++j) fidx[j] = intern(fp[j]);

    std::vector<QuadFormSlope> sforms;
    std::vector<std::vector<QuadFormRoughness>> rforms;
    for (const auto& tri : t.triples) {
      PadSet tri_pads;
      tri_pads.theta = theta;
      tri_pads.pad_xy = {pads.pad_xy[tri.contact[0]], pads.pad_xy[tri.contact[1]],
                         pads.pad_xy[tri.contact[2]]};
      sforms.push_back(build_A(tri_pads, thresholds.slope_max));
      std::vector<QuadFormRoughness> row;
      row.reserve(fp.size());
      for (const auto& gp : fp)
        row.push_back(build_B(tri_pads, gp, thresholds.roughness_max));
      rforms.push_back(std::move(row));
    }

    t.pads.push_back(pads);
    t.pad_idx.push_back(std::move(pidx));
    t.fp_idx.push_back(std::move(fidx));
    t.slope_forms.push_back(std::move(sforms));
    t.rough_forms.push_back(std::move(rforms));
  }
  return t;
}

struct RawTarget {
  double p_slope = 0.0;
  double p_rough = 0.0;
};

// Worst-case (minimum) safety probabilities over orientations and contact
// triples for one target, from its joint posterior over the offset union.
RawTarget evaluate_target(const GrfPosterior& post, const ShdTables& t,
                          DenomMode mode, bool conservative) {
  double ps_min = std::numeric_limits<double>::infinity();
  double pr_min = std::numeric_limits<double>::infinity();
  bool any_theta = false;

  for (std::size_t k = 0; k < t.pads.size(); ++k) {
    double ps_theta = std::numeric_limits<double>::infinity();
    double pr_theta = std::numeric_limits<double>::infinity();
    bool feasible = false;
    for (std::size_t ti = 0; ti < t.triples.size(); ++ti) {
      const auto& tri = t.triples[ti];
      int idx[4] = {t.pad_idx[k][tri.contact[0]], t.pad_idx[k][tri.contact[1]],
                    t.pad_idx[k][tri.contact[2]], 0};
      if (tri.other >= 0) {
        idx[3] = t.pad_idx[k][tri.other];
        const GrfPosterior quad = extract_block(post, idx, 4);
        PadSet quad_pads;
        quad_pads.theta = t.pads[k].theta;
        quad_pads.pad_xy = {
            t.pads[k].pad_xy[tri.contact[0]], t.pads[k].pad_xy[tri.contact[1]],
            t.pads[k].pad_xy[tri.contact[2]], t.pads[k].pad_xy[tri.other]};
        if (!fourth_pad_feasible(quad, quad_pads, conservative)) continue;
      }
      feasible = true;

      const GrfPosterior pad3 = extract_block(post, idx, 3);
      const double ps = prob_slope_safe(pad3, t.slope_forms[k][ti], mode);

      double pr = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < t.fp_idx[k].size(); ++j) {
        idx[3] = t.fp_idx[k][j];
        const GrfPosterior four = extract_block(post, idx, 4);
        pr = std::min(pr,
                      prob_roughness_safe_point(four, t.rough_forms[k][ti][j], mode));
      }
      ps_theta = std::min(ps_theta, ps);
      pr_theta = std::min(pr_theta, pr);
    }
    if (!feasible) continue;  // orientation skipped, no contact triple rests
    any_theta = true;
    ps_min = std::min(ps_min, ps_theta);
    pr_min = std::min(pr_min, pr_theta);
  }
  if (!any_theta) return {0.0, 0.0};  // nothing can land here at all
  return {ps_min, pr_min};
}

DemGrid channel_to_dem(const GridSpec& grid, const std::vector<double>& values) {
  DemGrid dem;
  dem.grid = grid;
  dem.z = values;
  return dem;
}

}  // namespace

void SafetyThresholds::validate() const {
  if (!std::isfinite(slope_max) || slope_max <= 0.0 || slope_max >= kPi / 2.0)
    throw parameter_error("slope threshold must lie in (0, pi/2) radians");
  if (!std::isfinite(roughness_max) || roughness_max <= 0.0)
    throw parameter_error("roughness threshold must be > 0");
}

void RaisingFactors::validate() const {
  if (!std::isfinite(k1) || k1 <= 0.0 || !std::isfinite(k2) || k2 <= 0.0)
    throw parameter_error("raising factors must be finite and > 0");
}

DenomMode denom_mode_from_string(const std::string& s) {
  if (s == "paper") return DenomMode::paper;
  if (s == "standard") return DenomMode::standard;
  throw parameter_error("denominator mode must be 'paper' or 'standard', got '" +
                        s + "'");
}

std::string to_string(DenomMode mode) {
  return mode == DenomMode::paper ? "paper" : "standard";
}

QuadFormMoments quadform_moments(const VectorXd& mu, const MatrixXd& sigma,
                                 const MatrixXd& m) {
  const int n = static_cast<int>(mu.size());
  if (sigma.rows() != n || sigma.cols() != n || m.rows() != n || m.cols() != n)
    throw parameter_error("quadform_moments: dimension mismatch");

  const MatrixXd ms = m * sigma;
  const VectorXd mmu = m * mu;
  const double trace_term = ms.trace();
  const double mean = trace_term + mu.dot(mmu);
  const double var_trace = 2.0 * (ms * ms).trace();
  const double var_mu = 4.0 * mmu.dot(sigma * mmu);
  double var = var_trace + var_mu;
  if (var < 0.0) {
    const double tol =
        1e-12 * std::max(1.0, std::abs(var_trace) + std::abs(var_mu));
    if (var < -tol)
      throw numerical_error(
          "quadratic-form variance is negative beyond roundoff");
    var = 0.0;
  }
  return {mean, var};
}

double prob_slope_safe(const GrfPosterior& post, const QuadFormSlope& qf,
                       DenomMode mode) {
  if (post.mean.size() != 3)
    throw parameter_error("prob_slope_safe: posterior must be 3-dimensional");
  const auto mom = quadform_moments(post.mean, post.cov, qf.A);
  return event_probability(qf.tau_s, mom, mode);
}

double prob_roughness_safe_point(const GrfPosterior& post,
                                 const QuadFormRoughness& qf, DenomMode mode) {
  if (post.mean.size() != 4)
    throw parameter_error(
        "prob_roughness_safe_point: posterior must be 4-dimensional "
        "[z1, z2, z3, z_p]");
  const auto mom = quadform_moments(post.mean, post.cov, qf.B);
  return event_probability(qf.tau_r, mom, mode);
}

bool fourth_pad_feasible(const GrfPosterior& post, const PadSet& pads,
                         bool conservative) {
  if (post.mean.size() != 4 || pads.pad_xy.size() != 4)
    throw parameter_error(
        "fourth_pad_feasible: needs a 4-dimensional posterior and 4 pads");
  const auto& p = pads.pad_xy;
  const Plane pl = plane_from_pads(p[0], p[1], p[2], post.mean(0), post.mean(1),
                                   post.mean(2));
  if (std::abs(pl.c) < 1e-12)
    throw parameter_error("fourth_pad_feasible: contact pads are collinear");
  const double plane_z = (-pl.a * p[3].x - pl.b * p[3].y - pl.d) / pl.c;
  double z4 = post.mean(3);
  if (conservative) z4 -= 3.0 * std::sqrt(std::max(post.cov(3, 3), 0.0));
  return z4 >= plane_z - kClearanceTol;
}

SafetyTruth deterministic_eval(const DemGrid& dem, const LanderGeometry& geom,
                               const SafetyThresholds& thresholds,
                               int n_threads) {
  dem.grid.validate();
  geom.validate();
  thresholds.validate();
  return deterministic_eval_with_tables(dem, make_orientation_tables(geom),
                                        thresholds, n_threads);
}

SafetyMap shd_map(const GrfModel& model, const LanderGeometry& geom,
                  const SafetyThresholds& thresholds,
                  const RaisingFactors& factors, const GridSpec& grid,
                  const ShdOptions& opts) {
  grid.validate();
  geom.validate();
  thresholds.validate();
  factors.validate();

  const ShdTables tables = make_shd_tables(geom, thresholds);
  SafetyMap map = empty_map(grid);
  map.valid = model_validity_mask(grid, model.train(), geom.footprint_radius);

  const double k_slope = factors.k1;
  const double k_rough = factors.k1 * factors.k2;
  const long total = static_cast<long>(grid.size());
  const int nt = resolve_threads(opts.n_threads);
  (void)nt;
#ifdef _OPENMP
#pragma omp parallel for num_threads(nt) schedule(static)
#endif
  for (long pix = 0; pix < total; ++pix) {
    if (!map.valid[pix]) continue;
    const int r = static_cast<int>(pix / grid.cols);
    const int c = static_cast<int>(pix % grid.cols);
    const double tx = grid.x_of(c);
    const double ty = grid.y_of(r);

    std::vector<Point2> queries(tables.offsets.size());
    for (std::size_t i = 0; i < tables.offsets.size(); ++i)
      queries[i] = {tx + tables.offsets[i].x, ty + tables.offsets[i].y};
    const GrfPosterior post = condition(model, queries);
    const RawTarget raw = evaluate_target(post, tables, opts.denom_mode,
                                          opts.conservative_fourth_pad);

    const double ps = raise(raw.p_slope, k_slope);
    const double pr = raise(raw.p_rough, k_rough);
    map.p_slope[pix] = ps;
    map.p_roughness[pix] = pr;
    map.p_safe[pix] = ps * pr;
  }
  return map;
}

SafetyMap mc_safety_map(const GrfModel& model, const LanderGeometry& geom,
                        const SafetyThresholds& thresholds, int n_samples,
                        std::uint64_t seed, const GridSpec& grid,
                        int n_threads) {
  grid.validate();
  geom.validate();
  thresholds.validate();
  if (n_samples < 1)
    throw parameter_error("mc_safety_map: n_samples must be >= 1");
  if (grid.size() > 12000)
    throw capacity_error(
        "mc_safety_map: grid has " + std::to_string(grid.size()) +
        " nodes; joint posterior sampling is capped at 12000 nodes");

  std::vector<Point2> nodes;
  nodes.reserve(grid.size());
  for (int r = 0; r < grid.rows; ++r)
    for (int c = 0; c < grid.cols; ++c) nodes.push_back({grid.x_of(c), grid.y_of(r)});
  const GrfPosterior post = condition(model, nodes);
  const auto samples = sample_posterior(post, n_samples, seed);

  const OrientationTables tables = make_orientation_tables(geom);
  const std::size_t size = grid.size();
  std::vector<int> slope_pass(size, 0), rough_pass(size, 0), both_pass(size, 0);

  for (const auto& field : samples) {
    DemGrid dem;
    dem.grid = grid;
    dem.z.assign(field.data(), field.data() + field.size());
    const SafetyTruth truth =
        deterministic_eval_with_tables(dem, tables, thresholds, n_threads);
    for (std::size_t i = 0; i < size; ++i) {
      if (!truth.valid[i]) continue;
      if (truth.slope[i] < thresholds.slope_max) ++slope_pass[i];
      if (truth.roughness[i] < thresholds.roughness_max) ++rough_pass[i];
      if (truth.is_safe[i]) ++both_pass[i];
    }
  }

  SafetyMap map = empty_map(grid);
  map.valid = model_validity_mask(grid, model.train(), geom.footprint_radius);
  for (std::size_t i = 0; i < size; ++i) {
    if (!map.valid[i]) continue;
    map.p_slope[i] = static_cast<double>(slope_pass[i]) / n_samples;
    map.p_roughness[i] = static_cast<double>(rough_pass[i]) / n_samples;
    map.p_safe[i] = static_cast<double>(both_pass[i]) / n_samples;
  }
  return map;
}

SafetyMap baseline_map(const PointCloud& pcd, const LanderGeometry& geom,
                       const SafetyThresholds& thresholds, const GridSpec& grid,
                       int n_threads) {
  const DemGrid dem = bilinear_upsample(pcd, grid);
  const SafetyTruth truth = deterministic_eval(dem, geom, thresholds, n_threads);

  SafetyMap map = empty_map(grid);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!truth.valid[i]) continue;
    map.valid[i] = 1;
    map.p_slope[i] = truth.slope[i] < thresholds.slope_max ? 1.0 : 0.0;
    map.p_roughness[i] = truth.roughness[i] < thresholds.roughness_max ? 1.0 : 0.0;
    map.p_safe[i] = map.p_slope[i] * map.p_roughness[i];
  }
  return map;
}

namespace serial_reference {

SafetyMap shd_map(const GrfModel& model, const LanderGeometry& geom,
                  const SafetyThresholds& thresholds,
                  const RaisingFactors& factors, const GridSpec& grid,
                  DenomMode denom_mode, bool conservative_fourth_pad) {
  grid.validate();
  geom.validate();
  thresholds.validate();
  factors.validate();

  SafetyMap map = empty_map(grid);
  map.valid = model_validity_mask(grid, model.train(), geom.footprint_radius);
  const auto thetas = geom.thetas();
  const auto triples = pad_triples(geom.n_pads);

  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      const std::size_t pix = static_cast<std::size_t>(r) * grid.cols + c;
      if (!map.valid[pix]) continue;
      const double tx = grid.x_of(c);
      const double ty = grid.y_of(r);

      double ps_min = std::numeric_limits<double>::infinity();
      double pr_min = std::numeric_limits<double>::infinity();
      bool any_theta = false;
      for (const double theta : thetas) {
        const PadSet pads = pad_locations(geom, theta);
        const auto fp = footprint_points(geom, theta);

        double ps_theta = std::numeric_limits<double>::infinity();
        double pr_theta = std::numeric_limits<double>::infinity();
        bool feasible = false;
        for (const auto& tri : triples) {
          PadSet tri_abs;  // contact pads at their absolute map positions
          tri_abs.theta = theta;
          for (const int i : tri.contact)
            tri_abs.pad_xy.push_back(
                {tx + pads.pad_xy[i].x, ty + pads.pad_xy[i].y});

          if (tri.other >= 0) {
            PadSet quad = tri_abs;
            quad.pad_xy.push_back({tx + pads.pad_xy[tri.other].x,
                                   ty + pads.pad_xy[tri.other].y});
            const GrfPosterior p4 = condition(model, quad.pad_xy);
            if (!fourth_pad_feasible(p4, quad, conservative_fourth_pad)) continue;
          }
          feasible = true;

          const GrfPosterior p3 = condition(model, tri_abs.pad_xy);
          const double ps =
              prob_slope_safe(p3, build_A(tri_abs, thresholds.slope_max), denom_mode);

          double pr = std::numeric_limits<double>::infinity();
          for (const auto& gp : fp) {
            const Point2 gp_abs{tx + gp.x, ty + gp.y};
            std::vector<Point2> q = tri_abs.pad_xy;
            q.push_back(gp_abs);
            const GrfPosterior p4 = condition(model, q);
            pr = std::min(
                pr, prob_roughness_safe_point(
                        p4, build_B(tri_abs, gp_abs, thresholds.roughness_max),
                        denom_mode));
          }
          ps_theta = std::min(ps_theta, ps);
          pr_theta = std::min(pr_theta, pr);
        }
        if (!feasible) continue;
        any_theta = true;
        ps_min = std::min(ps_min, ps_theta);
        pr_min = std::min(pr_min, pr_theta);
      }

      const double raw_s = any_theta ? ps_min : 0.0;
      const double raw_r = any_theta ? pr_min : 0.0;
      const double ps = raise(raw_s, factors.k1);
      const double pr = raise(raw_r, factors.k1 * factors.k2);
      map.p_slope[pix] = ps;
      map.p_roughness[pix] = pr;
      map.p_safe[pix] = ps * pr;
    }
  }
  return map;
}

}  // namespace serial_reference

void save_safety_map(const std::string& base_path, const SafetyMap& map,
                     const SafetyMapMeta& meta) {
  save_dem(channel_to_dem(map.grid, map.p_slope), base_path + ".p_slope.grid");
  save_dem(channel_to_dem(map.grid, map.p_roughness),
           base_path + ".p_roughness.grid");
  save_dem(channel_to_dem(map.grid, map.p_safe), base_path + ".p_safe.grid");

  nlohmann::json j;
  j["format"] = "grfhd-safety-map";
  j["version"] = 1;
  j["mode"] = meta.mode;
  j["thresholds"] = {{"slope_max_rad", meta.thresholds.slope_max},
                     {"roughness_max_m", meta.thresholds.roughness_max}};
  j["factors"] = {{"k1", meta.factors.k1}, {"k2", meta.factors.k2}};
  j["geometry"] = {{"n_pads", meta.geometry.n_pads},
                   {"pad_radius_m", meta.geometry.pad_radius},
                   {"footprint_radius_m", meta.geometry.footprint_radius},
                   {"n_orientations", meta.geometry.n_orientations},
                   {"footprint_step_m", meta.geometry.footprint_step}};
  j["model"] = meta.model_ref;
  j["denom_mode"] = meta.denom_mode;
  j["n_orientations"] = meta.geometry.n_orientations;
  write_file_maybe_gz(base_path + ".meta.json", j.dump(2) + "\n");
}

std::pair<SafetyMap, SafetyMapMeta> load_safety_map(const std::string& base_path) {
  const DemGrid ps = load_dem(base_path + ".p_slope.grid");
  const DemGrid pr = load_dem(base_path + ".p_roughness.grid");
  const DemGrid pf = load_dem(base_path + ".p_safe.grid");
  if (!ps.grid.same_as(pr.grid) || !ps.grid.same_as(pf.grid))
    throw format_error("'" + base_path + "': channel grids disagree");

  SafetyMap map;
  map.grid = ps.grid;
  map.p_slope = ps.z;
  map.p_roughness = pr.z;
  map.p_safe = pf.z;
  map.valid.assign(map.grid.size(), 0);
  for (std::size_t i = 0; i < map.grid.size(); ++i)
    map.valid[i] = std::isnan(map.p_safe[i]) ? 0 : 1;

  SafetyMapMeta meta;
  nlohmann::json j;
  const std::string meta_path = base_path + ".meta.json";
  try {
    j = nlohmann::json::parse(read_file_maybe_gz(meta_path));
    if (j.at("format").get<std::string>() != "grfhd-safety-map")
      throw format_error("'" + meta_path + "': not a safety-map record");
    meta.mode = j.at("mode").get<std::string>();
    meta.thresholds.slope_max = j.at("thresholds").at("slope_max_rad").get<double>();
    meta.thresholds.roughness_max =
        j.at("thresholds").at("roughness_max_m").get<double>();
    meta.factors.k1 = j.at("factors").at("k1").get<double>();
    meta.factors.k2 = j.at("factors").at("k2").get<double>();
    const auto& g = j.at("geometry");
    meta.geometry.n_pads = g.at("n_pads").get<int>();
    meta.geometry.pad_radius = g.at("pad_radius_m").get<double>();
    meta.geometry.footprint_radius = g.at("footprint_radius_m").get<double>();
    meta.geometry.n_orientations = g.at("n_orientations").get<int>();
    meta.geometry.footprint_step = g.at("footprint_step_m").get<double>();
    meta.model_ref = j.at("model").get<std::string>();
    meta.denom_mode = j.at("denom_mode").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw format_error("'" + meta_path + "': bad safety-map metadata: " +
                       std::string(e.what()));
  }
  return {std::move(map), std::move(meta)};
}

void save_safety_truth(const std::string& base_path, const SafetyTruth& truth) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  save_dem(channel_to_dem(truth.grid, truth.slope), base_path + ".slope.grid");
  save_dem(channel_to_dem(truth.grid, truth.roughness),
           base_path + ".roughness.grid");
  std::vector<double> safe(truth.grid.size(), nan);
  for (std::size_t i = 0; i < truth.grid.size(); ++i)
    if (truth.valid[i]) safe[i] = truth.is_safe[i] ? 1.0 : 0.0;
  save_dem(channel_to_dem(truth.grid, safe), base_path + ".is_safe.grid");
}

SafetyTruth load_safety_truth(const std::string& base_path) {
  const DemGrid slope = load_dem(base_path + ".slope.grid");
  const DemGrid rough = load_dem(base_path + ".roughness.grid");
  const DemGrid safe = load_dem(base_path + ".is_safe.grid");
  if (!slope.grid.same_as(rough.grid) || !slope.grid.same_as(safe.grid))
    throw format_error("'" + base_path + "': truth channel grids disagree");

  SafetyTruth truth;
  truth.grid = slope.grid;
  truth.slope = slope.z;
  truth.roughness = rough.z;
  truth.is_safe.assign(truth.grid.size(), 0);
  truth.valid.assign(truth.grid.size(), 0);
  for (std::size_t i = 0; i < truth.grid.size(); ++i) {
    if (std::isnan(slope.z[i])) continue;
    truth.valid[i] = 1;
    truth.is_safe[i] = safe.z[i] > 0.5 ? 1 : 0;
  }
  return truth;
}

}  // namespace grfhd
