#include "grfhd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <numeric>
#include <string>

#include <json.hpp>

#include "grfhd/errors.hpp"
#include "grfhd/grid_io.hpp"
#include "grfhd/rng.hpp"

namespace grfhd {

namespace {

using nlohmann::json;

constexpr double kPi = 3.14159265358979323846264338327950288;

const std::vector<double>& channel_of(const SafetyMap& m, MapChannel ch) {
  switch (ch) {
    case MapChannel::p_slope:
      return m.p_slope;
    case MapChannel::p_roughness:
      return m.p_roughness;
    default:
      return m.p_safe;
  }
}

double raise(double p, double k) { return k == 1.0 ? p : std::pow(p, k); }

// Probabilities round-trip through the float32 grid format; quantizing
// before any metric is computed makes every report number reproducible
// from the on-disk artifacts alone.
double q32(double v) { return static_cast<double>(static_cast<float>(v)); }

void quantize_map(SafetyMap& m) {
  for (auto& v : m.p_slope) v = q32(v);
  for (auto& v : m.p_roughness) v = q32(v);
  for (auto& v : m.p_safe) v = q32(v);
}

void quantize_truth(SafetyTruth& t) {
  for (auto& v : t.slope) v = q32(v);
  for (auto& v : t.roughness) v = q32(v);
}

std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

}  // namespace

double rmse_probability(const SafetyMap& map_a, const SafetyMap& map_b,
                        MapChannel channel) {
  if (!map_a.grid.same_as(map_b.grid))
    throw parameter_error("rmse_probability: maps are on different grids");
  const auto& va = channel_of(map_a, channel);
  const auto& vb = channel_of(map_b, channel);
  double ss = 0.0;
  long n = 0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    if (!map_a.valid[i] || !map_b.valid[i]) continue;
    const double d = va[i] - vb[i];
    ss += d * d;
    ++n;
  }
  if (n == 0)
    throw parameter_error("rmse_probability: no pixels are valid in both maps");
  return std::sqrt(ss / static_cast<double>(n));
}

void KGrid::validate() const {
  auto bad = [](double v) { return !std::isfinite(v) || v <= 0.0; };
  if (bad(k1_min) || bad(k1_max) || bad(k1_step) || k1_max < k1_min)
    throw parameter_error("k1 grid must satisfy 0 < min <= max with step > 0");
  if (bad(k2_min) || bad(k2_max) || bad(k2_fine_step) || bad(k2_coarse_step) ||
      k2_max < k2_min)
    throw parameter_error("k2 grid must satisfy 0 < min <= max with steps > 0");
  if (!std::isfinite(k2_fine_min) || !std::isfinite(k2_fine_max) ||
      k2_fine_max < k2_fine_min)
    throw parameter_error("k2 fine range must satisfy fine_min <= fine_max");
}

std::vector<double> KGrid::k1_values() const {
  std::vector<double> out;
  for (int i = 0;; ++i) {
    const double v = k1_min + i * k1_step;
    if (v > k1_max + 1e-9) break;
    out.push_back(v);
  }
  return out;
}

std::vector<double> KGrid::k2_values() const {
  std::vector<double> out;
  auto push = [&](double v) {
    if (v > k2_max + 1e-9) return false;
    if (!out.empty() && std::abs(out.back() - v) < 1e-12) return true;
    out.push_back(v);
    return true;
  };
  for (int i = 0;; ++i) {  // coarse below the fine band
    const double v = k2_min + i * k2_coarse_step;
    if (v >= k2_fine_min - 1e-9) break;
    if (!push(v)) break;
  }
  const double fine_lo = std::max(k2_fine_min, k2_min);
  for (int i = 0;; ++i) {  // fine band
    const double v = fine_lo + i * k2_fine_step;
    if (v > std::min(k2_fine_max, k2_max) + 1e-9) break;
    if (!push(v)) break;
  }
  for (int i = 1;; ++i) {  // coarse above the fine band
    const double v = k2_fine_max + i * k2_coarse_step;
    if (v > k2_max + 1e-9) break;
    if (!push(v)) break;
  }
  if (out.empty()) out.push_back(k2_min);
  return out;
}

namespace {

// RMSE of raw^k against the oracle channel over shared valid pixels.
double raised_rmse(const std::vector<double>& raw, const std::vector<double>& oracle,
                   const std::vector<std::uint8_t>& common, double k) {
  double ss = 0.0;
  long n = 0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!common[i]) continue;
    const double d = raise(raw[i], k) - oracle[i];
    ss += d * d;
    ++n;
  }
  return std::sqrt(ss / static_cast<double>(n));
}

}  // namespace

KOptResult optimize_raising_factors(const SafetyMap& raw_shd,
                                    const SafetyMap& oracle, const KGrid& grid) {
  grid.validate();
  if (!raw_shd.grid.same_as(oracle.grid))
    throw parameter_error("optimize_raising_factors: maps are on different grids");
  std::vector<std::uint8_t> common(raw_shd.valid.size(), 0);
  long n_common = 0;
  for (std::size_t i = 0; i < common.size(); ++i) {
    common[i] = (raw_shd.valid[i] && oracle.valid[i]) ? 1 : 0;
    n_common += common[i];
  }
  if (n_common == 0)
    throw parameter_error(
        "optimize_raising_factors: no pixels are valid in both maps");

  KOptResult best;
  best.slope_rmse = std::numeric_limits<double>::infinity();
  for (const double k1 : grid.k1_values()) {
    const double r = raised_rmse(raw_shd.p_slope, oracle.p_slope, common, k1);
    if (r < best.slope_rmse) {
      best.slope_rmse = r;
      best.k1 = k1;
    }
  }
  best.roughness_rmse = std::numeric_limits<double>::infinity();
  for (const double k2 : grid.k2_values()) {
    const double r =
        raised_rmse(raw_shd.p_roughness, oracle.p_roughness, common, best.k1 * k2);
    if (r < best.roughness_rmse) {
      best.roughness_rmse = r;
      best.k2 = k2;
    }
  }
  return best;
}

SafetyMap apply_raising_factors(const SafetyMap& raw_shd,
                                const RaisingFactors& factors) {
  factors.validate();
  SafetyMap out = raw_shd;
  const double k_rough = factors.k1 * factors.k2;
  for (std::size_t i = 0; i < out.valid.size(); ++i) {
    if (!out.valid[i]) continue;
    out.p_slope[i] = raise(raw_shd.p_slope[i], factors.k1);
    out.p_roughness[i] = raise(raw_shd.p_roughness[i], k_rough);
    out.p_safe[i] = out.p_slope[i] * out.p_roughness[i];
  }
  return out;
}

DetectionMetrics detection_metrics(const SafetyMap& prob_map,
                                   const SafetyTruth& truth, double binarize_at) {
  if (!prob_map.grid.same_as(truth.grid))
    throw parameter_error("detection_metrics: map and truth grids disagree");
  if (!(binarize_at > 0.0) || !(binarize_at < 1.0))
    throw parameter_error("detection_metrics: binarization threshold must lie in (0,1)");

  long tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < prob_map.valid.size(); ++i) {
    if (!prob_map.valid[i] || !truth.valid[i]) continue;
    const bool hazard = !truth.is_safe[i];
    const bool pred_hazard = prob_map.p_safe[i] < binarize_at;
    if (pred_hazard && hazard) ++tp;
    else if (pred_hazard && !hazard) ++fp;
    else if (!pred_hazard && hazard) ++fn;
    else ++tn;
  }
  const long total = tp + fp + fn + tn;
  if (total == 0)
    throw parameter_error("detection_metrics: no pixels are valid in both inputs");

  DetectionMetrics m;
  m.hazards = tp + fn;
  m.valid_pixels = total;
  m.missed_hazard_rate = m.hazards > 0 ? static_cast<double>(fn) / m.hazards : 0.0;
  const long safes = fp + tn;
  m.false_alarm_rate = safes > 0 ? static_cast<double>(fp) / safes : 0.0;
  m.precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 1.0;
  m.recall = m.hazards > 0 ? static_cast<double>(tp) / m.hazards : 1.0;
  return m;
}

FitBounds FitBoundsOverride::apply(FitBounds base) const {
  if (u_min) base.u_min = *u_min;
  if (u_max) base.u_max = *u_max;
  if (ell_min) base.ell_min = *ell_min;
  if (ell_max) base.ell_max = *ell_max;
  if (sigma_min) base.sigma_min = *sigma_min;
  if (sigma_max) base.sigma_max = *sigma_max;
  return base;
}

void ExperimentConfig::validate() const {
  if (terrain.file.empty()) {
    if (terrain.rows < 4 || terrain.cols < 4)
      throw parameter_error("terrain generator needs rows, cols >= 4");
    if (!std::isfinite(terrain.resolution) || terrain.resolution <= 0.0)
      throw parameter_error("terrain resolution must be > 0");
    if (!std::isfinite(terrain.hurst) || terrain.hurst <= 0.0 || terrain.hurst > 1.0)
      throw parameter_error("hurst exponent must lie in (0, 1]");
    if (!std::isfinite(terrain.amplitude) || terrain.amplitude < 0.0)
      throw parameter_error("terrain amplitude must be >= 0");
  }
  if (gsd_list.empty()) throw parameter_error("gsd list must be nonempty");
  for (const double g : gsd_list)
    if (!std::isfinite(g) || g <= 0.0)
      throw parameter_error("gsd values must be finite and > 0");
  if (!std::isfinite(noise_3sigma) || noise_3sigma < 0.0)
    throw parameter_error("noise 3-sigma must be >= 0");
  if (!(hole_fraction >= 0.0) || hole_fraction >= 1.0)
    throw parameter_error("hole fraction must lie in [0, 1)");
  thresholds.validate();
  {
    LanderGeometry g = geometry;
    if (g.footprint_step <= 0.0) g.footprint_step = 1.0;  // resolved later
    g.validate();
  }
  if (mc_samples < 1) throw parameter_error("mc sample count must be >= 1");
  k_grid.validate();
  if (seeds.empty()) throw parameter_error("seeds list must be nonempty");
  if (!(binarize_at > 0.0) || !(binarize_at < 1.0))
    throw parameter_error("binarize_at must lie in (0, 1)");
}

namespace {

void reject_unknown_keys(const json& j, const std::string& origin,
                         const std::string& prefix,
                         std::initializer_list<const char*> allowed) {
  if (!j.is_object())
    throw format_error(origin + ": '" + prefix + "' must be a JSON object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (item.key() == a) {
        ok = true;
        break;
      }
    if (!ok)
      throw format_error(origin + ": unknown config key '" + prefix + item.key() +
                         "'");
  }
}

double get_num(const json& j, const std::string& origin, const std::string& key) {
  if (!j.is_number())
    throw format_error(origin + ": key '" + key + "' must be a number");
  return j.get<double>();
}

int get_int(const json& j, const std::string& origin, const std::string& key) {
  if (!j.is_number_integer())
    throw format_error(origin + ": key '" + key + "' must be an integer");
  return j.get<int>();
}

std::uint64_t get_u64(const json& j, const std::string& origin,
                      const std::string& key) {
  if (!j.is_number_integer() || j.get<long long>() < 0)
    throw format_error(origin + ": key '" + key + "' must be a non-negative integer");
  return j.get<std::uint64_t>();
}

bool get_bool(const json& j, const std::string& origin, const std::string& key) {
  if (!j.is_boolean())
    throw format_error(origin + ": key '" + key + "' must be a boolean");
  return j.get<bool>();
}

std::string get_str(const json& j, const std::string& origin,
                    const std::string& key) {
  if (!j.is_string())
    throw format_error(origin + ": key '" + key + "' must be a string");
  return j.get<std::string>();
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text,
                                         const std::string& origin) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw format_error(origin + ": invalid JSON: " + e.what());
  }
  reject_unknown_keys(j, origin, "",
                      {"terrain", "lidar", "fit", "geometry", "thresholds",
                       "factors", "detect", "mc", "k_grid", "seeds",
                       "binarize_at", "output_dir", "threads"});

  ExperimentConfig cfg;
  if (j.contains("terrain")) {
    const auto& t = j["terrain"];
    reject_unknown_keys(t, origin, "terrain.",
                        {"file", "rows", "cols", "resolution_m", "hurst",
                         "amplitude_m", "seed", "rocks"});
    if (t.contains("file")) cfg.terrain.file = get_str(t["file"], origin, "terrain.file");
    if (t.contains("rows")) cfg.terrain.rows = get_int(t["rows"], origin, "terrain.rows");
    if (t.contains("cols")) cfg.terrain.cols = get_int(t["cols"], origin, "terrain.cols");
    if (t.contains("resolution_m"))
      cfg.terrain.resolution = get_num(t["resolution_m"], origin, "terrain.resolution_m");
    if (t.contains("hurst")) cfg.terrain.hurst = get_num(t["hurst"], origin, "terrain.hurst");
    if (t.contains("amplitude_m"))
      cfg.terrain.amplitude = get_num(t["amplitude_m"], origin, "terrain.amplitude_m");
    if (t.contains("seed")) cfg.terrain.seed = get_u64(t["seed"], origin, "terrain.seed");
    if (t.contains("rocks")) {
      const auto& r = t["rocks"];
      reject_unknown_keys(r, origin, "terrain.rocks.",
                          {"count", "height_min_m", "height_max_m", "radius_min_m",
                           "radius_max_m"});
      RockSpec rs;
      if (r.contains("count")) rs.count = get_int(r["count"], origin, "terrain.rocks.count");
      if (r.contains("height_min_m"))
        rs.height_min = get_num(r["height_min_m"], origin, "terrain.rocks.height_min_m");
      if (r.contains("height_max_m"))
        rs.height_max = get_num(r["height_max_m"], origin, "terrain.rocks.height_max_m");
      if (r.contains("radius_min_m"))
        rs.radius_min = get_num(r["radius_min_m"], origin, "terrain.rocks.radius_min_m");
      if (r.contains("radius_max_m"))
        rs.radius_max = get_num(r["radius_max_m"], origin, "terrain.rocks.radius_max_m");
      cfg.terrain.rocks = rs;
    }
  }
  if (j.contains("lidar")) {
    const auto& l = j["lidar"];
    reject_unknown_keys(l, origin, "lidar.",
                        {"gsd_m", "noise_3sigma_m", "hole_fraction"});
    if (l.contains("gsd_m")) {
      cfg.gsd_list.clear();
      if (l["gsd_m"].is_array())
        for (const auto& g : l["gsd_m"])
          cfg.gsd_list.push_back(get_num(g, origin, "lidar.gsd_m[]"));
      else
        cfg.gsd_list.push_back(get_num(l["gsd_m"], origin, "lidar.gsd_m"));
    }
    if (l.contains("noise_3sigma_m"))
      cfg.noise_3sigma = get_num(l["noise_3sigma_m"], origin, "lidar.noise_3sigma_m");
    if (l.contains("hole_fraction"))
      cfg.hole_fraction = get_num(l["hole_fraction"], origin, "lidar.hole_fraction");
  }
  if (j.contains("fit")) {
    const auto& f = j["fit"];
    reject_unknown_keys(f, origin, "fit.",
                        {"fix_sigma", "u_min", "u_max", "ell_min", "ell_max",
                         "sigma_min", "sigma_max"});
    if (f.contains("fix_sigma"))
      cfg.fix_sigma = get_bool(f["fix_sigma"], origin, "fit.fix_sigma");
    auto bound = [&](const char* key) -> std::optional<double> {
      if (!f.contains(key)) return std::nullopt;
      return get_num(f[key], origin, std::string("fit.") + key);
    };
    cfg.fit_bounds.u_min = bound("u_min");
    cfg.fit_bounds.u_max = bound("u_max");
    cfg.fit_bounds.ell_min = bound("ell_min");
    cfg.fit_bounds.ell_max = bound("ell_max");
    cfg.fit_bounds.sigma_min = bound("sigma_min");
    cfg.fit_bounds.sigma_max = bound("sigma_max");
  }
  if (j.contains("geometry")) {
    const auto& g = j["geometry"];
    reject_unknown_keys(g, origin, "geometry.",
                        {"n_pads", "pad_radius_m", "footprint_radius_m",
                         "n_orientations", "footprint_step_m"});
    if (g.contains("n_pads")) cfg.geometry.n_pads = get_int(g["n_pads"], origin, "geometry.n_pads");
    if (g.contains("pad_radius_m"))
      cfg.geometry.pad_radius = get_num(g["pad_radius_m"], origin, "geometry.pad_radius_m");
    if (g.contains("footprint_radius_m"))
      cfg.geometry.footprint_radius =
          get_num(g["footprint_radius_m"], origin, "geometry.footprint_radius_m");
    else if (g.contains("pad_radius_m"))
      cfg.geometry.footprint_radius = cfg.geometry.pad_radius;
    if (g.contains("n_orientations"))
      cfg.geometry.n_orientations = get_int(g["n_orientations"], origin, "geometry.n_orientations");
    if (g.contains("footprint_step_m"))
      cfg.geometry.footprint_step =
          get_num(g["footprint_step_m"], origin, "geometry.footprint_step_m");
    else
      cfg.geometry.footprint_step = 0.0;  // resolved to the DEM resolution
  } else {
    cfg.geometry.footprint_step = 0.0;
  }
  if (j.contains("thresholds")) {
    const auto& t = j["thresholds"];
    reject_unknown_keys(t, origin, "thresholds.",
                        {"slope_max_deg", "roughness_max_m"});
    if (t.contains("slope_max_deg"))
      cfg.thresholds.slope_max =
          get_num(t["slope_max_deg"], origin, "thresholds.slope_max_deg") * kPi / 180.0;
    if (t.contains("roughness_max_m"))
      cfg.thresholds.roughness_max =
          get_num(t["roughness_max_m"], origin, "thresholds.roughness_max_m");
  }
  if (j.contains("factors")) {
    // Accepted for compatibility with the detect command's config surface;
    // the experiment harness optimizes the factors itself.
    reject_unknown_keys(j["factors"], origin, "factors.", {"k1", "k2"});
  }
  if (j.contains("detect")) {
    const auto& d = j["detect"];
    reject_unknown_keys(d, origin, "detect.",
                        {"denom_mode", "conservative_fourth_pad"});
    if (d.contains("denom_mode"))
      cfg.denom_mode =
          denom_mode_from_string(get_str(d["denom_mode"], origin, "detect.denom_mode"));
    if (d.contains("conservative_fourth_pad"))
      cfg.conservative_fourth_pad =
          get_bool(d["conservative_fourth_pad"], origin, "detect.conservative_fourth_pad");
  }
  if (j.contains("mc")) {
    const auto& m = j["mc"];
    reject_unknown_keys(m, origin, "mc.", {"n_samples", "seed"});
    if (m.contains("n_samples"))
      cfg.mc_samples = get_int(m["n_samples"], origin, "mc.n_samples");
    if (m.contains("seed")) cfg.mc_seed = get_u64(m["seed"], origin, "mc.seed");
  }
  if (j.contains("k_grid")) {
    const auto& k = j["k_grid"];
    reject_unknown_keys(k, origin, "k_grid.",
                        {"k1_min", "k1_max", "k1_step", "k2_min", "k2_max",
                         "k2_fine_min", "k2_fine_max", "k2_fine_step",
                         "k2_coarse_step"});
    if (k.contains("k1_min")) cfg.k_grid.k1_min = get_num(k["k1_min"], origin, "k_grid.k1_min");
    if (k.contains("k1_max")) cfg.k_grid.k1_max = get_num(k["k1_max"], origin, "k_grid.k1_max");
    if (k.contains("k1_step")) cfg.k_grid.k1_step = get_num(k["k1_step"], origin, "k_grid.k1_step");
    if (k.contains("k2_min")) cfg.k_grid.k2_min = get_num(k["k2_min"], origin, "k_grid.k2_min");
    if (k.contains("k2_max")) cfg.k_grid.k2_max = get_num(k["k2_max"], origin, "k_grid.k2_max");
    if (k.contains("k2_fine_min"))
      cfg.k_grid.k2_fine_min = get_num(k["k2_fine_min"], origin, "k_grid.k2_fine_min");
    if (k.contains("k2_fine_max"))
      cfg.k_grid.k2_fine_max = get_num(k["k2_fine_max"], origin, "k_grid.k2_fine_max");
    if (k.contains("k2_fine_step"))
      cfg.k_grid.k2_fine_step = get_num(k["k2_fine_step"], origin, "k_grid.k2_fine_step");
    if (k.contains("k2_coarse_step"))
      cfg.k_grid.k2_coarse_step = get_num(k["k2_coarse_step"], origin, "k_grid.k2_coarse_step");
  }
  if (j.contains("seeds")) {
    if (!j["seeds"].is_array())
      throw format_error(origin + ": key 'seeds' must be an array");
    cfg.seeds.clear();
    for (const auto& s : j["seeds"])
      cfg.seeds.push_back(get_u64(s, origin, "seeds[]"));
  }
  if (j.contains("binarize_at"))
    cfg.binarize_at = get_num(j["binarize_at"], origin, "binarize_at");
  if (j.contains("output_dir"))
    cfg.output_dir = get_str(j["output_dir"], origin, "output_dir");
  if (j.contains("threads"))
    cfg.n_threads = get_int(j["threads"], origin, "threads");
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  return parse_experiment_config(read_file_maybe_gz(path), path);
}

namespace {

struct ClassMeans {
  double safe_mean = 0.0;
  double unsafe_mean = 0.0;
};

ClassMeans means_by_truth(const std::vector<double>& channel,
                          const std::vector<std::uint8_t>& map_valid,
                          const SafetyTruth& truth) {
  double sum_safe = 0.0, sum_unsafe = 0.0;
  long n_safe = 0, n_unsafe = 0;
  for (std::size_t i = 0; i < channel.size(); ++i) {
    if (!map_valid[i] || !truth.valid[i]) continue;
    if (truth.is_safe[i]) {
      sum_safe += channel[i];
      ++n_safe;
    } else {
      sum_unsafe += channel[i];
      ++n_unsafe;
    }
  }
  ClassMeans m;
  m.safe_mean = n_safe > 0 ? sum_safe / n_safe : 0.0;
  m.unsafe_mean = n_unsafe > 0 ? sum_unsafe / n_unsafe : 0.0;
  return m;
}

json case_to_json(const CaseRecord& rec, const json& artifacts) {
  json c;
  c["gsd_m"] = rec.gsd;
  c["seed"] = rec.seed;
  c["ok"] = rec.ok;
  if (!rec.ok) {
    c["error"] = rec.error;
    return c;
  }
  c["fitted"] = {{"u", rec.fitted.u}, {"ell", rec.fitted.ell}, {"sigma", rec.fitted.sigma}};
  c["achieved_lml"] = rec.achieved_lml;
  c["k1"] = rec.k1_opt;
  c["k2"] = rec.k2_opt;
  c["slope_rmse"] = rec.slope_rmse;
  c["roughness_rmse"] = rec.roughness_rmse;
  c["mean_p_slope_truth_safe"] = rec.mean_p_slope_safe;
  c["mean_p_slope_truth_unsafe"] = rec.mean_p_slope_unsafe;
  c["mean_p_roughness_truth_safe"] = rec.mean_p_rough_safe;
  c["mean_p_roughness_truth_unsafe"] = rec.mean_p_rough_unsafe;
  c["baseline_missed_hazard_rate"] = rec.baseline_missed_hazard;
  c["shd_missed_hazard_rate"] = rec.shd_missed_hazard;
  c["mc_missed_hazard_rate"] = rec.mc_missed_hazard;
  c["hazards"] = rec.hazards;
  c["valid_pixels"] = rec.valid_pixels;
  c["artifacts"] = artifacts;
  return c;
}

}  // namespace

EvalReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.output_dir.empty())
    throw parameter_error("run_experiment: output_dir must be set");

  namespace fs = std::filesystem;
  const fs::path root(cfg.output_dir);
  fs::create_directories(root / "terrain");
  fs::create_directories(root / "pcd");
  fs::create_directories(root / "models");
  fs::create_directories(root / "maps");

  DemGrid dem;
  if (!cfg.terrain.file.empty()) {
    dem = load_dem(cfg.terrain.file);
  } else {
    dem = generate_fractal_terrain(cfg.terrain.seed, cfg.terrain.rows,
                                   cfg.terrain.cols, cfg.terrain.resolution,
                                   cfg.terrain.hurst, cfg.terrain.amplitude,
                                   cfg.terrain.rocks);
  }
  save_dem(dem, (root / "terrain" / "terrain.grid").string());

  LanderGeometry geom = cfg.geometry;
  if (geom.footprint_step <= 0.0) geom.footprint_step = dem.grid.resolution;
  geom.validate();
  for (const double g : cfg.gsd_list)
    if (g < dem.grid.resolution - 1e-12)
      throw parameter_error("gsd " + fmt_num(g) +
                            " is finer than the terrain resolution " +
                            fmt_num(dem.grid.resolution));

  SafetyTruth truth = deterministic_eval(dem, geom, cfg.thresholds, cfg.n_threads);
  quantize_truth(truth);
  save_safety_truth((root / "maps" / "truth").string(), truth);

  const double sigma = cfg.noise_3sigma / 3.0;
  EvalReport report;
  json jcases = json::array();

  for (std::size_t gi = 0; gi < cfg.gsd_list.size(); ++gi) {
    for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
      const double gsd = cfg.gsd_list[gi];
      const std::uint64_t seed = cfg.seeds[si];
      CaseRecord rec;
      rec.gsd = gsd;
      rec.seed = seed;
      const std::string tag = "gsd" + fmt_num(gsd) + "_seed" + std::to_string(seed);
      json artifacts;
      try {
        const PointCloud pcd = simulate_lidar(dem, gsd, sigma, seed, cfg.hole_fraction);
        const std::string pcd_rel = "pcd/pcd_" + tag + ".csv";
        save_pcd(pcd, (root / pcd_rel).string());
        artifacts["pcd"] = pcd_rel;

        const FitBounds bounds = cfg.fit_bounds.apply(default_fit_bounds(pcd));
        const KernelParams init = default_fit_init(pcd, bounds);
        const FitResult fit = fit_hyperparameters(pcd, init, bounds, cfg.fix_sigma);
        rec.fitted = fit.params;
        rec.achieved_lml = fit.achieved_lml;

        const GrfModel model(pcd, fit.params);
        ModelRecord mrec;
        mrec.params = fit.params;
        mrec.prior_mean = model.prior_mean();
        mrec.n = model.n();
        mrec.achieved_lml = fit.achieved_lml;
        mrec.pcd_path = "../" + pcd_rel;
        const std::string model_rel = "models/model_" + tag + ".json";
        save_model_record((root / model_rel).string(), mrec);
        artifacts["model"] = model_rel;

        SafetyMapMeta meta;
        meta.thresholds = cfg.thresholds;
        meta.geometry = geom;
        meta.denom_mode = to_string(cfg.denom_mode);

        SafetyMap baseline =
            baseline_map(pcd, geom, cfg.thresholds, dem.grid, cfg.n_threads);
        quantize_map(baseline);
        meta.mode = "baseline";
        meta.model_ref = "";
        save_safety_map((root / "maps" / ("baseline_" + tag)).string(), baseline, meta);
        artifacts["baseline"] = "maps/baseline_" + tag;

        const std::uint64_t mc_seed =
            derive_seed(derive_seed(cfg.mc_seed, static_cast<std::uint64_t>(gi)),
                        static_cast<std::uint64_t>(si));
        SafetyMap mc = mc_safety_map(model, geom, cfg.thresholds, cfg.mc_samples,
                                     mc_seed, dem.grid, cfg.n_threads);
        quantize_map(mc);
        meta.mode = "mc";
        meta.model_ref = model_rel;
        save_safety_map((root / "maps" / ("mc_" + tag)).string(), mc, meta);
        artifacts["mc"] = "maps/mc_" + tag;

        ShdOptions opts;
        opts.denom_mode = cfg.denom_mode;
        opts.conservative_fourth_pad = cfg.conservative_fourth_pad;
        opts.n_threads = cfg.n_threads;
        SafetyMap raw =
            shd_map(model, geom, cfg.thresholds, {1.0, 1.0}, dem.grid, opts);
        quantize_map(raw);
        meta.mode = "shd";
        save_safety_map((root / "maps" / ("shd_raw_" + tag)).string(), raw, meta);
        artifacts["shd_raw"] = "maps/shd_raw_" + tag;

        const KOptResult kopt = optimize_raising_factors(raw, mc, cfg.k_grid);
        rec.k1_opt = kopt.k1;
        rec.k2_opt = kopt.k2;
        rec.slope_rmse = kopt.slope_rmse;
        rec.roughness_rmse = kopt.roughness_rmse;

        SafetyMap shd = apply_raising_factors(raw, {kopt.k1, kopt.k2});
        quantize_map(shd);
        meta.factors = {kopt.k1, kopt.k2};
        save_safety_map((root / "maps" / ("shd_" + tag)).string(), shd, meta);
        artifacts["shd"] = "maps/shd_" + tag;

        rec.baseline_missed_hazard =
            detection_metrics(baseline, truth, cfg.binarize_at).missed_hazard_rate;
        const DetectionMetrics dm = detection_metrics(shd, truth, cfg.binarize_at);
        rec.shd_missed_hazard = dm.missed_hazard_rate;
        rec.mc_missed_hazard =
            detection_metrics(mc, truth, cfg.binarize_at).missed_hazard_rate;
        rec.hazards = dm.hazards;
        rec.valid_pixels = dm.valid_pixels;

        const ClassMeans ms = means_by_truth(shd.p_slope, shd.valid, truth);
        const ClassMeans mr = means_by_truth(shd.p_roughness, shd.valid, truth);
        rec.mean_p_slope_safe = ms.safe_mean;
        rec.mean_p_slope_unsafe = ms.unsafe_mean;
        rec.mean_p_rough_safe = mr.safe_mean;
        rec.mean_p_rough_unsafe = mr.unsafe_mean;
        rec.ok = true;
      } catch (const std::exception& e) {
        rec.ok = false;
        rec.error = e.what();
      }
      report.cases.push_back(rec);
      jcases.push_back(case_to_json(rec, artifacts));
    }
  }

  json jr;
  jr["format"] = "grfhd-eval-report";
  jr["version"] = 1;
  jr["terrain"] = {{"rows", dem.grid.rows},
                   {"cols", dem.grid.cols},
                   {"resolution_m", dem.grid.resolution},
                   {"file", "terrain/terrain.grid"}};
  jr["config"] = {{"noise_3sigma_m", cfg.noise_3sigma},
                  {"mc_samples", cfg.mc_samples},
                  {"binarize_at", cfg.binarize_at},
                  {"denom_mode", to_string(cfg.denom_mode)},
                  {"slope_max_rad", cfg.thresholds.slope_max},
                  {"roughness_max_m", cfg.thresholds.roughness_max},
                  {"n_orientations", geom.n_orientations},
                  {"footprint_step_m", geom.footprint_step}};
  jr["truth"] = "maps/truth";
  jr["cases"] = jcases;
  write_file_maybe_gz((root / "report.json").string(), jr.dump(2) + "\n");
  return report;
}

}  // namespace grfhd
