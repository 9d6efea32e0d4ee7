#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "grfhd/errors.hpp"
#include "grfhd/eval.hpp"
#include "grfhd/grf.hpp"
#include "grfhd/grid_io.hpp"
#include "grfhd/lander.hpp"
#include "grfhd/render.hpp"
#include "grfhd/safety.hpp"
#include "grfhd/terrain.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr double kPi = 3.14159265358979323846264338327950288;

struct ConfigDoc {
  grfhd::ExperimentConfig cfg;
  json raw;
  bool loaded = false;
};

ConfigDoc load_config(const std::string& path) {
  ConfigDoc d;
  if (path.empty()) return d;
  const std::string text = grfhd::read_file_maybe_gz(path);
  d.cfg = grfhd::parse_experiment_config(text, path);
  d.raw = json::parse(text);
  d.loaded = true;
  return d;
}

bool raw_has(const ConfigDoc& c, std::initializer_list<const char*> path) {
  if (!c.loaded) return false;
  const json* j = &c.raw;
  for (const char* key : path) {
    if (!j->is_object() || !j->contains(key)) return false;
    j = &(*j)[key];
  }
  return true;
}

template <class T>
std::string show(const T& v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

void log_param(const std::string& key, const std::string& value, const char* src) {
  std::cerr << "[config] " << key << " = " << value << " (" << src << ")\n";
}

// Flag > config file > built-in default, with the winner logged to stderr.
template <class T>
T resolve(const CLI::Option* opt, const T& flag_val, bool cfg_has, const T& cfg_val,
          const T& def_val, const std::string& key) {
  if (opt != nullptr && opt->count() > 0) {
    log_param(key, show(flag_val), "flag");
    return flag_val;
  }
  if (cfg_has) {
    log_param(key, show(cfg_val), "file");
    return cfg_val;
  }
  log_param(key, show(def_val), "default");
  return def_val;
}

int resolve_threads(const CLI::Option* opt, int flag_val, const ConfigDoc& cfg) {
  if (opt != nullptr && opt->count() > 0) {
    log_param("threads", show(flag_val), "flag");
    return flag_val;
  }
  if (const char* env = std::getenv("GRFHD_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 0)
      throw grfhd::parameter_error(
          "GRFHD_THREADS must be a non-negative integer, got '" + std::string(env) + "'");
    log_param("threads", env, "env");
    return static_cast<int>(v);
  }
  if (raw_has(cfg, {"threads"})) {
    log_param("threads", show(cfg.cfg.n_threads), "file");
    return cfg.cfg.n_threads;
  }
  log_param("threads", "0", "default");
  return 0;
}

std::string resolve_relative(const std::string& path, const std::string& anchor_file) {
  const fs::path p(path);
  if (p.is_absolute()) return path;
  return (fs::path(anchor_file).parent_path() / p).string();
}

// Per-command option bundles. Each field mirrors one config key.

struct GeometryFlags {
  int n_pads = 3;
  double pad_radius = 5.0, footprint_radius = 5.0, footprint_step = 0.0;
  int n_orientations = 24;
  CLI::Option *o_pads = nullptr, *o_prad = nullptr, *o_frad = nullptr,
              *o_step = nullptr, *o_orient = nullptr;

  void add(CLI::App* cmd) {
    o_pads = cmd->add_option("--n-pads", n_pads, "Number of landing pads (3 or 4)");
    o_prad = cmd->add_option("--pad-radius", pad_radius, "Pad circle radius [m]");
    o_frad = cmd->add_option("--footprint-radius", footprint_radius,
                             "Roughness footprint radius [m]");
    o_orient = cmd->add_option("--n-orientations", n_orientations,
                               "Yaw orientations per target");
    o_step = cmd->add_option("--footprint-step", footprint_step,
                             "Footprint lattice pitch [m] (0 = map resolution)");
  }

  grfhd::LanderGeometry build(const ConfigDoc& cfg) const {
    grfhd::LanderGeometry g = cfg.loaded ? cfg.cfg.geometry : grfhd::LanderGeometry{};
    if (!cfg.loaded) g.footprint_step = 0.0;
    g.n_pads = resolve(o_pads, n_pads, raw_has(cfg, {"geometry", "n_pads"}),
                       g.n_pads, g.n_pads, "geometry.n_pads");
    g.pad_radius = resolve(o_prad, pad_radius, raw_has(cfg, {"geometry", "pad_radius_m"}),
                           g.pad_radius, g.pad_radius, "geometry.pad_radius_m");
    g.footprint_radius =
        resolve(o_frad, footprint_radius, raw_has(cfg, {"geometry", "footprint_radius_m"}),
                g.footprint_radius, g.footprint_radius, "geometry.footprint_radius_m");
    g.n_orientations =
        resolve(o_orient, n_orientations, raw_has(cfg, {"geometry", "n_orientations"}),
                g.n_orientations, g.n_orientations, "geometry.n_orientations");
    g.footprint_step =
        resolve(o_step, footprint_step, raw_has(cfg, {"geometry", "footprint_step_m"}),
                g.footprint_step, g.footprint_step, "geometry.footprint_step_m");
    return g;
  }
};

struct ThresholdFlags {
  double slope_max_deg = 10.0, roughness_max = 0.3;
  CLI::Option *o_slope = nullptr, *o_rough = nullptr;

  void add(CLI::App* cmd) {
    o_slope = cmd->add_option("--slope-max-deg", slope_max_deg,
                              "Slope safety threshold [deg]");
    o_rough = cmd->add_option("--roughness-max", roughness_max,
                              "Roughness safety threshold [m]");
  }

  grfhd::SafetyThresholds build(const ConfigDoc& cfg) const {
    grfhd::SafetyThresholds t = cfg.loaded ? cfg.cfg.thresholds : grfhd::SafetyThresholds{};
    const double dflt_deg = t.slope_max * 180.0 / kPi;
    const double deg =
        resolve(o_slope, slope_max_deg, raw_has(cfg, {"thresholds", "slope_max_deg"}),
                dflt_deg, dflt_deg, "thresholds.slope_max_deg");
    t.slope_max = deg * kPi / 180.0;
    t.roughness_max =
        resolve(o_rough, roughness_max, raw_has(cfg, {"thresholds", "roughness_max_m"}),
                t.roughness_max, t.roughness_max, "thresholds.roughness_max_m");
    return t;
  }
};

struct KGridFlags {
  grfhd::KGrid v;
  CLI::Option *o1min = nullptr, *o1max = nullptr, *o1step = nullptr, *o2min = nullptr,
              *o2max = nullptr, *ofmin = nullptr, *ofmax = nullptr, *ofstep = nullptr,
              *ocstep = nullptr;

  void add(CLI::App* cmd) {
    o1min = cmd->add_option("--k1-min", v.k1_min, "k1 grid minimum");
    o1max = cmd->add_option("--k1-max", v.k1_max, "k1 grid maximum");
    o1step = cmd->add_option("--k1-step", v.k1_step, "k1 grid step");
    o2min = cmd->add_option("--k2-min", v.k2_min, "k2 grid minimum");
    o2max = cmd->add_option("--k2-max", v.k2_max, "k2 grid maximum");
    ofmin = cmd->add_option("--k2-fine-min", v.k2_fine_min, "k2 fine band start");
    ofmax = cmd->add_option("--k2-fine-max", v.k2_fine_max, "k2 fine band end");
    ofstep = cmd->add_option("--k2-fine-step", v.k2_fine_step, "k2 step inside the fine band");
    ocstep = cmd->add_option("--k2-coarse-step", v.k2_coarse_step,
                             "k2 step outside the fine band");
  }

  grfhd::KGrid build(const ConfigDoc& cfg) const {
    grfhd::KGrid g = cfg.loaded ? cfg.cfg.k_grid : grfhd::KGrid{};
    auto pick = [&](const CLI::Option* o, double flag_val, const char* key,
                    double cfg_val) {
      return resolve(o, flag_val, raw_has(cfg, {"k_grid", key}), cfg_val, cfg_val,
                     std::string("k_grid.") + key);
    };
    g.k1_min = pick(o1min, v.k1_min, "k1_min", g.k1_min);
    g.k1_max = pick(o1max, v.k1_max, "k1_max", g.k1_max);
    g.k1_step = pick(o1step, v.k1_step, "k1_step", g.k1_step);
    g.k2_min = pick(o2min, v.k2_min, "k2_min", g.k2_min);
    g.k2_max = pick(o2max, v.k2_max, "k2_max", g.k2_max);
    g.k2_fine_min = pick(ofmin, v.k2_fine_min, "k2_fine_min", g.k2_fine_min);
    g.k2_fine_max = pick(ofmax, v.k2_fine_max, "k2_fine_max", g.k2_fine_max);
    g.k2_fine_step = pick(ofstep, v.k2_fine_step, "k2_fine_step", g.k2_fine_step);
    g.k2_coarse_step = pick(ocstep, v.k2_coarse_step, "k2_coarse_step", g.k2_coarse_step);
    return g;
  }
};

struct StatusLine {
  std::string command;
  std::vector<std::string> outputs;
  json extra = json::object();
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probabilistic landing-hazard mapping from sparse elevation measurements"};
  app.require_subcommand(1);

  StatusLine status;

  // gen-terrain
  auto* gen = app.add_subcommand("gen-terrain", "Generate a fractal terrain grid");
  std::string gen_config, gen_out;
  int gen_rows = 32, gen_cols = 32;
  double gen_res = 1.0, gen_hurst = 0.8, gen_amp = 0.35;
  std::uint64_t gen_seed = 1;
  int gen_rocks = 0;
  double gen_rock_hmin = 0.2, gen_rock_hmax = 0.5, gen_rock_rmin = 0.5, gen_rock_rmax = 2.0;
  gen->add_option("--config", gen_config, "JSON config file");
  gen->add_option("--out", gen_out, "Output grid file")->required();
  auto* g_rows = gen->add_option("--rows", gen_rows, "Grid rows");
  auto* g_cols = gen->add_option("--cols", gen_cols, "Grid columns");
  auto* g_res = gen->add_option("--resolution", gen_res, "Grid pitch [m]");
  auto* g_hurst = gen->add_option("--hurst", gen_hurst, "Hurst exponent (0,1]");
  auto* g_amp = gen->add_option("--amplitude", gen_amp, "Surface RMS amplitude [m]");
  auto* g_seed = gen->add_option("--seed", gen_seed, "Generator seed");
  auto* g_rocks = gen->add_option("--rocks", gen_rocks, "Rock count (0 = none)");
  auto* g_rhmin = gen->add_option("--rock-height-min", gen_rock_hmin, "Rock height minimum [m]");
  auto* g_rhmax = gen->add_option("--rock-height-max", gen_rock_hmax, "Rock height maximum [m]");
  auto* g_rrmin = gen->add_option("--rock-radius-min", gen_rock_rmin, "Rock radius minimum [m]");
  auto* g_rrmax = gen->add_option("--rock-radius-max", gen_rock_rmax, "Rock radius maximum [m]");
  gen->callback([&] {
    const ConfigDoc cfg = load_config(gen_config);
    const grfhd::TerrainSpec& t = cfg.cfg.terrain;
    const int rows = resolve(g_rows, gen_rows, raw_has(cfg, {"terrain", "rows"}), t.rows, 32, "terrain.rows");
    const int cols = resolve(g_cols, gen_cols, raw_has(cfg, {"terrain", "cols"}), t.cols, 32, "terrain.cols");
    const double res = resolve(g_res, gen_res, raw_has(cfg, {"terrain", "resolution_m"}),
                               t.resolution, 1.0, "terrain.resolution_m");
    const double hurst = resolve(g_hurst, gen_hurst, raw_has(cfg, {"terrain", "hurst"}),
                                 t.hurst, 0.8, "terrain.hurst");
    const double amp = resolve(g_amp, gen_amp, raw_has(cfg, {"terrain", "amplitude_m"}),
                               t.amplitude, 0.35, "terrain.amplitude_m");
    const std::uint64_t seed = resolve(g_seed, gen_seed, raw_has(cfg, {"terrain", "seed"}),
                                       t.seed, std::uint64_t{1}, "terrain.seed");
    std::optional<grfhd::RockSpec> rocks = t.rocks;
    const bool rock_flags = g_rocks->count() || g_rhmin->count() || g_rhmax->count() ||
                            g_rrmin->count() || g_rrmax->count();
    if (rock_flags) {
      grfhd::RockSpec r = rocks.value_or(grfhd::RockSpec{});
      if (g_rocks->count()) r.count = gen_rocks;
      r.height_min = g_rhmin->count() ? gen_rock_hmin : (rocks ? r.height_min : gen_rock_hmin);
      r.height_max = g_rhmax->count() ? gen_rock_hmax : (rocks ? r.height_max : gen_rock_hmax);
      r.radius_min = g_rrmin->count() ? gen_rock_rmin : (rocks ? r.radius_min : gen_rock_rmin);
      r.radius_max = g_rrmax->count() ? gen_rock_rmax : (rocks ? r.radius_max : gen_rock_rmax);
      rocks = r;
    }
    if (rocks && rocks->count == 0) rocks.reset();
    const grfhd::DemGrid dem =
        grfhd::generate_fractal_terrain(seed, rows, cols, res, hurst, amp, rocks);
    grfhd::save_dem(dem, gen_out);
    status.command = "gen-terrain";
    status.outputs = {gen_out};
    status.extra["rows"] = rows;
    status.extra["cols"] = cols;
  });

  // sim-lidar
  auto* sim = app.add_subcommand("sim-lidar", "Sample noisy lattice measurements from a grid");
  std::string sim_config, sim_dem, sim_out;
  std::vector<double> sim_gsd;
  double sim_noise3 = 0.05, sim_holes = 0.0;
  std::uint64_t sim_seed = 101;
  sim->add_option("--config", sim_config, "JSON config file");
  sim->add_option("--dem", sim_dem, "Source terrain grid")->required();
  sim->add_option("--out", sim_out, "Output pcd path (directory when several GSDs)")->required();
  auto* s_gsd = sim->add_option("--gsd", sim_gsd, "Ground sample distance [m] (repeatable)");
  auto* s_noise = sim->add_option("--noise-3sigma", sim_noise3, "Measurement noise 3-sigma [m]");
  auto* s_holes = sim->add_option("--hole-fraction", sim_holes, "Fraction of dropped points");
  auto* s_seed = sim->add_option("--seed", sim_seed, "Noise seed");
  sim->callback([&] {
    const ConfigDoc cfg = load_config(sim_config);
    std::vector<double> gsds;
    if (s_gsd->count() > 0) {
      gsds = sim_gsd;
      log_param("lidar.gsd_m", show(gsds.size()) + " value(s)", "flag");
    } else if (raw_has(cfg, {"lidar", "gsd_m"})) {
      gsds = cfg.cfg.gsd_list;
      log_param("lidar.gsd_m", show(gsds.size()) + " value(s)", "file");
    } else {
      throw grfhd::parameter_error("sim-lidar needs --gsd or a config with lidar.gsd_m");
    }
    const double noise3 = resolve(s_noise, sim_noise3, raw_has(cfg, {"lidar", "noise_3sigma_m"}),
                                  cfg.cfg.noise_3sigma, 0.05, "lidar.noise_3sigma_m");
    const double holes = resolve(s_holes, sim_holes, raw_has(cfg, {"lidar", "hole_fraction"}),
                                 cfg.cfg.hole_fraction, 0.0, "lidar.hole_fraction");
    const std::uint64_t dflt_seed =
        cfg.loaded && !cfg.cfg.seeds.empty() ? cfg.cfg.seeds.front() : std::uint64_t{101};
    const std::uint64_t seed = resolve(s_seed, sim_seed, raw_has(cfg, {"seeds"}), dflt_seed,
                                       std::uint64_t{101}, "seed");
    const grfhd::DemGrid dem = grfhd::load_dem(sim_dem);
    status.command = "sim-lidar";
    for (const double gsd : gsds) {
      const grfhd::PointCloud pcd =
          grfhd::simulate_lidar(dem, gsd, noise3 / 3.0, seed, holes);
      std::string out = sim_out;
      if (gsds.size() > 1) {
        fs::create_directories(sim_out);
        std::ostringstream name;
        name << "pcd_gsd" << gsd << "_seed" << seed << ".csv";
        out = (fs::path(sim_out) / name.str()).string();
      }
      grfhd::save_pcd(pcd, out);
      status.outputs.push_back(out);
    }
  });

  // fit
  auto* fit = app.add_subcommand("fit", "Fit kernel hyperparameters to a point cloud");
  std::string fit_config, fit_pcd, fit_out;
  bool fit_free_sigma = false;
  double fit_init_u = 0.0, fit_init_ell = 0.0, fit_init_sigma = 0.0;
  grfhd::FitBounds fit_bounds;
  fit->add_option("--config", fit_config, "JSON config file");
  fit->add_option("--pcd", fit_pcd, "Input point cloud")->required();
  fit->add_option("--out", fit_out, "Output model record (JSON)")->required();
  auto* f_free = fit->add_flag("--free-sigma", fit_free_sigma,
                               "Optimize sigma instead of fixing it to the recorded noise");
  auto* f_iu = fit->add_option("--init-u", fit_init_u, "Starting kernel variance");
  auto* f_il = fit->add_option("--init-ell", fit_init_ell, "Starting length scale [m]");
  auto* f_is = fit->add_option("--init-sigma", fit_init_sigma, "Starting noise sigma [m]");
  auto* f_umin = fit->add_option("--u-min", fit_bounds.u_min, "Lower bound on u");
  auto* f_umax = fit->add_option("--u-max", fit_bounds.u_max, "Upper bound on u");
  auto* f_lmin = fit->add_option("--ell-min", fit_bounds.ell_min, "Lower bound on ell");
  auto* f_lmax = fit->add_option("--ell-max", fit_bounds.ell_max, "Upper bound on ell");
  auto* f_smin = fit->add_option("--sigma-min", fit_bounds.sigma_min, "Lower bound on sigma");
  auto* f_smax = fit->add_option("--sigma-max", fit_bounds.sigma_max, "Upper bound on sigma");
  fit->callback([&] {
    const ConfigDoc cfg = load_config(fit_config);
    const grfhd::PointCloud pcd = grfhd::load_pcd(fit_pcd);
    grfhd::FitBounds bounds = cfg.cfg.fit_bounds.apply(grfhd::default_fit_bounds(pcd));
    if (f_umin->count()) bounds.u_min = fit_bounds.u_min;
    if (f_umax->count()) bounds.u_max = fit_bounds.u_max;
    if (f_lmin->count()) bounds.ell_min = fit_bounds.ell_min;
    if (f_lmax->count()) bounds.ell_max = fit_bounds.ell_max;
    if (f_smin->count()) bounds.sigma_min = fit_bounds.sigma_min;
    if (f_smax->count()) bounds.sigma_max = fit_bounds.sigma_max;
    grfhd::KernelParams init = grfhd::default_fit_init(pcd, bounds);
    if (f_iu->count()) init.u = fit_init_u;
    if (f_il->count()) init.ell = fit_init_ell;
    if (f_is->count()) init.sigma = fit_init_sigma;
    const bool fix_sigma =
        f_free->count() > 0 ? !fit_free_sigma
                            : resolve<bool>(nullptr, true, raw_has(cfg, {"fit", "fix_sigma"}),
                                            cfg.cfg.fix_sigma, true, "fit.fix_sigma");
    const grfhd::FitResult res = grfhd::fit_hyperparameters(pcd, init, bounds, fix_sigma);
    grfhd::ModelRecord rec;
    rec.params = res.params;
    {
      const grfhd::GrfModel model(pcd, res.params);
      rec.prior_mean = model.prior_mean();
      rec.n = model.n();
    }
    rec.achieved_lml = res.achieved_lml;
    rec.pcd_path = fit_pcd;
    grfhd::save_model_record(fit_out, rec);
    status.command = "fit";
    status.outputs = {fit_out};
    status.extra["u"] = res.params.u;
    status.extra["ell"] = res.params.ell;
    status.extra["sigma"] = res.params.sigma;
    status.extra["achieved_lml"] = res.achieved_lml;
    status.extra["evaluations"] = res.evaluations;
  });

  // detect
  auto* det = app.add_subcommand("detect", "Build a safety probability map");
  std::string det_config, det_mode, det_model, det_pcd, det_gridlike, det_out;
  std::string det_denom = "paper";
  int det_rows = 0, det_cols = 0, det_samples = 100, det_threads = 0;
  double det_res = 0.0, det_ox = 0.0, det_oy = 0.0, det_k1 = 1.0, det_k2 = 1.0;
  std::uint64_t det_seed = 99;
  bool det_conservative = false;
  GeometryFlags det_geom;
  ThresholdFlags det_thresh;
  det->add_option("--config", det_config, "JSON config file");
  det->add_option("--mode", det_mode, "shd, mc, or baseline")->required();
  det->add_option("--model", det_model, "Model record (shd/mc modes)");
  det->add_option("--pcd", det_pcd, "Point cloud (baseline mode, or override the model's)");
  det->add_option("--grid-like", det_gridlike, "Take the target grid from this grid file");
  auto* d_rows = det->add_option("--rows", det_rows, "Target grid rows");
  auto* d_cols = det->add_option("--cols", det_cols, "Target grid columns");
  auto* d_res = det->add_option("--resolution", det_res, "Target grid pitch [m]");
  auto* d_ox = det->add_option("--origin-x", det_ox, "Target grid origin x [m]");
  auto* d_oy = det->add_option("--origin-y", det_oy, "Target grid origin y [m]");
  det->add_option("--out", det_out, "Output map base path")->required();
  det_geom.add(det);
  det_thresh.add(det);
  auto* d_k1 = det->add_option("--k1", det_k1, "Slope raising factor (shd mode)");
  auto* d_k2 = det->add_option("--k2", det_k2, "Roughness raising-factor ratio (shd mode)");
  auto* d_denom = det->add_option("--denom-mode", det_denom,
                                  "Probability denominator: paper or standard");
  auto* d_cons = det->add_flag("--conservative-fourth-pad", det_conservative,
                               "Lower the checked pad by 3 posterior sigmas");
  auto* d_samp = det->add_option("--samples", det_samples, "Posterior samples (mc mode)");
  auto* d_seed = det->add_option("--seed", det_seed, "Sampling seed (mc mode)");
  auto* d_thr = det->add_option("--threads", det_threads, "Worker threads (0 = auto)");
  det->callback([&] {
    const ConfigDoc cfg = load_config(det_config);
    if (det_mode != "shd" && det_mode != "mc" && det_mode != "baseline")
      throw grfhd::parameter_error("detect mode must be shd, mc, or baseline, got '" +
                                   det_mode + "'");
    grfhd::GridSpec grid;
    bool have_grid = false;
    if (!det_gridlike.empty()) {
      grid = grfhd::load_dem(det_gridlike).grid;
      have_grid = true;
    }
    if (d_rows->count()) grid.rows = det_rows;
    if (d_cols->count()) grid.cols = det_cols;
    if (d_res->count()) grid.resolution = det_res;
    if (d_ox->count()) grid.origin_x = det_ox;
    if (d_oy->count()) grid.origin_y = det_oy;
    if (!have_grid && !(d_rows->count() && d_cols->count() && d_res->count()))
      throw grfhd::parameter_error(
          "detect needs --grid-like or explicit --rows/--cols/--resolution");
    grid.validate();

    grfhd::LanderGeometry geom = det_geom.build(cfg);
    if (geom.footprint_step <= 0.0) geom.footprint_step = grid.resolution;
    const grfhd::SafetyThresholds thresholds = det_thresh.build(cfg);
    const int threads = resolve_threads(d_thr, det_threads, cfg);

    grfhd::SafetyMapMeta meta;
    meta.mode = det_mode;
    meta.thresholds = thresholds;
    meta.geometry = geom;

    grfhd::SafetyMap map;
    if (det_mode == "baseline") {
      if (det_pcd.empty())
        throw grfhd::parameter_error("detect --mode baseline needs --pcd");
      const grfhd::PointCloud pcd = grfhd::load_pcd(det_pcd);
      map = grfhd::baseline_map(pcd, geom, thresholds, grid, threads);
    } else {
      if (det_model.empty())
        throw grfhd::parameter_error("detect --mode " + det_mode + " needs --model");
      const grfhd::ModelRecord rec = grfhd::load_model_record(det_model);
      const std::string pcd_path =
          det_pcd.empty() ? resolve_relative(rec.pcd_path, det_model) : det_pcd;
      const grfhd::PointCloud pcd = grfhd::load_pcd(pcd_path);
      const grfhd::GrfModel model(pcd, rec.params, rec.prior_mean);
      meta.model_ref = det_model;
      if (det_mode == "mc") {
        const int samples = resolve(d_samp, det_samples, raw_has(cfg, {"mc", "n_samples"}),
                                    cfg.cfg.mc_samples, 100, "mc.n_samples");
        const std::uint64_t seed = resolve(d_seed, det_seed, raw_has(cfg, {"mc", "seed"}),
                                           cfg.cfg.mc_seed, std::uint64_t{99}, "mc.seed");
        map = grfhd::mc_safety_map(model, geom, thresholds, samples, seed, grid, threads);
      } else {
        grfhd::ShdOptions opts;
        const std::string denom =
            resolve(d_denom, det_denom, raw_has(cfg, {"detect", "denom_mode"}),
                    std::string(to_string(cfg.cfg.denom_mode)), std::string("paper"),
                    "detect.denom_mode");
        opts.denom_mode = grfhd::denom_mode_from_string(denom);
        opts.conservative_fourth_pad =
            d_cons->count() > 0
                ? det_conservative
                : resolve<bool>(nullptr, false,
                                raw_has(cfg, {"detect", "conservative_fourth_pad"}),
                                cfg.cfg.conservative_fourth_pad, false,
                                "detect.conservative_fourth_pad");
        opts.n_threads = threads;
        grfhd::RaisingFactors factors;
        factors.k1 = resolve(d_k1, det_k1, raw_has(cfg, {"factors", "k1"}),
                             cfg.loaded && cfg.raw.contains("factors") &&
                                     cfg.raw["factors"].contains("k1")
                                 ? cfg.raw["factors"]["k1"].get<double>()
                                 : 1.0,
                             1.0, "factors.k1");
        factors.k2 = resolve(d_k2, det_k2, raw_has(cfg, {"factors", "k2"}),
                             cfg.loaded && cfg.raw.contains("factors") &&
                                     cfg.raw["factors"].contains("k2")
                                 ? cfg.raw["factors"]["k2"].get<double>()
                                 : 1.0,
                             1.0, "factors.k2");
        meta.factors = factors;
        meta.denom_mode = denom;
        map = grfhd::shd_map(model, geom, thresholds, factors, grid, opts);
      }
    }
    grfhd::save_safety_map(det_out, map, meta);
    status.command = "detect";
    status.outputs = {det_out + ".p_slope.grid", det_out + ".p_roughness.grid",
                      det_out + ".p_safe.grid", det_out + ".meta.json"};
    status.extra["mode"] = det_mode;
  });

  // eval
  auto* ev = app.add_subcommand("eval", "Run the full multi-GSD experiment");
  std::string ev_config, ev_out;
  std::vector<double> ev_gsd;
  std::vector<std::uint64_t> ev_seeds;
  int ev_mc_samples = 100, ev_threads = 0;
  std::uint64_t ev_mc_seed = 99;
  double ev_binarize = 0.5;
  ev->add_option("--config", ev_config, "JSON config file")->required();
  auto* e_out = ev->add_option("--out", ev_out, "Output directory (overrides output_dir)");
  auto* e_gsd = ev->add_option("--gsd", ev_gsd, "GSD values [m] (repeatable)");
  auto* e_seeds = ev->add_option("--seeds", ev_seeds, "Measurement seeds (repeatable)");
  auto* e_msam = ev->add_option("--mc-samples", ev_mc_samples, "Posterior samples per case");
  auto* e_mseed = ev->add_option("--mc-seed", ev_mc_seed, "Base sampling seed");
  auto* e_bin = ev->add_option("--binarize-at", ev_binarize, "Detection threshold on p_safe");
  auto* e_thr = ev->add_option("--threads", ev_threads, "Worker threads (0 = auto)");
  ev->callback([&] {
    ConfigDoc cfg = load_config(ev_config);
    grfhd::ExperimentConfig ec = cfg.cfg;
    if (e_out->count()) {
      ec.output_dir = ev_out;
      log_param("output_dir", ev_out, "flag");
    } else {
      log_param("output_dir", ec.output_dir, cfg.raw.contains("output_dir") ? "file" : "default");
    }
    if (e_gsd->count()) ec.gsd_list = ev_gsd;
    if (e_seeds->count()) ec.seeds = ev_seeds;
    ec.mc_samples = resolve(e_msam, ev_mc_samples, raw_has(cfg, {"mc", "n_samples"}),
                            ec.mc_samples, ec.mc_samples, "mc.n_samples");
    ec.mc_seed = resolve(e_mseed, ev_mc_seed, raw_has(cfg, {"mc", "seed"}), ec.mc_seed,
                         ec.mc_seed, "mc.seed");
    ec.binarize_at = resolve(e_bin, ev_binarize, raw_has(cfg, {"binarize_at"}),
                             ec.binarize_at, ec.binarize_at, "binarize_at");
    ec.n_threads = resolve_threads(e_thr, ev_threads, cfg);
    const grfhd::EvalReport report = grfhd::run_experiment(ec);
    status.command = "eval";
    status.outputs = {(fs::path(ec.output_dir) / "report.json").string()};
    int ok = 0;
    for (const auto& c : report.cases) ok += c.ok ? 1 : 0;
    status.extra["cases"] = static_cast<int>(report.cases.size());
    status.extra["cases_ok"] = ok;
  });

  // optimize-k
  auto* opt = app.add_subcommand("optimize-k", "Fit raising factors against an oracle map");
  std::string opt_config, opt_raw, opt_oracle, opt_out;
  KGridFlags opt_grid;
  opt->add_option("--config", opt_config, "JSON config file");
  opt->add_option("--raw", opt_raw, "Unit-factor analytic map base path")->required();
  opt->add_option("--oracle", opt_oracle, "Oracle map base path")->required();
  opt->add_option("--out", opt_out, "Write the result JSON here too");
  opt_grid.add(opt);
  opt->callback([&] {
    const ConfigDoc cfg = load_config(opt_config);
    const grfhd::KGrid grid = opt_grid.build(cfg);
    const auto [raw_map, raw_meta] = grfhd::load_safety_map(opt_raw);
    const auto [oracle_map, oracle_meta] = grfhd::load_safety_map(opt_oracle);
    (void)raw_meta;
    (void)oracle_meta;
    const grfhd::KOptResult res = grfhd::optimize_raising_factors(raw_map, oracle_map, grid);
    status.command = "optimize-k";
    status.extra["k1"] = res.k1;
    status.extra["k2"] = res.k2;
    status.extra["slope_rmse"] = res.slope_rmse;
    status.extra["roughness_rmse"] = res.roughness_rmse;
    if (!opt_out.empty()) {
      json out;
      out["format"] = "grfhd-k-opt";
      out["version"] = 1;
      out["k1"] = res.k1;
      out["k2"] = res.k2;
      out["slope_rmse"] = res.slope_rmse;
      out["roughness_rmse"] = res.roughness_rmse;
      grfhd::write_file_maybe_gz(opt_out, out.dump(2) + "\n");
      status.outputs = {opt_out};
    }
  });

  // render
  auto* ren = app.add_subcommand("render", "Render a grid file to an 8-bit PGM image");
  std::string ren_in, ren_out;
  ren->add_option("--in", ren_in, "Input grid file")->required();
  ren->add_option("--out", ren_out, "Output PGM path")->required();
  ren->callback([&] {
    const grfhd::DemGrid dem = grfhd::load_dem(ren_in);
    grfhd::render_pgm(dem, ren_out);
    status.command = "render";
    status.outputs = {ren_out, ren_out + ".meta.json"};
  });

  auto emit_error = [](int code, const std::string& message) {
    json st;
    st["status"] = "error";
    st["exit_code"] = code;
    st["message"] = message;
    std::cout << st.dump() << "\n";
    std::cerr << "error: " << message << "\n";
  };

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);  // prints help or the usage error
    if (rc == 0) return 0;
    json st;
    st["status"] = "error";
    st["exit_code"] = 1;
    st["message"] = e.what();
    std::cout << st.dump() << "\n";
    return 1;
  } catch (const grfhd::parameter_error& e) {
    emit_error(1, e.what());
    return 1;
  } catch (const grfhd::format_error& e) {
    emit_error(2, e.what());
    return 2;
  } catch (const grfhd::numerical_error& e) {
    emit_error(3, e.what());
    return 3;
  } catch (const grfhd::capacity_error& e) {
    emit_error(4, e.what());
    return 4;
  } catch (const std::exception& e) {
    emit_error(1, e.what());
    return 1;
  }

  json st;
  st["status"] = "ok";
  st["command"] = status.command;
  st["outputs"] = status.outputs;
  for (const auto& item : status.extra.items()) st[item.key()] = item.value();
  std::cout << st.dump() << "\n";
  return 0;
}
