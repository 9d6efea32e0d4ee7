#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "grfhd/errors.hpp"

namespace grfhd {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

inline double nodata() { return std::numeric_limits<double>::quiet_NaN(); }
inline bool is_nodata(double v) { return !std::isfinite(v); }

// In-memory nodata is quiet NaN; the on-disk payload encodes it as this
// sentinel (the plausibility bound keeps real elevations away from it).
constexpr float kNodataSentinel = -32768.0f;
constexpr double kDefaultPlausibleZ = 1.0e4;

// Target raster layout shared by DemGrid, SafetyMap and SafetyTruth.
// Node (r, c) sits at (origin_x + c*resolution, origin_y + r*resolution).
struct GridSpec {
  int rows = 0;
  int cols = 0;
  double resolution = 1.0;
  double origin_x = 0.0;
  double origin_y = 0.0;

  void validate() const;
  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
  double x_of(int c) const { return origin_x + c * resolution; }
  double y_of(int r) const { return origin_y + r * resolution; }
  double x_max() const { return origin_x + (cols - 1) * resolution; }
  double y_max() const { return origin_y + (rows - 1) * resolution; }
  bool same_as(const GridSpec& o) const;
};

// Uniform elevation raster. Values in meters, row-major, NaN = nodata.
struct DemGrid {
  GridSpec grid;
  std::vector<double> z;

  DemGrid() = default;
  explicit DemGrid(const GridSpec& spec, double fill = 0.0)
      : grid(spec), z(spec.size(), fill) {
    spec.validate();
  }

  double& at(int r, int c) { return z[static_cast<std::size_t>(r) * grid.cols + c]; }
  double at(int r, int c) const { return z[static_cast<std::size_t>(r) * grid.cols + c]; }

  // Throws parameter_error when a finite elevation violates the plausibility
  // bound or the payload shape is inconsistent.
  void validate(double plausible_bound = kDefaultPlausibleZ) const;
};

// Bilinear sample of the raster at an arbitrary position. Returns NaN outside
// the grid or when a required corner is nodata. Index coordinates within 1e-9
// of a node snap to it, so on-node queries reproduce stored values exactly.
double bilinear_at(const DemGrid& dem, double x, double y);

// Sparse elevation measurements with a shared noise level.
struct PointCloud {
  std::vector<double> x, y, z;
  double noise_sigma = 0.0;

  PointCloud() = default;
  PointCloud(std::vector<double> xs, std::vector<double> ys, std::vector<double> zs,
             double sigma);

  std::size_t size() const { return x.size(); }
};

struct RockSpec {
  int count = 0;
  double height_min = 0.0, height_max = 0.0;  // meters
  double radius_min = 0.0, radius_max = 0.0;  // meters
};

// Fractional-Brownian surface by diamond-square synthesis with the given
// Hurst exponent, de-meaned and rescaled to RMS `amplitude`, then optional
// scaled-hemisphere rocks. Deterministic per seed; values are quantized to
// float so the binary grid format round-trips field-by-field.
DemGrid generate_fractal_terrain(std::uint64_t seed, int n_rows, int n_cols,
                                 double resolution, double hurst, double amplitude,
                                 const std::optional<RockSpec>& rocks = {});

// Samples the DEM on a uniform lattice of spacing `gsd` starting at the grid
// origin (bilinear at off-node lattice points), adds i.i.d. N(0, sigma^2)
// noise, then drops each point independently with probability hole_fraction.
PointCloud simulate_lidar(const DemGrid& dem, double gsd, double noise_sigma,
                          std::uint64_t seed, double hole_fraction = 0.0);

// Reconstructs a dense raster from a (possibly incomplete) uniform lattice of
// points: bilinear between the four surrounding lattice nodes, nearest
// available node where a corner is missing, nodata outside the lattice hull.
DemGrid bilinear_upsample(const PointCloud& pcd, const GridSpec& target);

}  // namespace grfhd
