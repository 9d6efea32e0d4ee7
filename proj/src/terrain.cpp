#include "grfhd/terrain.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <utility>

#include "grfhd/rng.hpp"

namespace grfhd {

void GridSpec::validate() const {
  if (rows < 2 || cols < 2)
    throw parameter_error("grid must be at least 2x2, got " + std::to_string(rows) + "x" +
                          std::to_string(cols));
  if (!(resolution > 0.0) || !std::isfinite(resolution))
    throw parameter_error("grid resolution must be positive and finite");
  if (!std::isfinite(origin_x) || !std::isfinite(origin_y))
    throw parameter_error("grid origin must be finite");
}

bool GridSpec::same_as(const GridSpec& o) const {
  return rows == o.rows && cols == o.cols && resolution == o.resolution &&
         origin_x == o.origin_x && origin_y == o.origin_y;
}

void DemGrid::validate(double plausible_bound) const {
  grid.validate();
  if (z.size() != grid.size())
    throw parameter_error("elevation payload holds " + std::to_string(z.size()) +
                          " values for a " + std::to_string(grid.rows) + "x" +
                          std::to_string(grid.cols) + " grid");
  for (double v : z) {
    if (std::isfinite(v) && std::abs(v) >= plausible_bound)
      throw parameter_error("elevation " + std::to_string(v) +
                            " exceeds the plausibility bound " +
                            std::to_string(plausible_bound));
  }
}

double bilinear_at(const DemGrid& dem, double x, double y) {
  const GridSpec& g = dem.grid;
  double gx = (x - g.origin_x) / g.resolution;
  double gy = (y - g.origin_y) / g.resolution;
  constexpr double snap = 1e-9;
  double rx = std::round(gx), ry = std::round(gy);
  if (std::abs(gx - rx) < snap) gx = rx;
  if (std::abs(gy - ry) < snap) gy = ry;
  if (gx < 0.0 || gy < 0.0 || gx > g.cols - 1 || gy > g.rows - 1) return nodata();

  int c0 = static_cast<int>(std::floor(gx));
  int r0 = static_cast<int>(std::floor(gy));
  if (c0 > g.cols - 2) c0 = g.cols - 2;
  if (r0 > g.rows - 2) r0 = g.rows - 2;
  const double fx = gx - c0;
  const double fy = gy - r0;

  if (fx == 0.0 && fy == 0.0) return dem.at(r0, c0);

  const double z00 = dem.at(r0, c0);
  const double z01 = dem.at(r0, c0 + 1);
  const double z10 = dem.at(r0 + 1, c0);
  const double z11 = dem.at(r0 + 1, c0 + 1);
  if (fy == 0.0) {
    if (is_nodata(z00) || is_nodata(z01)) return nodata();
    return z00 * (1.0 - fx) + z01 * fx;
  }
  if (fx == 0.0) {
    if (is_nodata(z00) || is_nodata(z10)) return nodata();
    return z00 * (1.0 - fy) + z10 * fy;
  }
  if (is_nodata(z00) || is_nodata(z01) || is_nodata(z10) || is_nodata(z11)) return nodata();
  return z00 * (1.0 - fx) * (1.0 - fy) + z01 * fx * (1.0 - fy) + z10 * (1.0 - fx) * fy +
         z11 * fx * fy;
}

PointCloud::PointCloud(std::vector<double> xs, std::vector<double> ys,
                       std::vector<double> zs, double sigma)
    : x(std::move(xs)), y(std::move(ys)), z(std::move(zs)), noise_sigma(sigma) {
  if (x.size() != y.size() || x.size() != z.size())
    throw parameter_error("point cloud coordinate arrays have mismatched lengths");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
    throw parameter_error("noise_sigma must be finite and >= 0");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i]) || !std::isfinite(z[i]))
      throw parameter_error("point " + std::to_string(i) + " has a non-finite coordinate");
  }
  std::vector<std::size_t> order(x.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x[a] != x[b] ? x[a] < x[b] : y[a] < y[b];
  });
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (x[order[i]] == x[order[i - 1]] && y[order[i]] == y[order[i - 1]])
      throw parameter_error("duplicate horizontal location (" + std::to_string(x[order[i]]) +
                            ", " + std::to_string(y[order[i]]) + ") in point cloud");
  }
}

namespace {

// Diamond-square on a (2^k + 1) square, per-level amplitude 2^(-hurst*level).
std::vector<double> diamond_square(std::uint64_t seed, int size, double hurst) {
  std::vector<double> h(static_cast<std::size_t>(size) * size, 0.0);
  Rng rng(seed);
  auto at = [&](int r, int c) -> double& {
    return h[static_cast<std::size_t>(r) * size + c];
  };
  at(0, 0) = rng.normal();
  at(0, size - 1) = rng.normal();
  at(size - 1, 0) = rng.normal();
  at(size - 1, size - 1) = rng.normal();

  double scale = 1.0;
  const double decay = std::pow(2.0, -hurst);
  for (int step = size - 1; step > 1; step /= 2) {
    const int half = step / 2;
    scale *= decay;
    // diamond: centers of squares
    for (int r = half; r < size; r += step)
      for (int c = half; c < size; c += step) {
        const double avg = 0.25 * (at(r - half, c - half) + at(r - half, c + half) +
                                   at(r + half, c - half) + at(r + half, c + half));
        at(r, c) = avg + scale * rng.normal();
      }
    // square: edge midpoints, wrapping neighbors clamped to the grid
    for (int r = 0; r < size; r += half)
      for (int c = (r / half) % 2 == 0 ? half : 0; c < size; c += step) {
        double sum = 0.0;
        int cnt = 0;
        if (r - half >= 0) { sum += at(r - half, c); ++cnt; }
        if (r + half < size) { sum += at(r + half, c); ++cnt; }
        if (c - half >= 0) { sum += at(r, c - half); ++cnt; }
        if (c + half < size) { sum += at(r, c + half); ++cnt; }
        at(r, c) = sum / cnt + scale * rng.normal();
      }
  }
  return h;
}

}  // namespace

DemGrid generate_fractal_terrain(std::uint64_t seed, int n_rows, int n_cols,
                                 double resolution, double hurst, double amplitude,
                                 const std::optional<RockSpec>& rocks) {
  if (n_rows < 2 || n_cols < 2)
    throw parameter_error("fractal terrain needs at least 2x2 nodes");
  if (!(hurst > 0.0) || hurst > 1.0 || !std::isfinite(hurst))
    throw parameter_error("hurst exponent must lie in (0, 1]");
  if (!(amplitude >= 0.0) || !std::isfinite(amplitude))
    throw parameter_error("amplitude must be finite and >= 0");

  int size = 1;
  while (size + 1 < std::max(n_rows, n_cols)) size *= 2;
  size += 1;

  GridSpec spec{n_rows, n_cols, resolution, 0.0, 0.0};
  spec.validate();
  DemGrid dem(spec);

  if (amplitude > 0.0) {
    const std::vector<double> h = diamond_square(derive_seed(seed, "fractal"), size, hurst);
    double mean = 0.0;
    for (int r = 0; r < n_rows; ++r)
      for (int c = 0; c < n_cols; ++c) mean += h[static_cast<std::size_t>(r) * size + c];
    mean /= spec.size();
    double rms = 0.0;
    for (int r = 0; r < n_rows; ++r)
      for (int c = 0; c < n_cols; ++c) {
        const double v = h[static_cast<std::size_t>(r) * size + c] - mean;
        rms += v * v;
      }
    rms = std::sqrt(rms / spec.size());
    const double gain = rms > 1e-30 ? amplitude / rms : 0.0;
    for (int r = 0; r < n_rows; ++r)
      for (int c = 0; c < n_cols; ++c)
        dem.at(r, c) = gain * (h[static_cast<std::size_t>(r) * size + c] - mean);
  }

  if (rocks && rocks->count > 0) {
    const RockSpec& rs = *rocks;
    if (rs.height_min < 0 || rs.height_max < rs.height_min || rs.radius_min <= 0 ||
        rs.radius_max < rs.radius_min)
      throw parameter_error("invalid rock spec ranges");
    Rng rng(derive_seed(seed, "rocks"));
    for (int k = 0; k < rs.count; ++k) {
      const double cx = rng.uniform(0.0, spec.x_max());
      const double cy = rng.uniform(0.0, spec.y_max());
      const double height = rng.uniform(rs.height_min, rs.height_max);
      const double radius = rng.uniform(rs.radius_min, rs.radius_max);
      const int c_lo = std::max(0, static_cast<int>(std::floor((cx - radius) / resolution)));
      const int c_hi = std::min(n_cols - 1, static_cast<int>(std::ceil((cx + radius) / resolution)));
      const int r_lo = std::max(0, static_cast<int>(std::floor((cy - radius) / resolution)));
      const int r_hi = std::min(n_rows - 1, static_cast<int>(std::ceil((cy + radius) / resolution)));
      for (int r = r_lo; r <= r_hi; ++r)
        for (int c = c_lo; c <= c_hi; ++c) {
          const double dx = spec.x_of(c) - cx;
          const double dy = spec.y_of(r) - cy;
          const double d2 = (dx * dx + dy * dy) / (radius * radius);
          if (d2 < 1.0) dem.at(r, c) += height * std::sqrt(1.0 - d2);
        }
    }
  }

  // Quantize through float: the binary format stores float32, and generated
  // fixtures are expected to round-trip field-by-field.
  for (double& v : dem.z) v = static_cast<double>(static_cast<float>(v));
  dem.validate();
  return dem;
}

PointCloud simulate_lidar(const DemGrid& dem, double gsd, double noise_sigma,
                          std::uint64_t seed, double hole_fraction) {
  dem.validate();
  if (!(gsd >= dem.grid.resolution))
    throw parameter_error("lidar gsd " + std::to_string(gsd) +
                          " is finer than the DEM resolution " +
                          std::to_string(dem.grid.resolution));
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
    throw parameter_error("noise_sigma must be finite and >= 0");
  if (!(hole_fraction >= 0.0) || hole_fraction >= 1.0)
    throw parameter_error("hole_fraction must lie in [0, 1)");

  const GridSpec& g = dem.grid;
  const int nx = static_cast<int>(std::floor((g.cols - 1) * g.resolution / gsd + 1e-9)) + 1;
  const int ny = static_cast<int>(std::floor((g.rows - 1) * g.resolution / gsd + 1e-9)) + 1;

  // Noise and hole decisions come from separate streams so changing the hole
  // fraction leaves the per-point noise unchanged.
  Rng noise_rng(derive_seed(seed, "lidar.noise"));
  Rng hole_rng(derive_seed(seed, "lidar.holes"));

  std::vector<double> xs, ys, zs;
  xs.reserve(static_cast<std::size_t>(nx) * ny);
  ys.reserve(xs.capacity());
  zs.reserve(xs.capacity());
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const double px = g.origin_x + i * gsd;
      const double py = g.origin_y + j * gsd;
      double pz = bilinear_at(dem, px, py);
      const double noise = noise_sigma > 0.0 ? noise_sigma * noise_rng.normal() : 0.0;
      const bool drop = hole_fraction > 0.0 && hole_rng.uniform() < hole_fraction;
      if (is_nodata(pz) || drop) continue;
      xs.push_back(px);
      ys.push_back(py);
      zs.push_back(pz + noise);
    }
  if (xs.empty())
    throw parameter_error("lidar simulation produced no points (holes or nodata removed all)");
  return PointCloud(std::move(xs), std::move(ys), std::move(zs), noise_sigma);
}

namespace {

struct LatticeAxis {
  double origin = 0.0;
  double pitch = 0.0;
  int count = 0;
};

LatticeAxis infer_axis(std::vector<double> coords, const char* name) {
  std::sort(coords.begin(), coords.end());
  coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
  LatticeAxis ax;
  ax.origin = coords.front();
  if (coords.size() == 1) {
    ax.pitch = 0.0;
    ax.count = 1;
    return ax;
  }
  double pitch = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < coords.size(); ++i)
    pitch = std::min(pitch, coords[i] - coords[i - 1]);
  const double tol = 1e-6 * pitch;
  const double span = coords.back() - coords.front();
  const int count = static_cast<int>(std::round(span / pitch)) + 1;
  for (double v : coords) {
    const double k = (v - ax.origin) / pitch;
    if (std::abs(k - std::round(k)) * pitch > tol)
      throw format_error(std::string("point cloud ") + name +
                         " coordinates do not form a uniform lattice");
  }
  ax.pitch = pitch;
  ax.count = count;
  return ax;
}

}  // namespace

DemGrid bilinear_upsample(const PointCloud& pcd, const GridSpec& target) {
  target.validate();
  if (pcd.size() < 4) throw format_error("point cloud too small to form a lattice");

  const LatticeAxis ax = infer_axis(pcd.x, "x");
  const LatticeAxis ay = infer_axis(pcd.y, "y");
  if (ax.count < 2 || ay.count < 2)
    throw format_error("point cloud lattice is degenerate (single row or column)");
  const double pitch = std::min(ax.pitch, ay.pitch);
  if (!(target.resolution <= pitch + 1e-12))
    throw parameter_error("target resolution must not exceed the lattice spacing");

  // Occupancy grid of lattice values, NaN where a lattice point is missing.
  std::vector<double> lat(static_cast<std::size_t>(ax.count) * ay.count, nodata());
  for (std::size_t i = 0; i < pcd.size(); ++i) {
    const int ci = static_cast<int>(std::round((pcd.x[i] - ax.origin) / ax.pitch));
    const int ri = static_cast<int>(std::round((pcd.y[i] - ay.origin) / ay.pitch));
    if (ci < 0 || ci >= ax.count || ri < 0 || ri >= ay.count)
      throw format_error("point cloud lattice indexing failed");
    lat[static_cast<std::size_t>(ri) * ax.count + ci] = pcd.z[i];
  }
  auto lat_at = [&](int r, int c) { return lat[static_cast<std::size_t>(r) * ax.count + c]; };

  std::vector<std::pair<int, int>> present;
  present.reserve(pcd.size());
  for (int r = 0; r < ay.count; ++r)
    for (int c = 0; c < ax.count; ++c)
      if (!is_nodata(lat_at(r, c))) present.emplace_back(r, c);

  DemGrid out(target, 0.0);
  const double x_hi = ax.origin + (ax.count - 1) * ax.pitch;
  const double y_hi = ay.origin + (ay.count - 1) * ay.pitch;
  for (int r = 0; r < target.rows; ++r) {
    const double py = target.y_of(r);
    for (int c = 0; c < target.cols; ++c) {
      const double px = target.x_of(c);
      if (px < ax.origin - 1e-9 || px > x_hi + 1e-9 || py < ay.origin - 1e-9 ||
          py > y_hi + 1e-9) {
        out.at(r, c) = nodata();
        continue;
      }
      double gx = (px - ax.origin) / ax.pitch;
      double gy = (py - ay.origin) / ay.pitch;
      gx = std::min(std::max(gx, 0.0), static_cast<double>(ax.count - 1));
      gy = std::min(std::max(gy, 0.0), static_cast<double>(ay.count - 1));
      int c0 = std::min(static_cast<int>(std::floor(gx)), ax.count - 2);
      int r0 = std::min(static_cast<int>(std::floor(gy)), ay.count - 2);
      const double fx = gx - c0;
      const double fy = gy - r0;
      const double z00 = lat_at(r0, c0), z01 = lat_at(r0, c0 + 1);
      const double z10 = lat_at(r0 + 1, c0), z11 = lat_at(r0 + 1, c0 + 1);
      if (!is_nodata(z00) && !is_nodata(z01) && !is_nodata(z10) && !is_nodata(z11)) {
        out.at(r, c) = z00 * (1 - fx) * (1 - fy) + z01 * fx * (1 - fy) +
                       z10 * (1 - fx) * fy + z11 * fx * fy;
      } else {
        // Hole: fall back to the nearest available lattice point.
        double best = std::numeric_limits<double>::infinity();
        double best_z = nodata();
        for (const auto& [pr, pc] : present) {
          const double dx = ax.origin + pc * ax.pitch - px;
          const double dy = ay.origin + pr * ay.pitch - py;
          const double d2 = dx * dx + dy * dy;
          if (d2 < best) {
            best = d2;
            best_z = lat_at(pr, pc);
          }
        }
        out.at(r, c) = best_z;
      }
    }
  }
  return out;
}

}  // namespace grfhd
