#include "grfhd/lander.hpp"

#include <algorithm>
#include <cmath>

#include "grfhd/errors.hpp"

namespace grfhd {

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;
constexpr double kCollinearTol = 1e-12;  // m^2, on |c|

struct PadDiffs {
  double x12, x13, x23, y12, y13, y23, c;
};

PadDiffs pad_diffs(const PadSet& pads) {
  if (pads.pad_xy.size() < 3)
    throw parameter_error("pad set needs at least 3 pads");
  const auto& p1 = pads.pad_xy[0];
  const auto& p2 = pads.pad_xy[1];
  const auto& p3 = pads.pad_xy[2];
  PadDiffs d;
  d.x12 = p2.x - p1.x;
  d.x13 = p3.x - p1.x;
  d.x23 = p3.x - p2.x;
  d.y12 = p2.y - p1.y;
  d.y13 = p3.y - p1.y;
  d.y23 = p3.y - p2.y;
  d.c = d.x12 * d.y13 - d.x13 * d.y12;
  return d;
}

double cross(const Point2& o, const Point2& a, const Point2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

}  // namespace

void LanderGeometry::validate() const {
  if (n_pads != 3 && n_pads != 4)
    throw parameter_error("n_pads must be 3 or 4, got " + std::to_string(n_pads));
  if (!std::isfinite(pad_radius) || pad_radius <= 0.0)
    throw parameter_error("pad_radius must be finite and > 0");
  if (!std::isfinite(footprint_radius) || footprint_radius < pad_radius)
    throw parameter_error("footprint_radius must be finite and >= pad_radius");
  if (n_orientations < 1)
    throw parameter_error("n_orientations must be >= 1");
  if (!std::isfinite(footprint_step) || footprint_step <= 0.0)
    throw parameter_error("footprint_step must be finite and > 0");
}

double LanderGeometry::period() const { return 2.0 * kPi / n_pads; }

std::vector<double> LanderGeometry::thetas() const {
  validate();
  std::vector<double> out(static_cast<std::size_t>(n_orientations));
  const double p = period();
  for (int i = 0; i < n_orientations; ++i) out[i] = i * p / n_orientations;
  return out;
}

double PadSet::c() const { return pad_diffs(*this).c; }

PadSet pad_locations(const LanderGeometry& geom, double theta) {
  geom.validate();
  if (!std::isfinite(theta)) throw parameter_error("orientation angle must be finite");
  PadSet pads;
  pads.theta = theta;
  pads.pad_xy.reserve(static_cast<std::size_t>(geom.n_pads));
  for (int i = 0; i < geom.n_pads; ++i) {
    const double ang = theta + i * 2.0 * kPi / geom.n_pads;
    pads.pad_xy.push_back(
        {geom.pad_radius * std::cos(ang), geom.pad_radius * std::sin(ang)});
  }
  return pads;
}

std::vector<Point2> footprint_points(const LanderGeometry& geom, double theta) {
  const PadSet pads = pad_locations(geom, theta);
  const std::vector<Point2> hull = convex_hull(pads.pad_xy);
  if (hull.size() < 3)
    throw parameter_error("pad hull is degenerate; cannot build a footprint");

  double xmin = hull[0].x, xmax = hull[0].x, ymin = hull[0].y, ymax = hull[0].y;
  for (const auto& p : hull) {
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }

  const double step = geom.footprint_step;
  const auto near_pad = [&](const Point2& q) {
    for (const auto& pad : pads.pad_xy)
      if (std::hypot(q.x - pad.x, q.y - pad.y) < 1e-9) return true;
    return false;
  };

  std::vector<Point2> out;
  const long iy0 = static_cast<long>(std::ceil(ymin / step - 1e-9));
  const long iy1 = static_cast<long>(std::floor(ymax / step + 1e-9));
  const long ix0 = static_cast<long>(std::ceil(xmin / step - 1e-9));
  const long ix1 = static_cast<long>(std::floor(xmax / step + 1e-9));
  for (long iy = iy0; iy <= iy1; ++iy) {
    for (long ix = ix0; ix <= ix1; ++ix) {
      const Point2 q{ix * step, iy * step};
      if (!point_in_hull(q, hull, 1e-9)) continue;
      if (near_pad(q)) continue;
      out.push_back(q);
    }
  }
  // The target center is a mandatory sample even when the lattice misses the
  // hull entirely; it is the lattice origin, so it is already present
  // whenever any point is.
  if (out.empty()) out.push_back({0.0, 0.0});
  return out;
}

QuadFormSlope build_A(const PadSet& pads, double slope_threshold) {
  if (!std::isfinite(slope_threshold) || slope_threshold <= 0.0 ||
      slope_threshold >= kPi / 2.0)
    throw parameter_error("slope threshold must lie in (0, pi/2)");
  const PadDiffs d = pad_diffs(pads);
  if (std::abs(d.c) < kCollinearTol)
    throw parameter_error("pads are collinear; landing plane is degenerate");

  QuadFormSlope qf;
  qf.theta = pads.theta;
  auto& a = qf.A;
  a(0, 0) = d.x23 * d.x23 + d.y23 * d.y23;
  a(1, 1) = d.x13 * d.x13 + d.y13 * d.y13;
  a(2, 2) = d.x12 * d.x12 + d.y12 * d.y12;
  a(0, 1) = a(1, 0) = -d.x13 * d.x23 - d.y13 * d.y23;
  a(0, 2) = a(2, 0) = d.x12 * d.x23 + d.y12 * d.y23;
  a(1, 2) = a(2, 1) = -d.x12 * d.x13 - d.y12 * d.y13;
  const double t = std::tan(slope_threshold);
  qf.tau_s = d.c * d.c * t * t;
  return qf;
}

QuadFormRoughness build_B(const PadSet& pads, const Point2& gamma_p,
                          double roughness_threshold) {
  if (!std::isfinite(roughness_threshold) || roughness_threshold <= 0.0)
    throw parameter_error("roughness threshold must be > 0");
  if (!std::isfinite(gamma_p.x) || !std::isfinite(gamma_p.y))
    throw parameter_error("footprint point must be finite");
  const PadDiffs d = pad_diffs(pads);
  if (std::abs(d.c) < kCollinearTol)
    throw parameter_error("pads are collinear; landing plane is degenerate");

  const double x1p = gamma_p.x - pads.pad_xy[0].x;
  const double y1p = gamma_p.y - pads.pad_xy[0].y;
  const double r2 = roughness_threshold * roughness_threshold;
  const double c = d.c;
  // Cross-term shorthands: g_k = x1p*y_k - x_k*y1p for the three pad edges.
  const double g23 = x1p * d.y23 - d.x23 * y1p;
  const double g13 = x1p * d.y13 - d.x13 * y1p;
  const double g12 = x1p * d.y12 - d.x12 * y1p;

  QuadFormRoughness qf;
  qf.theta = pads.theta;
  qf.gamma_p = gamma_p;
  auto& b = qf.B;
  b(0, 0) = g23 * g23 - r2 * (d.x23 * d.x23 + d.y23 * d.y23) + c * c - 2.0 * c * g23;
  b(1, 1) = g13 * g13 - r2 * (d.x13 * d.x13 + d.y13 * d.y13);
  b(2, 2) = g12 * g12 - r2 * (d.x12 * d.x12 + d.y12 * d.y12);
  b(3, 3) = c * c;
  b(0, 1) = b(1, 0) = -g13 * (g23 - c) + r2 * (d.x13 * d.x23 + d.y13 * d.y23);
  b(0, 2) = b(2, 0) = g12 * (g23 - c) - r2 * (d.x12 * d.x23 + d.y12 * d.y23);
  b(0, 3) = b(3, 0) = c * (g23 - c);
  b(1, 2) = b(2, 1) = -(x1p * x1p - r2) * d.y12 * d.y13 -
                      (y1p * y1p - r2) * d.x12 * d.x13 +
                      x1p * y1p * (d.x12 * d.y13 + d.x13 * d.y12);
  b(1, 3) = b(3, 1) = -c * g13;
  b(2, 3) = b(3, 2) = c * g12;
  qf.tau_r = r2 * c * c;
  return qf;
}

std::vector<PadTriple> pad_triples(int n_pads) {
  if (n_pads == 3) return {{{0, 1, 2}, -1}};
  if (n_pads == 4)
    return {{{0, 1, 2}, 3}, {{1, 2, 3}, 0}, {{2, 3, 0}, 1}, {{3, 0, 1}, 2}};
  throw parameter_error("n_pads must be 3 or 4, got " + std::to_string(n_pads));
}

std::vector<Point2> convex_hull(std::vector<Point2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Point2& a, const Point2& b) {
    if (a.x != b.x) return a.x < b.x;
    return a.y < b.y;
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const Point2& a, const Point2& b) {
                          return a.x == b.x && a.y == b.y;
                        }),
            pts.end());
  const int n = static_cast<int>(pts.size());
  if (n < 3) return pts;

  std::vector<Point2> hull(2 * static_cast<std::size_t>(n));
  int k = 0;
  for (int i = 0; i < n; ++i) {  // lower chain
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  const int lower = k + 1;
  for (int i = n - 2; i >= 0; --i) {  // upper chain
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(static_cast<std::size_t>(k - 1));  // last point repeats the first
  return hull;
}

bool point_in_hull(const Point2& p, const std::vector<Point2>& hull, double tol) {
  const int n = static_cast<int>(hull.size());
  if (n < 3) return false;
  for (int i = 0; i < n; ++i) {
    const Point2& a = hull[i];
    const Point2& b = hull[(i + 1) % n];
    const double len = std::hypot(b.x - a.x, b.y - a.y);
    if (len <= 0.0) continue;
    if (cross(a, b, p) / len < -tol) return false;
  }
  return true;
}

bool disk_in_hull(const Point2& center, double radius,
                  const std::vector<Point2>& hull, double tol) {
  const int n = static_cast<int>(hull.size());
  if (n < 3) return false;
  for (int i = 0; i < n; ++i) {
    const Point2& a = hull[i];
    const Point2& b = hull[(i + 1) % n];
    const double len = std::hypot(b.x - a.x, b.y - a.y);
    if (len <= 0.0) continue;
    if (cross(a, b, center) / len < radius - tol) return false;
  }
  return true;
}

}  // namespace grfhd
