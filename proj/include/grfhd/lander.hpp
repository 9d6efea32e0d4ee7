#pragma once

#include <array>
#include <vector>

#include <Eigen/Dense>

#include "grfhd/terrain.hpp"

namespace grfhd {

struct LanderGeometry {
  int n_pads = 3;               // 3 (triangular) or 4 (square)
  double pad_radius = 5.0;      // m, lander center to each pad
  double footprint_radius = 5.0;  // m, clearance disk used for map validity
  int n_orientations = 24;      // yaw angles over one symmetry period
  double footprint_step = 1.0;  // m, roughness lattice pitch

  void validate() const;
  // Rotational symmetry period of the pad layout: 2*pi / n_pads.
  double period() const;
  // Orientation set: i * period / n_orientations, i = 0..n_orientations-1.
  std::vector<double> thetas() const;
};

// Pads in counterclockwise order, target-centered coordinates.
struct PadSet {
  double theta = 0.0;
  std::vector<Point2> pad_xy;

  // c = x12*y13 - x13*y12 over the first three pads: twice the triangle
  // area, positive for counterclockwise ordering.
  double c() const;
};

struct QuadFormSlope {
  double theta = 0.0;
  Eigen::Matrix3d A;
  double tau_s = 0.0;  // c^2 * tan^2(slope threshold)
};

struct QuadFormRoughness {
  double theta = 0.0;
  Point2 gamma_p;  // footprint point, target-centered
  Eigen::Matrix4d B;
  double tau_r = 0.0;  // roughness_threshold^2 * c^2
};

// Pad i sits at angle theta + i * 2*pi/n_pads on the pad_radius circle.
PadSet pad_locations(const LanderGeometry& geom, double theta);

// Axis-aligned lattice of pitch footprint_step, anchored at the target
// center and clipped to the convex hull of the pads; always contains (0,0),
// never contains points within 1e-9 m of a pad.
std::vector<Point2> footprint_points(const LanderGeometry& geom, double theta);

QuadFormSlope build_A(const PadSet& pads, double slope_threshold);

// Z ordering for the 4x4 form is [z1, z2, z3, z_p].
QuadFormRoughness build_B(const PadSet& pads, const Point2& gamma_p,
                          double roughness_threshold);

// Contact-pad triples in counterclockwise order. For 3 pads there is one
// triple and `other` is -1; for 4 pads, each triple omits one pad whose
// index is `other` (the pad checked for ground clearance).
struct PadTriple {
  std::array<int, 3> contact;
  int other = -1;
};
std::vector<PadTriple> pad_triples(int n_pads);

// Geometry helpers shared with the safety evaluators. Hulls are returned
// counterclockwise without a repeated closing vertex; fewer than 3 distinct
// non-collinear input points yield a degenerate hull that contains nothing.
std::vector<Point2> convex_hull(std::vector<Point2> pts);
bool point_in_hull(const Point2& p, const std::vector<Point2>& hull, double tol);
bool disk_in_hull(const Point2& center, double radius,
                  const std::vector<Point2>& hull, double tol);

}  // namespace grfhd
