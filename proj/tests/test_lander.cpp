#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "grfhd/errors.hpp"
#include "grfhd/lander.hpp"
#include "grfhd/rng.hpp"

using namespace grfhd;

namespace {

constexpr double kPi = 3.14159265358979323846;

PadSet random_pads(Rng& rng) {
  LanderGeometry geom;
  geom.pad_radius = rng.uniform(2.0, 8.0);
  geom.footprint_radius = geom.pad_radius;
  return pad_locations(geom, rng.uniform(0.0, 2.0 * kPi));
}

// Landing-plane normal from the cross product of two pad-to-pad edges.
Eigen::Vector3d plane_normal(const PadSet& pads, const Eigen::Vector3d& z) {
  const Eigen::Vector3d p1(pads.pad_xy[0].x, pads.pad_xy[0].y, z(0));
  const Eigen::Vector3d p2(pads.pad_xy[1].x, pads.pad_xy[1].y, z(1));
  const Eigen::Vector3d p3(pads.pad_xy[2].x, pads.pad_xy[2].y, z(2));
  return (p2 - p1).cross(p3 - p1);
}

bool in_triangle(const Point2& q, const std::vector<Point2>& tri, double tol) {
  // Half-plane sign checks against each counterclockwise edge.
  for (int i = 0; i < 3; ++i) {
    const Point2& a = tri[i];
    const Point2& b = tri[(i + 1) % 3];
    const double cross = (b.x - a.x) * (q.y - a.y) - (b.y - a.y) * (q.x - a.x);
    const double len = std::hypot(b.x - a.x, b.y - a.y);
    if (cross / len < -tol) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("triangular pads at radius five sit at the documented positions") {
  LanderGeometry geom;
  geom.pad_radius = 5.0;
  const PadSet pads = pad_locations(geom, 0.0);
  REQUIRE(pads.pad_xy.size() == 3);
  CHECK(pads.pad_xy[0].x == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(pads.pad_xy[0].y == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  CHECK(pads.pad_xy[1].x == doctest::Approx(-2.5).epsilon(1e-12));
  CHECK(pads.pad_xy[1].y == doctest::Approx(4.3301).epsilon(1e-4));
  CHECK(pads.pad_xy[2].x == doctest::Approx(-2.5).epsilon(1e-12));
  CHECK(pads.pad_xy[2].y == doctest::Approx(-4.3301).epsilon(1e-4));
  CHECK(pads.c() == doctest::Approx(64.9519).epsilon(1e-5));
}

TEST_CASE("advancing theta by one symmetry period relabels the pads") {
  LanderGeometry geom;
  geom.pad_radius = 4.0;
  const double theta = 0.37;
  const PadSet a = pad_locations(geom, theta);
  const PadSet b = pad_locations(geom, theta + 2.0 * kPi / 3.0);
  for (int i = 0; i < 3; ++i) {
    CHECK(b.pad_xy[i].x == doctest::Approx(a.pad_xy[(i + 1) % 3].x).epsilon(1e-12));
    CHECK(b.pad_xy[i].y == doctest::Approx(a.pad_xy[(i + 1) % 3].y).epsilon(1e-12));
  }
}

TEST_CASE("pads are counterclockwise for both layouts") {
  for (int n_pads : {3, 4}) {
    LanderGeometry geom;
    geom.n_pads = n_pads;
    geom.pad_radius = 5.0;
    for (double theta : {0.0, 0.5, 1.1}) {
      const PadSet pads = pad_locations(geom, theta);
      REQUIRE(static_cast<int>(pads.pad_xy.size()) == n_pads);
      CHECK(pads.c() > 0.0);
    }
  }
}

TEST_CASE("orientation set spans one symmetry period") {
  LanderGeometry geom;
  geom.n_pads = 3;
  geom.n_orientations = 24;
  const auto thetas = geom.thetas();
  REQUIRE(thetas.size() == 24);
  CHECK(thetas.front() == 0.0);
  CHECK(thetas.back() == doctest::Approx(23.0 / 24.0 * geom.period()));
  CHECK(geom.period() == doctest::Approx(2.0 * kPi / 3.0));
  geom.n_pads = 4;
  CHECK(geom.period() == doctest::Approx(kPi / 2.0));
}

TEST_CASE("a footprint step wider than the hull leaves only the target center") {
  LanderGeometry geom;
  geom.pad_radius = 5.0;
  geom.footprint_step = 100.0;
  const auto pts = footprint_points(geom, 0.2);
  REQUIRE(pts.size() == 1);
  CHECK(pts[0].x == 0.0);
  CHECK(pts[0].y == 0.0);
}

TEST_CASE("footprint lattice count matches brute-force point-in-triangle enumeration") {
  LanderGeometry geom;
  geom.pad_radius = 5.0;
  geom.footprint_step = 1.0;
  for (double theta : {0.0, 0.31, 1.07}) {
    const PadSet pads = pad_locations(geom, theta);
    const auto pts = footprint_points(geom, theta);

    std::size_t want = 0;
    bool center_inside = false;
    for (int i = -10; i <= 10; ++i)
      for (int j = -10; j <= 10; ++j) {
        const Point2 q{i * geom.footprint_step, j * geom.footprint_step};
        if (!in_triangle(q, pads.pad_xy, 1e-9)) continue;
        bool on_pad = false;
        for (const auto& pad : pads.pad_xy)
          on_pad = on_pad || std::hypot(q.x - pad.x, q.y - pad.y) < 1e-9;
        if (on_pad) continue;
        ++want;
        center_inside = center_inside || (i == 0 && j == 0);
      }
    if (!center_inside) ++want;  // the mandatory target center

    CHECK(pts.size() == want);
    for (const auto& q : pts) CHECK(in_triangle(q, pads.pad_xy, 1e-8));
  }
}

TEST_CASE("footprint points never coincide with a pad") {
  LanderGeometry geom;
  geom.pad_radius = 3.0;
  geom.footprint_step = 1.0;
  for (double theta : {0.0, 0.7}) {
    const PadSet pads = pad_locations(geom, theta);
    for (const auto& q : footprint_points(geom, theta))
      for (const auto& pad : pads.pad_xy)
        CHECK(std::hypot(q.x - pad.x, q.y - pad.y) >= 1e-9);
  }
}

TEST_CASE("slope form reproduces the squared normal tilt for random pads") {
  Rng rng(101);
  for (int trial = 0; trial < 20; ++trial) {
    const PadSet pads = random_pads(rng);
    const QuadFormSlope qf = build_A(pads, 10.0 * kPi / 180.0);
    for (int k = 0; k < 5; ++k) {
      const Eigen::Vector3d z(rng.normal(), rng.normal(), rng.normal());
      const Eigen::Vector3d n = plane_normal(pads, z);
      const double want = n(0) * n(0) + n(1) * n(1);
      const double got = z.dot(qf.A * z);
      CHECK(std::abs(got - want) <= 1e-10 * std::max(1.0, std::abs(want)));
    }
  }
}

TEST_CASE("slope threshold maps to tau through the squared tangent") {
  LanderGeometry geom;
  geom.pad_radius = 5.0;
  const PadSet pads = pad_locations(geom, 0.4);
  const double sbar = 12.0 * kPi / 180.0;
  const QuadFormSlope qf = build_A(pads, sbar);
  const double c = pads.c();
  CHECK(qf.tau_s == doctest::Approx(c * c * std::tan(sbar) * std::tan(sbar)).epsilon(1e-12));
}

TEST_CASE("a vanishing slope threshold makes any tilted plane unsafe") {
  LanderGeometry geom;
  geom.pad_radius = 5.0;
  const PadSet pads = pad_locations(geom, 0.0);
  const QuadFormSlope qf = build_A(pads, 1e-12);
  CHECK(qf.tau_s < 1e-15);
  const Eigen::Vector3d z(0.5, -0.2, 0.1);  // tilted plane, a^2 + b^2 > 0
  CHECK(z.dot(qf.A * z) > qf.tau_s);
}

TEST_CASE("slope form is translation invariant") {
  LanderGeometry geom;
  geom.pad_radius = 4.0;
  PadSet pads = pad_locations(geom, 0.9);
  const QuadFormSlope a = build_A(pads, 0.2);
  PadSet shifted = pads;
  for (auto& p : shifted.pad_xy) {
    p.x += 12.25;
    p.y += -3.5;
  }
  const QuadFormSlope b = build_A(shifted, 0.2);
  CHECK((a.A - b.A).cwiseAbs().maxCoeff() < 1e-9 * a.A.cwiseAbs().maxCoeff());
}

TEST_CASE("slope form is PSD and scales quadratically with the pad coordinates") {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const PadSet pads = random_pads(rng);
    const QuadFormSlope qf = build_A(pads, 0.15);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(qf.A);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-9 * qf.A.trace());

    const double lambda = 1.7;
    PadSet scaled = pads;
    for (auto& p : scaled.pad_xy) {
      p.x *= lambda;
      p.y *= lambda;
    }
    const QuadFormSlope qs = build_A(scaled, 0.15);
    CHECK((qs.A - lambda * lambda * qf.A).cwiseAbs().maxCoeff() <
          1e-9 * qs.A.cwiseAbs().maxCoeff());
    CHECK(scaled.c() == doctest::Approx(lambda * lambda * pads.c()).epsilon(1e-12));
  }
}

TEST_CASE("roughness form matches the direct plane-distance expansion") {
  // The keystone identity: with Z = [z1 z2 z3 zp] and the landing plane
  // through the three pads, Z^T B Z = (a x1p + b y1p + c (zp - z1))^2
  // - rbar^2 (a^2 + b^2).
  Rng rng(202);
  const double rbar = 0.3;
  for (int trial = 0; trial < 20; ++trial) {
    const PadSet pads = random_pads(rng);
    const Point2 gp{rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)};
    const QuadFormRoughness qf = build_B(pads, gp, rbar);
    for (int k = 0; k < 5; ++k) {
      const Eigen::Vector4d z(rng.normal(), rng.normal(), rng.normal(), rng.normal());
      const Eigen::Vector3d n = plane_normal(pads, z.head<3>());
      const double x1p = gp.x - pads.pad_xy[0].x;
      const double y1p = gp.y - pads.pad_xy[0].y;
      const double lhs = n(0) * x1p + n(1) * y1p + n(2) * (z(3) - z(0));
      const double want = lhs * lhs - rbar * rbar * (n(0) * n(0) + n(1) * n(1));
      const double got = z.dot(qf.B * z);
      CHECK(std::abs(got - want) <= 1e-10 * std::max(1.0, std::abs(want)));
    }
  }
}

TEST_CASE("at the first pad the roughness form collapses to the elevation gap") {
  Rng rng(303);
  const double rbar = 0.25;
  for (int trial = 0; trial < 5; ++trial) {
    const PadSet pads = random_pads(rng);
    const QuadFormRoughness qf = build_B(pads, pads.pad_xy[0], rbar);
    const Eigen::Vector3d zpads(rng.normal(), rng.normal(), rng.normal());
    const Eigen::Vector3d n = plane_normal(pads, zpads);
    const double c = pads.c();

    Eigen::Vector4d z;
    z << zpads, zpads(0);  // terrain meets the plane at the pad
    const double got = z.dot(qf.B * z);
    const double want = -rbar * rbar * (n(0) * n(0) + n(1) * n(1));
    CHECK(got == doctest::Approx(want).epsilon(1e-10));
    CHECK(got <= qf.tau_r);

    z(3) = zpads(0) + 0.7;  // raise the terrain above the plane
    const double lifted = z.dot(qf.B * z);
    CHECK(lifted == doctest::Approx(c * c * 0.49 + want).epsilon(1e-9));
  }
}

TEST_CASE("roughness form corner entry equals c squared") {
  Rng rng(404);
  for (int trial = 0; trial < 10; ++trial) {
    const PadSet pads = random_pads(rng);
    const Point2 gp{rng.uniform(-4.0, 4.0), rng.uniform(-4.0, 4.0)};
    const QuadFormRoughness qf = build_B(pads, gp, 0.3);
    const double c = pads.c();
    CHECK(qf.B(3, 3) == doctest::Approx(c * c).epsilon(1e-12));
    CHECK(qf.tau_r == doctest::Approx(0.09 * c * c).epsilon(1e-12));
  }
}

TEST_CASE("roughness form is exactly symmetric") {
  Rng rng(505);
  for (int trial = 0; trial < 10; ++trial) {
    const PadSet pads = random_pads(rng);
    const Point2 gp{rng.uniform(-4.0, 4.0), rng.uniform(-4.0, 4.0)};
    const QuadFormRoughness qf = build_B(pads, gp, 0.3);
    CHECK(qf.B == qf.B.transpose());
  }
}

TEST_CASE("collinear pads are rejected by both form builders") {
  PadSet pads;
  pads.pad_xy = {{0.0, 0.0}, {1.0, 1.0}, {2.0, 2.0}};
  CHECK_THROWS_AS(build_A(pads, 0.17), parameter_error);
  CHECK_THROWS_AS(build_B(pads, {0.5, 0.5}, 0.3), parameter_error);
}

TEST_CASE("pad triples enumerate the contact choices") {
  const auto three = pad_triples(3);
  REQUIRE(three.size() == 1);
  CHECK(three[0].contact == std::array<int, 3>{0, 1, 2});
  CHECK(three[0].other == -1);

  const auto four = pad_triples(4);
  REQUIRE(four.size() == 4);
  std::vector<int> others;
  for (const auto& t : four) {
    others.push_back(t.other);
    for (int pad : t.contact) CHECK(pad != t.other);
  }
  std::sort(others.begin(), others.end());
  CHECK(others == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("convex hull utilities agree on containment") {
  std::vector<Point2> square{{0.0, 0.0}, {4.0, 0.0}, {4.0, 4.0}, {0.0, 4.0}};
  const auto hull = convex_hull(square);
  REQUIRE(hull.size() == 4);
  CHECK(point_in_hull({2.0, 2.0}, hull, 1e-9));
  CHECK(point_in_hull({0.0, 0.0}, hull, 1e-9));
  CHECK(!point_in_hull({4.5, 2.0}, hull, 1e-9));
  CHECK(disk_in_hull({2.0, 2.0}, 1.9, hull, 1e-9));
  CHECK(!disk_in_hull({2.0, 2.0}, 2.1, hull, 1e-9));
}

TEST_CASE("geometry validation rejects malformed landers") {
  LanderGeometry geom;
  geom.n_pads = 5;
  CHECK_THROWS_AS(geom.validate(), parameter_error);
  geom.n_pads = 3;
  geom.pad_radius = -1.0;
  CHECK_THROWS_AS(geom.validate(), parameter_error);
  geom.pad_radius = 5.0;
  geom.footprint_radius = 1.0;  // smaller than the pad circle
  CHECK_THROWS_AS(geom.validate(), parameter_error);
}
