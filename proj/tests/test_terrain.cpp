#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "grfhd/errors.hpp"
#include "grfhd/grid_io.hpp"
#include "grfhd/render.hpp"
#include "grfhd/terrain.hpp"

using namespace grfhd;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  const fs::path dir = fs::temp_directory_path() / "grfhd_test_terrain";
  fs::create_directories(dir);
  return dir;
}

double mean_abs_adjacent_diff(const DemGrid& dem) {
  double sum = 0.0;
  long n = 0;
  for (int r = 0; r < dem.grid.rows; ++r)
    for (int c = 0; c + 1 < dem.grid.cols; ++c) {
      sum += std::abs(dem.at(r, c + 1) - dem.at(r, c));
      ++n;
    }
  for (int r = 0; r + 1 < dem.grid.rows; ++r)
    for (int c = 0; c < dem.grid.cols; ++c) {
      sum += std::abs(dem.at(r + 1, c) - dem.at(r, c));
      ++n;
    }
  return sum / n;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("zero amplitude gives a perfectly flat grid") {
  const DemGrid dem = generate_fractal_terrain(7, 32, 32, 1.0, 0.5, 0.0);
  for (double v : dem.z) CHECK(v == 0.0);
}

TEST_CASE("terrain generation is bit-identical for a repeated seed") {
  const DemGrid a = generate_fractal_terrain(7, 32, 32, 1.0, 0.8, 0.4);
  const DemGrid b = generate_fractal_terrain(7, 32, 32, 1.0, 0.8, 0.4);
  REQUIRE(a.z.size() == b.z.size());
  CHECK(std::memcmp(a.z.data(), b.z.data(), a.z.size() * sizeof(double)) == 0);
}

TEST_CASE("distinct seeds give distinct grids") {
  const DemGrid a = generate_fractal_terrain(7, 32, 32, 1.0, 0.8, 0.4);
  const DemGrid b = generate_fractal_terrain(8, 32, 32, 1.0, 0.8, 0.4);
  CHECK(std::memcmp(a.z.data(), b.z.data(), a.z.size() * sizeof(double)) != 0);
}

TEST_CASE("higher hurst exponent gives a smoother surface") {
  const DemGrid smooth = generate_fractal_terrain(7, 64, 64, 1.0, 0.8, 1.0);
  const DemGrid rough = generate_fractal_terrain(7, 64, 64, 1.0, 0.2, 1.0);
  CHECK(mean_abs_adjacent_diff(smooth) < mean_abs_adjacent_diff(rough));
}

TEST_CASE("rocks only raise the surface") {
  const DemGrid bare = generate_fractal_terrain(7, 32, 32, 1.0, 0.8, 0.2);
  RockSpec rocks;
  rocks.count = 5;
  rocks.height_min = 0.3;
  rocks.height_max = 0.5;
  rocks.radius_min = 0.8;
  rocks.radius_max = 1.5;
  const DemGrid rocky = generate_fractal_terrain(7, 32, 32, 1.0, 0.8, 0.2, rocks);
  double max_lift = 0.0;
  for (std::size_t i = 0; i < bare.z.size(); ++i) {
    CHECK(rocky.z[i] >= bare.z[i] - 1e-12);
    max_lift = std::max(max_lift, rocky.z[i] - bare.z[i]);
  }
  CHECK(max_lift >= 0.3 - 1e-6);
}

TEST_CASE("invalid generator parameters are rejected") {
  CHECK_THROWS_AS(generate_fractal_terrain(1, 1, 32, 1.0, 0.5, 0.1), parameter_error);
  CHECK_THROWS_AS(generate_fractal_terrain(1, 32, 32, 0.0, 0.5, 0.1), parameter_error);
  CHECK_THROWS_AS(generate_fractal_terrain(1, 32, 32, 1.0, 0.0, 0.1), parameter_error);
  CHECK_THROWS_AS(generate_fractal_terrain(1, 32, 32, 1.0, 1.5, 0.1), parameter_error);
  CHECK_THROWS_AS(generate_fractal_terrain(1, 32, 32, 1.0, 0.5, -0.1), parameter_error);
}

TEST_CASE("lidar lattice arithmetic: 32x32 at 1 m, gsd 2 gives 256 points") {
  const DemGrid dem = generate_fractal_terrain(7, 32, 32, 1.0, 0.8, 0.3);
  const PointCloud pcd = simulate_lidar(dem, 2.0, 0.0, 11);
  CHECK(pcd.size() == 256);
}

TEST_CASE("noiseless flat terrain samples to exact zeros") {
  const DemGrid dem(GridSpec{24, 24, 1.0, 0.0, 0.0}, 0.0);
  const PointCloud pcd = simulate_lidar(dem, 1.5, 0.0, 11);
  for (double v : pcd.z) CHECK(v == 0.0);
  CHECK(pcd.noise_sigma == 0.0);
}

TEST_CASE("integer-multiple gsd without noise returns exact cell values") {
  const DemGrid dem = generate_fractal_terrain(3, 30, 30, 1.0, 0.7, 0.4);
  const PointCloud pcd = simulate_lidar(dem, 3.0, 0.0, 11);
  for (std::size_t i = 0; i < pcd.size(); ++i) {
    const int c = static_cast<int>(std::lround(pcd.x[i]));
    const int r = static_cast<int>(std::lround(pcd.y[i]));
    CHECK(pcd.z[i] == dem.at(r, c));
  }
}

TEST_CASE("hole fraction drops points and zero keeps them all") {
  const DemGrid dem = generate_fractal_terrain(3, 32, 32, 1.0, 0.7, 0.4);
  const PointCloud full = simulate_lidar(dem, 2.0, 0.0, 11, 0.0);
  const PointCloud holed = simulate_lidar(dem, 2.0, 0.0, 11, 0.4);
  CHECK(full.size() == 256);
  CHECK(holed.size() < full.size());
  CHECK(holed.size() > 0);
}

TEST_CASE("gsd below the grid resolution is rejected") {
  const DemGrid dem = generate_fractal_terrain(3, 16, 16, 1.0, 0.7, 0.4);
  CHECK_THROWS_AS(simulate_lidar(dem, 0.5, 0.0, 11), parameter_error);
}

TEST_CASE("point clouds reject duplicate horizontal coordinates") {
  CHECK_THROWS_AS(PointCloud({0.0, 1.0, 0.0}, {0.0, 1.0, 0.0}, {1.0, 2.0, 3.0}, 0.0),
                  parameter_error);
}

TEST_CASE("upsampling a constant lattice reproduces the constant") {
  std::vector<double> xs, ys, zs;
  for (int j = 0; j < 5; ++j)
    for (int i = 0; i < 5; ++i) {
      xs.push_back(2.0 * i);
      ys.push_back(2.0 * j);
      zs.push_back(3.5);
    }
  const PointCloud pcd(xs, ys, zs, 0.0);
  const DemGrid out = bilinear_upsample(pcd, GridSpec{9, 9, 1.0, 0.0, 0.0});
  for (double v : out.z) {
    REQUIRE(!is_nodata(v));
    CHECK(v == doctest::Approx(3.5).epsilon(1e-12));
  }
}

TEST_CASE("bilinear midpoint of a linear segment is the average") {
  // Two lattice columns two meters apart, z rising 0 to 1 along x.
  std::vector<double> xs{0.0, 2.0, 0.0, 2.0}, ys{0.0, 0.0, 2.0, 2.0}, zs{0.0, 1.0, 0.0, 1.0};
  const PointCloud pcd(xs, ys, zs, 0.0);
  const DemGrid out = bilinear_upsample(pcd, GridSpec{3, 3, 1.0, 0.0, 0.0});
  CHECK(out.at(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(out.at(1, 1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("bilinear cell-center value of a 2x2 lattice") {
  std::vector<double> xs{0.0, 2.0, 0.0, 2.0}, ys{0.0, 0.0, 2.0, 2.0}, zs{0.0, 1.0, 1.0, 2.0};
  const PointCloud pcd(xs, ys, zs, 0.0);
  const DemGrid out = bilinear_upsample(pcd, GridSpec{3, 3, 1.0, 0.0, 0.0});
  CHECK(out.at(1, 1) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("upsampling is exact on affine surfaces") {
  std::vector<double> xs, ys, zs;
  const double alpha = 0.12, beta = -0.07, delta = 1.9;
  for (int j = 0; j < 11; ++j)
    for (int i = 0; i < 11; ++i) {
      const double x = 2.0 * i, y = 2.0 * j;
      xs.push_back(x);
      ys.push_back(y);
      zs.push_back(alpha * x + beta * y + delta);
    }
  const PointCloud pcd(xs, ys, zs, 0.0);
  const GridSpec target{21, 21, 1.0, 0.0, 0.0};
  const DemGrid out = bilinear_upsample(pcd, target);
  for (int r = 0; r < target.rows; ++r)
    for (int c = 0; c < target.cols; ++c) {
      const double want = alpha * target.x_of(c) + beta * target.y_of(r) + delta;
      REQUIRE(!is_nodata(out.at(r, c)));
      CHECK(std::abs(out.at(r, c) - want) < 1e-9);
    }
}

TEST_CASE("upsampling fills lattice holes from the nearest available node") {
  std::vector<double> xs, ys, zs;
  for (int j = 0; j < 4; ++j)
    for (int i = 0; i < 4; ++i) {
      if (i == 1 && j == 1) continue;  // the hole
      xs.push_back(2.0 * i);
      ys.push_back(2.0 * j);
      zs.push_back(1.0);
    }
  const PointCloud pcd(xs, ys, zs, 0.0);
  const DemGrid out = bilinear_upsample(pcd, GridSpec{7, 7, 1.0, 0.0, 0.0});
  for (double v : out.z) {
    REQUIRE(!is_nodata(v));
    CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("cells outside the lattice hull are nodata") {
  std::vector<double> xs{0.0, 2.0, 0.0, 2.0}, ys{0.0, 0.0, 2.0, 2.0}, zs{0.0, 0.0, 0.0, 0.0};
  const PointCloud pcd(xs, ys, zs, 0.0);
  const DemGrid out = bilinear_upsample(pcd, GridSpec{5, 5, 1.0, 0.0, 0.0});
  CHECK(!is_nodata(out.at(0, 0)));
  CHECK(!is_nodata(out.at(2, 2)));
  CHECK(is_nodata(out.at(4, 4)));
  CHECK(is_nodata(out.at(0, 4)));
}

TEST_CASE("non-lattice point clouds are rejected by the upsampler") {
  std::vector<double> xs{0.0, 1.3, 2.9, 0.4}, ys{0.0, 0.7, 1.9, 2.8}, zs{0.0, 0.0, 0.0, 0.0};
  const PointCloud pcd(xs, ys, zs, 0.0);
  CHECK_THROWS_AS(bilinear_upsample(pcd, GridSpec{4, 4, 1.0, 0.0, 0.0}), format_error);
}

TEST_CASE("grid files round-trip field by field") {
  const fs::path dir = scratch_dir();
  const DemGrid dem = generate_fractal_terrain(5, 20, 24, 0.5, 0.8, 0.3);
  for (const char* name : {"roundtrip.grid", "roundtrip.grid.gz"}) {
    const std::string path = (dir / name).string();
    save_dem(dem, path);
    const DemGrid back = load_dem(path);
    REQUIRE(back.grid.same_as(dem.grid));
    for (std::size_t i = 0; i < dem.z.size(); ++i) CHECK(back.z[i] == dem.z[i]);
  }
}

TEST_CASE("nodata cells survive the grid round-trip") {
  DemGrid dem(GridSpec{4, 4, 1.0, 0.0, 0.0}, 1.25);
  dem.at(1, 2) = nodata();
  const std::string path = (scratch_dir() / "nodata.grid").string();
  save_dem(dem, path);
  const DemGrid back = load_dem(path);
  CHECK(is_nodata(back.at(1, 2)));
  CHECK(back.at(0, 0) == 1.25);
}

TEST_CASE("truncated grid payload is a format error naming the count") {
  const fs::path dir = scratch_dir();
  const DemGrid dem = generate_fractal_terrain(5, 32, 32, 1.0, 0.8, 0.3);
  const std::string path = (dir / "trunc.grid").string();
  save_dem(dem, path);
  std::string bytes = slurp(path);
  bytes.resize(bytes.size() - sizeof(float));  // drop one value: 1023 remain
  std::ofstream(path, std::ios::binary).write(bytes.data(), bytes.size());
  try {
    load_dem(path);
    FAIL("expected a format error");
  } catch (const format_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("1024") != std::string::npos);
    CHECK(msg.find("1023") != std::string::npos);
  }
}

TEST_CASE("bad grid magic is a format error") {
  const std::string path = (scratch_dir() / "magic.grid").string();
  std::ofstream(path, std::ios::binary) << "NOTAGRID\nrows 2\n";
  CHECK_THROWS_AS(load_dem(path), format_error);
}

TEST_CASE("point-cloud files round-trip through csv") {
  const fs::path dir = scratch_dir();
  const DemGrid dem = generate_fractal_terrain(5, 16, 16, 1.0, 0.8, 0.3);
  const PointCloud pcd = simulate_lidar(dem, 2.0, 0.01, 13);
  for (const char* name : {"cloud.csv", "cloud.csv.gz"}) {
    const std::string path = (dir / name).string();
    save_pcd(pcd, path);
    const PointCloud back = load_pcd(path);
    REQUIRE(back.size() == pcd.size());
    CHECK(back.noise_sigma == pcd.noise_sigma);
    for (std::size_t i = 0; i < pcd.size(); ++i) {
      CHECK(back.x[i] == pcd.x[i]);
      CHECK(back.y[i] == pcd.y[i]);
      CHECK(back.z[i] == pcd.z[i]);
    }
  }
}

TEST_CASE("malformed csv field is a parse error naming the row") {
  const fs::path dir = scratch_dir();
  const std::string path = (dir / "bad.csv").string();
  std::ofstream(path) << "x,y,z\n0.0,0.0,1.0\n1.0,2.0,abc\n";
  try {
    load_pcd(path);
    FAIL("expected a format error");
  } catch (const format_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("row 3") != std::string::npos);
    CHECK(msg.find("abc") != std::string::npos);
  }
}

TEST_CASE("gzip helpers round-trip arbitrary bytes") {
  const std::string path = (scratch_dir() / "blob.bin.gz").string();
  std::string payload(4096, '\0');
  for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = static_cast<char>(i * 37 % 251);
  write_file_maybe_gz(path, payload);
  CHECK(read_file_maybe_gz(path) == payload);
}

TEST_CASE("gzip output bytes are identical across runs") {
  const fs::path dir = scratch_dir();
  const DemGrid dem = generate_fractal_terrain(5, 16, 16, 1.0, 0.8, 0.3);
  save_dem(dem, (dir / "a.grid.gz").string());
  save_dem(dem, (dir / "b.grid.gz").string());
  CHECK(slurp(dir / "a.grid.gz") == slurp(dir / "b.grid.gz"));
}

TEST_CASE("bilinear_at reproduces node values and interpolates between them") {
  DemGrid dem(GridSpec{3, 3, 2.0, 0.0, 0.0}, 0.0);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) dem.at(r, c) = r * 10.0 + c;
  CHECK(bilinear_at(dem, 2.0, 4.0) == 21.0);
  CHECK(bilinear_at(dem, 1.0, 0.0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(is_nodata(bilinear_at(dem, -0.5, 0.0)));
  CHECK(is_nodata(bilinear_at(dem, 0.0, 4.5)));
}

TEST_CASE("probability grids render on a fixed 0..1 scale with round-half-up") {
  const fs::path dir = scratch_dir();
  DemGrid map(GridSpec{2, 3, 1.0, 0.0, 0.0}, 0.5);
  map.at(0, 0) = 0.0;
  map.at(0, 1) = 1.0;
  map.at(1, 2) = nodata();
  const std::string out = (dir / "prob.pgm").string();
  render_pgm(map, out);

  const std::string bytes = slurp(out);
  const std::string header = "P5\n3 2\n255\n";
  REQUIRE(bytes.size() == header.size() + 6);
  CHECK(bytes.compare(0, header.size(), header) == 0);
  const auto* px = reinterpret_cast<const unsigned char*>(bytes.data() + header.size());
  CHECK(px[0] == 0);    // 0.0
  CHECK(px[1] == 255);  // 1.0
  CHECK(px[2] == 128);  // 0.5 rounds up
  CHECK(px[3] == 128);
  CHECK(px[4] == 128);
  CHECK(px[5] == 0);  // nodata renders black

  const auto meta = nlohmann::json::parse(slurp(out + ".meta.json"));
  CHECK(meta.at("scale_min").get<double>() == 0.0);
  CHECK(meta.at("scale_max").get<double>() == 1.0);
  CHECK(meta.at("nodata_pixels").get<int>() == 1);
}

TEST_CASE("elevation grids render min-max scaled") {
  const fs::path dir = scratch_dir();
  DemGrid dem(GridSpec{2, 2, 1.0, 0.0, 0.0}, 0.0);
  dem.at(0, 0) = -1.0;
  dem.at(0, 1) = 3.0;
  dem.at(1, 0) = 1.0;  // midpoint of [-1, 3]
  dem.at(1, 1) = 3.0;
  const std::string out = (dir / "elev.pgm").string();
  render_pgm(dem, out);
  const std::string bytes = slurp(out);
  const std::string header = "P5\n2 2\n255\n";
  const auto* px = reinterpret_cast<const unsigned char*>(bytes.data() + header.size());
  CHECK(px[0] == 0);
  CHECK(px[1] == 255);
  CHECK(px[2] == 128);
  CHECK(px[3] == 255);
  const auto meta = nlohmann::json::parse(slurp(out + ".meta.json"));
  CHECK(meta.at("scale_min").get<double>() == -1.0);
  CHECK(meta.at("scale_max").get<double>() == 3.0);
}
