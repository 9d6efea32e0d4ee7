#pragma once

#include <string>

#include "grfhd/terrain.hpp"

namespace grfhd {

// Binary grid format "GRFHD1": a text header
//
//   GRFHD1
//   rows <int>
//   cols <int>
//   resolution <g17>
//   origin_x <g17>
//   origin_y <g17>
//   nodata -32768
//   data
//
// followed by rows*cols little-endian IEEE-754 float32 values, row-major.
// Nodata is stored as the sentinel -32768; NaN payload bytes are rejected.
// Paths ending in ".gz" read/write the gzip-compressed variant (with a
// zeroed timestamp, so outputs are byte-stable across runs).
void save_dem(const DemGrid& dem, const std::string& path);
DemGrid load_dem(const std::string& path);

// Point clouds are CSV ("x,y,z" header, 17 significant digits) plus a sidecar
// JSON metadata record at <path>.meta.json carrying noise_sigma.
void save_pcd(const PointCloud& pcd, const std::string& path);
PointCloud load_pcd(const std::string& path);

// Whole-file helpers; transparent gzip when the name ends in ".gz".
std::string read_file_maybe_gz(const std::string& path);
void write_file_maybe_gz(const std::string& path, const std::string& bytes);

}  // namespace grfhd
