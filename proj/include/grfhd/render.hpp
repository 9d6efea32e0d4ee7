#pragma once

#include <string>

#include "grfhd/terrain.hpp"

namespace grfhd {

// Writes an 8-bit binary PGM of the grid plus a <path>.meta.json sidecar
// recording the value range that was mapped onto 0..255.
//
// Values already inside [0, 1] (probability maps) use the fixed scale
// [0, 1]; anything else is min-max scaled. Nodata renders as 0. Mapping is
// round-half-up: a pixel at exactly 0.5 of the scale becomes byte 128.
void render_pgm(const DemGrid& dem, const std::string& out_path);

}  // namespace grfhd
