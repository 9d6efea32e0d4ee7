#include "grfhd/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "grfhd/errors.hpp"
#include "grfhd/grid_io.hpp"

namespace grfhd {

void render_pgm(const DemGrid& dem, const std::string& out_path) {
  dem.validate();

  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  long nodata = 0;
  for (const double v : dem.z) {
    if (std::isnan(v)) {
      ++nodata;
      continue;
    }
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }

  std::string note;
  if (nodata == static_cast<long>(dem.z.size())) {
    lo = 0.0;
    hi = 1.0;
    note = "all pixels are nodata";
  } else if (lo >= 0.0 && hi <= 1.0) {
    lo = 0.0;
    hi = 1.0;
    note = "probability scale";
  } else if (hi - lo < 1e-300) {
    hi = lo + 1.0;
    note = "constant field";
  } else {
    note = "min-max scale";
  }

  std::ostringstream out;
  out << "P5\n" << dem.grid.cols << " " << dem.grid.rows << "\n255\n";
  const double span = hi - lo;
  for (const double v : dem.z) {
    unsigned char byte = 0;
    if (!std::isnan(v)) {
      const double t = std::clamp((v - lo) / span, 0.0, 1.0);
      byte = static_cast<unsigned char>(std::floor(t * 255.0 + 0.5));
    }
    out.put(static_cast<char>(byte));
  }
  write_file_maybe_gz(out_path, out.str());

  nlohmann::json meta;
  meta["format"] = "grfhd-render-meta";
  meta["version"] = 1;
  meta["scale_min"] = lo;
  meta["scale_max"] = hi;
  meta["nodata_pixels"] = nodata;
  meta["note"] = note;
  write_file_maybe_gz(out_path + ".meta.json", meta.dump(2) + "\n");
}

}  // namespace grfhd
