#include "grfhd/grid_io.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace grfhd {

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw format_error("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw format_error("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw format_error("short write to '" + path + "'");
}

// Gzip with a zeroed mtime so the compressed bytes are reproducible.
std::string gzip_compress(const std::string& bytes) {
  z_stream zs{};
  if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 15 + 16, 8,
                   Z_DEFAULT_STRATEGY) != Z_OK)
    throw format_error("deflateInit2 failed");
  gz_header head{};
  head.time = 0;
  head.os = 255;
  deflateSetHeader(&zs, &head);

  std::string out;
  out.resize(deflateBound(&zs, static_cast<uLong>(bytes.size())));
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(bytes.data()));
  zs.avail_in = static_cast<uInt>(bytes.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&zs, Z_FINISH);
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw format_error("gzip compression failed");
  out.resize(zs.total_out);
  return out;
}

std::string gzip_decompress(const std::string& bytes) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 32) != Z_OK) throw format_error("inflateInit2 failed");
  std::string out;
  out.resize(std::max<std::size_t>(bytes.size() * 4, 1 << 16));
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(bytes.data()));
  zs.avail_in = static_cast<uInt>(bytes.size());
  std::size_t written = 0;
  for (;;) {
    zs.next_out = reinterpret_cast<Bytef*>(out.data() + written);
    zs.avail_out = static_cast<uInt>(out.size() - written);
    const int rc = inflate(&zs, Z_NO_FLUSH);
    written = zs.total_out;
    if (rc == Z_STREAM_END) break;
    if (rc != Z_OK && rc != Z_BUF_ERROR) {
      inflateEnd(&zs);
      throw format_error("gzip payload is corrupt");
    }
    if (written == out.size()) out.resize(out.size() * 2);
    if (rc == Z_BUF_ERROR && zs.avail_in == 0 && written < out.size()) {
      inflateEnd(&zs);
      throw format_error("gzip payload is truncated");
    }
  }
  inflateEnd(&zs);
  out.resize(written);
  return out;
}

std::string fmt_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Sequential header reader; errors carry the 1-based line number.
class HeaderReader {
 public:
  explicit HeaderReader(std::string text) : in_(std::move(text)) {}

  std::string line() {
    std::string line;
    if (!std::getline(in_, line))
      throw format_error("grid header truncated at line " + std::to_string(line_no_ + 1));
    ++line_no_;
    return line;
  }

  std::string field(const std::string& key) {
    const std::string l = line();
    if (l.compare(0, key.size() + 1, key + " ") != 0)
      throw format_error("grid header line " + std::to_string(line_no_) + ": expected '" +
                         key + " <value>', got '" + l + "'");
    return l.substr(key.size() + 1);
  }

  int line_no() const { return line_no_; }

 private:
  std::istringstream in_;
  int line_no_ = 0;
};

}  // namespace

std::string read_file_maybe_gz(const std::string& path) {
  std::string bytes = read_file(path);
  if (ends_with(path, ".gz")) return gzip_decompress(bytes);
  return bytes;
}

void write_file_maybe_gz(const std::string& path, const std::string& bytes) {
  if (ends_with(path, ".gz"))
    write_file(path, gzip_compress(bytes));
  else
    write_file(path, bytes);
}

void save_dem(const DemGrid& dem, const std::string& path) {
  dem.validate();
  std::string out;
  out += "GRFHD1\n";
  out += "rows " + std::to_string(dem.grid.rows) + "\n";
  out += "cols " + std::to_string(dem.grid.cols) + "\n";
  out += "resolution " + fmt_g17(dem.grid.resolution) + "\n";
  out += "origin_x " + fmt_g17(dem.grid.origin_x) + "\n";
  out += "origin_y " + fmt_g17(dem.grid.origin_y) + "\n";
  out += "nodata -32768\n";
  out += "data\n";
  out.reserve(out.size() + dem.z.size() * sizeof(float));
  for (double v : dem.z) {
    const float f = is_nodata(v) ? kNodataSentinel : static_cast<float>(v);
    char raw[sizeof(float)];
    std::memcpy(raw, &f, sizeof(float));  // little-endian host assumed
    out.append(raw, sizeof(float));
  }
  write_file_maybe_gz(path, out);
}

DemGrid load_dem(const std::string& path) {
  const std::string bytes = read_file_maybe_gz(path);
  const std::size_t header_end = bytes.find("data\n");
  if (header_end == std::string::npos)
    throw format_error("'" + path + "': missing 'data' marker in grid header");
  HeaderReader head(bytes.substr(0, header_end));

  if (head.line() != "GRFHD1")
    throw format_error("'" + path + "': bad magic on line 1, expected GRFHD1");
  GridSpec spec;
  try {
    spec.rows = std::stoi(head.field("rows"));
    spec.cols = std::stoi(head.field("cols"));
    spec.resolution = std::stod(head.field("resolution"));
    spec.origin_x = std::stod(head.field("origin_x"));
    spec.origin_y = std::stod(head.field("origin_y"));
  } catch (const std::invalid_argument&) {
    throw format_error("'" + path + "': unparsable numeric field on line " +
                       std::to_string(head.line_no()));
  }
  const std::string nodata_line = head.line();
  if (nodata_line != "nodata -32768")
    throw format_error("'" + path + "': unsupported nodata declaration '" + nodata_line + "'");
  try {
    spec.validate();
  } catch (const parameter_error& e) {
    throw format_error("'" + path + "': " + e.what());
  }

  const std::size_t payload_off = header_end + 5;
  const std::size_t have = bytes.size() - payload_off;
  const std::size_t want = spec.size() * sizeof(float);
  if (have != want)
    throw format_error("'" + path + "': header declares " + std::to_string(spec.rows) + "x" +
                       std::to_string(spec.cols) + " (" + std::to_string(spec.size()) +
                       " values) but payload holds " + std::to_string(have / sizeof(float)) +
                       " at byte offset " + std::to_string(payload_off));

  DemGrid dem(spec);
  for (std::size_t i = 0; i < spec.size(); ++i) {
    float f;
    std::memcpy(&f, bytes.data() + payload_off + i * sizeof(float), sizeof(float));
    if (std::isnan(f))
      throw format_error("'" + path + "': NaN in payload at value " + std::to_string(i) +
                         "; nodata must use the sentinel");
    dem.z[i] = f == kNodataSentinel ? nodata() : static_cast<double>(f);
  }
  try {
    dem.validate();
  } catch (const parameter_error& e) {
    throw format_error("'" + path + "': " + e.what());
  }
  return dem;
}

void save_pcd(const PointCloud& pcd, const std::string& path) {
  std::string out = "x,y,z\n";
  char buf[160];
  for (std::size_t i = 0; i < pcd.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", pcd.x[i], pcd.y[i], pcd.z[i]);
    out += buf;
  }
  write_file_maybe_gz(path, out);

  nlohmann::json meta;
  meta["format"] = "grfhd-pcd-meta";
  meta["version"] = 1;
  meta["noise_sigma"] = pcd.noise_sigma;
  meta["n_points"] = pcd.size();
  write_file(path + ".meta.json", meta.dump(2) + "\n");
}

PointCloud load_pcd(const std::string& path) {
  const std::string bytes = read_file_maybe_gz(path);
  std::istringstream in(bytes);
  std::string line;
  if (!std::getline(in, line) || line != "x,y,z")
    throw format_error("'" + path + "': first line must be the header 'x,y,z'");

  std::vector<double> xs, ys, zs;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    double vals[3];
    std::size_t pos = 0;
    for (int f = 0; f < 3; ++f) {
      const std::size_t comma = f < 2 ? line.find(',', pos) : line.size();
      if (comma == std::string::npos)
        throw format_error("'" + path + "': row " + std::to_string(row) +
                           " has fewer than 3 fields");
      const std::string field = line.substr(pos, comma - pos);
      std::size_t used = 0;
      try {
        vals[f] = std::stod(field, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != field.size() || field.empty())
        throw format_error("'" + path + "': row " + std::to_string(row) +
                           ": cannot parse field " + std::to_string(f + 1) + " '" + field + "'");
      pos = comma + 1;
    }
    xs.push_back(vals[0]);
    ys.push_back(vals[1]);
    zs.push_back(vals[2]);
  }

  const std::string meta_path = path + ".meta.json";
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(meta_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw format_error("'" + meta_path + "': invalid JSON: " + e.what());
  }
  if (!meta.contains("noise_sigma") || !meta["noise_sigma"].is_number())
    throw format_error("'" + meta_path + "': missing numeric 'noise_sigma'");

  try {
    return PointCloud(std::move(xs), std::move(ys), std::move(zs),
                      meta["noise_sigma"].get<double>());
  } catch (const parameter_error& e) {
    throw format_error("'" + path + "': " + e.what());
  }
}

}  // namespace grfhd
