#include "ctxdepth/image_io.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "ctxdepth/error.hpp"

namespace ctxdepth {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct PnmHeader {
  std::string magic;
  std::size_t width = 0, height = 0, maxval = 0;
};

[[noreturn]] void malformed(const std::string& path, const std::string& why) {
  throw ParseError(ParseError::Kind::kMalformedHeader, path + ": malformed PNM header (" + why + ")");
}

// Reads one header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& is, const std::string& path) {
  std::string tok;
  int c = is.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = is.get();
    } else if (std::isspace(c)) {
      c = is.get();
    } else {
      break;
    }
  }
  while (c != EOF && !std::isspace(c) && c != '#') {
    tok.push_back(static_cast<char>(c));
    c = is.get();
  }
  if (tok.empty()) malformed(path, "unexpected end of header");
  // The single whitespace byte after maxval has been consumed by get().
  if (c == '#') is.unget();
  return tok;
}

std::size_t parse_dim(const std::string& tok, const std::string& path, const char* what) {
  if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos) malformed(path, what);
  const auto v = std::stoull(tok);
  if (v == 0 || v > (1u << 20)) malformed(path, what);
  return static_cast<std::size_t>(v);
}

PnmHeader read_header(std::istream& is, const std::string& path) {
  PnmHeader h;
  h.magic = next_token(is, path);
  if (h.magic != "P5" && h.magic != "P6") malformed(path, "unsupported magic '" + h.magic + "'");
  h.width = parse_dim(next_token(is, path), path, "width");
  h.height = parse_dim(next_token(is, path), path, "height");
  h.maxval = parse_dim(next_token(is, path), path, "maxval");
  if (h.maxval > 65535) malformed(path, "maxval");
  return h;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError(ParseError::Kind::kIo, "cannot open " + path);
  return is;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ParseError(ParseError::Kind::kIo, "cannot open " + path + " for writing");
  return os;
}

std::vector<unsigned char> read_payload(std::istream& is, std::size_t bytes, const std::string& path) {
  std::vector<unsigned char> buf(bytes);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(is.gcount()) != bytes) {
    throw ParseError(ParseError::Kind::kTruncatedPayload, path + ": expected " + std::to_string(bytes) +
                                                              " payload bytes, got " + std::to_string(is.gcount()));
  }
  return buf;
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) throw DimensionError("write_ppm: expected 3 x H x W, got " + shape_str(rgb.shape()));
  const std::size_t h = rgb.dim(1), w = rgb.dim(2);
  auto os = open_out(path);
  os << "P6\n" << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> buf(h * w * 3);
  for (std::size_t i = 0; i < h * w; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(rgb[c * h * w + i], 0.0, 1.0);
      buf[i * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

Tensor read_ppm(const std::string& path) {
  auto is = open_in(path);
  const auto hdr = read_header(is, path);
  if (hdr.magic != "P6") throw ParseError(ParseError::Kind::kFormat, path + ": expected P6 RGB image");
  if (hdr.maxval != 255) throw ParseError(ParseError::Kind::kFormat, path + ": RGB maxval must be 255");
  const auto buf = read_payload(is, hdr.width * hdr.height * 3, path);
  Tensor rgb({3, hdr.height, hdr.width});
  const std::size_t n = hdr.width * hdr.height;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c) rgb[c * n + i] = static_cast<double>(buf[i * 3 + c]) / 255.0;
  return rgb;
}

void write_pgm16(const std::string& path, const Gray16& image) {
  if (image.pixels.size() != image.height * image.width) throw DimensionError("write_pgm16: pixel count mismatch");
  auto os = open_out(path);
  os << "P5\n" << image.width << ' ' << image.height << "\n65535\n";
  std::vector<unsigned char> buf(image.pixels.size() * 2);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    buf[2 * i] = static_cast<unsigned char>(image.pixels[i] >> 8);
    buf[2 * i + 1] = static_cast<unsigned char>(image.pixels[i] & 0xFF);
  }
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

Gray16 read_pgm16(const std::string& path) {
  auto is = open_in(path);
  const auto hdr = read_header(is, path);
  if (hdr.magic != "P5") throw ParseError(ParseError::Kind::kFormat, path + ": expected P5 grayscale image");
  if (hdr.maxval != 65535) {
    throw ParseError(ParseError::Kind::kFormat, path + ": 16-bit depth requires maxval 65535, got " +
                                                   std::to_string(hdr.maxval));
  }
  const auto buf = read_payload(is, hdr.width * hdr.height * 2, path);
  Gray16 g{hdr.height, hdr.width, std::vector<std::uint16_t>(hdr.width * hdr.height)};
  for (std::size_t i = 0; i < g.pixels.size(); ++i) {
    g.pixels[i] = static_cast<std::uint16_t>((buf[2 * i] << 8) | buf[2 * i + 1]);
  }
  return g;
}

std::string depth_sidecar_path(const std::string& pgm_path) { return pgm_path + ".json"; }

void write_depth(const std::string& pgm_path, const DepthMap& map) {
  if (!(map.d_hi > map.d_lo)) throw ParameterError("write_depth: depth range must satisfy d_lo < d_hi");
  const std::size_t n = map.height * map.width;
  if (map.depth.size() != n || map.valid.size() != n) throw DimensionError("write_depth: size mismatch");
  Gray16 g{map.height, map.width, std::vector<std::uint16_t>(n, 0)};
  for (std::size_t i = 0; i < n; ++i) {
    if (!map.valid[i]) continue;
    const double t = (std::clamp(map.depth[i], map.d_lo, map.d_hi) - map.d_lo) / (map.d_hi - map.d_lo);
    g.pixels[i] = static_cast<std::uint16_t>(1 + std::lround(t * 65534.0));
  }
  write_pgm16(pgm_path, g);
  json side = {{"format", "depth16"}, {"d_lo", map.d_lo}, {"d_hi", map.d_hi}, {"invalid_value", 0}};
  auto os = open_out(depth_sidecar_path(pgm_path));
  os << side.dump(2) << '\n';
}

DepthMap read_depth(const std::string& pgm_path) {
  const auto side_path = depth_sidecar_path(pgm_path);
  if (!fs::exists(side_path)) {
    throw ParseError(ParseError::Kind::kMissingSidecar, pgm_path + ": depth range sidecar " + side_path + " missing");
  }
  json side;
  try {
    std::ifstream is(side_path);
    side = json::parse(is);
  } catch (const json::exception& e) {
    throw ParseError(ParseError::Kind::kMalformedHeader, side_path + ": " + e.what());
  }
  if (side.value("format", "") != "depth16" || !side.contains("d_lo") || !side.contains("d_hi")) {
    throw ParseError(ParseError::Kind::kMalformedHeader, side_path + ": not a depth16 sidecar");
  }
  const Gray16 g = read_pgm16(pgm_path);
  DepthMap m;
  m.height = g.height;
  m.width = g.width;
  m.d_lo = side["d_lo"].get<double>();
  m.d_hi = side["d_hi"].get<double>();
  m.depth.assign(g.pixels.size(), 0.0);
  m.valid.assign(g.pixels.size(), 0);
  for (std::size_t i = 0; i < g.pixels.size(); ++i) {
    if (g.pixels[i] == 0) continue;
    m.valid[i] = 1;
    m.depth[i] = m.d_lo + static_cast<double>(g.pixels[i] - 1) * (m.d_hi - m.d_lo) / 65534.0;
  }
  return m;
}

std::pair<std::string, std::string> write_sample(const std::string& dir, const std::string& stem,
                                                 const SceneSample& sample) {
  fs::create_directories(dir);
  const std::string rgb_path = (fs::path(dir) / (stem + ".ppm")).string();
  const std::string depth_path = (fs::path(dir) / (stem + ".depth.pgm")).string();
  write_ppm(rgb_path, sample.rgb);
  DepthMap m{sample.height, sample.width, sample.depth, sample.valid, sample.config.d_min, sample.config.d_max};
  write_depth(depth_path, m);
  return {rgb_path, depth_path};
}

SceneSample read_sample(const std::string& rgb_path, const std::string& depth_path) {
  SceneSample s;
  s.rgb = read_ppm(rgb_path);
  const DepthMap m = read_depth(depth_path);
  if (m.height != s.rgb.dim(1) || m.width != s.rgb.dim(2)) {
    throw ParseError(ParseError::Kind::kFormat, "RGB and depth sizes differ for " + rgb_path);
  }
  s.height = m.height;
  s.width = m.width;
  s.depth = m.depth;
  s.valid = m.valid;
  s.config.height = m.height;
  s.config.width = m.width;
  s.config.d_min = m.d_lo;
  s.config.d_max = m.d_hi;
  return s;
}

std::vector<ManifestEntry> DatasetManifest::split(const std::string& name) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : samples)
    if (e.split == name) out.push_back(e);
  return out;
}

void save_manifest(const std::string& path, const DatasetManifest& manifest) {
  json j;
  j["version"] = 1;
  j["discretization"] = {{"d_min", manifest.d_min}, {"d_max", manifest.d_max}, {"K", manifest.bins}};
  j["samples"] = json::array();
  const fs::path base = fs::path(path).parent_path();
  for (const auto& e : manifest.samples) {
    auto rel = [&](const std::string& p) {
      return base.empty() ? p : fs::relative(fs::absolute(p), fs::absolute(base)).string();
    };
    j["samples"].push_back({{"rgb", rel(e.rgb)}, {"depth", rel(e.depth)}, {"split", e.split}});
  }
  auto os = open_out(path);
  os << j.dump(2) << '\n';
}

DatasetManifest load_manifest(const std::string& path) {
  json j;
  try {
    auto is = open_in(path);
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ParseError(ParseError::Kind::kMalformedHeader, path + ": " + e.what());
  }
  DatasetManifest m;
  const fs::path base = fs::path(path).parent_path();
  try {
    const auto& d = j.at("discretization");
    m.d_min = d.at("d_min").get<double>();
    m.d_max = d.at("d_max").get<double>();
    m.bins = d.at("K").get<std::size_t>();
    std::map<std::string, std::string> owner;
    for (const auto& s : j.at("samples")) {
      ManifestEntry e;
      e.rgb = (base / s.at("rgb").get<std::string>()).string();
      e.depth = (base / s.at("depth").get<std::string>()).string();
      e.split = s.at("split").get<std::string>();
      if (e.split != "train" && e.split != "val" && e.split != "test") {
        throw ParseError(ParseError::Kind::kFormat, path + ": unknown split '" + e.split + "'");
      }
      for (const auto& p : {e.rgb, e.depth}) {
        if (!fs::exists(p)) throw ParseError(ParseError::Kind::kIo, path + ": missing sample file " + p);
        auto [it, fresh] = owner.emplace(fs::weakly_canonical(p).string(), e.split);
        if (!fresh && it->second != e.split) {
          throw ParseError(ParseError::Kind::kFormat, path + ": " + p + " appears in splits '" + it->second +
                                                          "' and '" + e.split + "'");
        }
      }
      m.samples.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw ParseError(ParseError::Kind::kMalformedHeader, path + ": " + e.what());
  }
  return m;
}

}  // namespace ctxdepth
