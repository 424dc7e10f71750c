#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctxdepth/discretization.hpp"
#include "ctxdepth/scene.hpp"
#include "ctxdepth/tensor.hpp"

namespace ctxdepth {

// Binary PNM files.
//
//   RGB    P6, maxval 255, one byte per channel.
//   Depth  P5, maxval 65535, 16-bit big-endian samples. Sample 0 marks an
//          invalid pixel; q in [1, 65535] decodes linearly to
//          d_lo + (q - 1) * (d_hi - d_lo) / 65534. The range lives in a JSON
//          sidecar at "<pgm path>.json":
//            {"format": "depth16", "d_lo": ..., "d_hi": ..., "invalid_value": 0}
//   Gray16 P5, maxval 65535, no sidecar (visualisations).

/// 3 x H x W in [0, 1].
void write_ppm(const std::string& path, const Tensor& rgb);
Tensor read_ppm(const std::string& path);

/// Raw 16-bit grayscale image.
struct Gray16 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint16_t> pixels;
};

void write_pgm16(const std::string& path, const Gray16& image);
/// Throws ParseError(kFormat) unless maxval is 65535.
Gray16 read_pgm16(const std::string& path);

struct DepthMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> depth;
  Mask valid;
  double d_lo = 0.0;
  double d_hi = 0.0;

  /// Largest decode error for depths inside [d_lo, d_hi].
  double quantization_step() const { return (d_hi - d_lo) / 65534.0; }
};

std::string depth_sidecar_path(const std::string& pgm_path);

/// Writes the PGM and its sidecar. Valid depths are clamped into [d_lo, d_hi].
void write_depth(const std::string& pgm_path, const DepthMap& map);
DepthMap read_depth(const std::string& pgm_path);

/// Writes "<dir>/<stem>.ppm" and "<dir>/<stem>.depth.pgm" (+ sidecar) using
/// the sample's configured depth range. Returns {rgb path, depth path}.
std::pair<std::string, std::string> write_sample(const std::string& dir, const std::string& stem,
                                                 const SceneSample& sample);
SceneSample read_sample(const std::string& rgb_path, const std::string& depth_path);

// Dataset manifest (JSON):
//   {"version": 1,
//    "discretization": {"d_min": .., "d_max": .., "K": ..},
//    "samples": [{"rgb": "...", "depth": "...", "split": "train|val|test"}, ...]}
// Relative paths resolve against the manifest's directory.

struct ManifestEntry {
  std::string rgb;
  std::string depth;
  std::string split;
};

struct DatasetManifest {
  std::vector<ManifestEntry> samples;
  double d_min = 0.5;
  double d_max = 10.0;
  std::size_t bins = 16;

  std::vector<ManifestEntry> split(const std::string& name) const;
};

void save_manifest(const std::string& path, const DatasetManifest& manifest);
/// Resolves paths, checks they exist and that no file appears in two splits.
DatasetManifest load_manifest(const std::string& path);

}  // namespace ctxdepth
