#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ctxdepth/tensor.hpp"

namespace ctxdepth {

/// Parameters of the synthetic piecewise-smooth scene generator.
struct SceneConfig {
  std::size_t height = 48;
  std::size_t width = 48;
  double d_min = 0.5;
  double d_max = 10.0;
  std::size_t min_objects = 2;
  std::size_t max_objects = 6;
  /// Amplitude of the depth-uncorrelated stripe texture added to RGB.
  double texture_amplitude = 0.15;
  double texture_period_min = 2.0;
  double texture_period_max = 5.0;
  /// Upper bound on log_jump_fraction at a threshold of one bin of a
  /// `smoothness_bins`-way log split of [d_min, d_max].
  double max_jump_fraction = 0.05;
  std::size_t smoothness_bins = 16;

  void validate() const;
};

/// One RGB-D sample. RGB is stored channel-major (3 x H x W) in [0, 1].
struct SceneSample {
  std::size_t height = 0;
  std::size_t width = 0;
  Tensor rgb;
  std::vector<double> depth;  // H*W metres, row-major
  Mask valid;                 // H*W
  std::uint64_t seed = 0;
  SceneConfig config;

  std::size_t pixels() const { return height * width; }
};

/// Deterministic per (seed, cfg). Throws ParameterError for degenerate configs.
SceneSample generate_scene(std::uint64_t seed, const SceneConfig& cfg = {});

enum class SparsePattern { kRows, kRandom };

/// Invalidates pixels so that roughly `keep_fraction` remain. kRows keeps
/// ceil(fraction * H) evenly spaced scanlines; kRandom keeps
/// round(fraction * H * W) pixels chosen by `seed`. The result is intersected
/// with the existing mask.
SceneSample sparsify_mask(const SceneSample& sample, double keep_fraction, SparsePattern pattern,
                          std::uint64_t seed = 0);

/// Mirrors RGB, depth and mask left-right.
SceneSample flip_horizontal(const SceneSample& sample);

/// Fraction of pixels with a 4-neighbour differing by more than
/// `log_threshold` in log depth (both pixels valid).
double log_jump_fraction(const SceneSample& sample, double log_threshold);

}  // namespace ctxdepth
