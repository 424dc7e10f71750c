#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ctxdepth/attention.hpp"
#include "ctxdepth/ops.hpp"
#include "ctxdepth/tape.hpp"

namespace ctxdepth {

enum class LossKind { kOrdinal, kCrossEntropy };

/// Encoder stage: 3x3 conv (stride, dilation) + batch norm + ReLU, optionally
/// followed by 2x2 average pooling.
struct StageSpec {
  std::size_t channels = 0;
  std::size_t stride = 1;
  std::size_t dilation = 1;
  bool pool = false;
};

struct NetworkConfig {
  std::vector<StageSpec> stages = {{16, 2, 1, true}, {32, 2, 1, false}, {64, 1, 2, false}, {64, 1, 4, false}};
  std::size_t key_channels = 16;
  std::size_t value_channels = 32;
  std::size_t bins = 16;
  std::size_t height = 48;
  std::size_t width = 48;
  LossKind head = LossKind::kOrdinal;
  bool image_pooling = true;
  bool value_bn_relu = false;

  std::size_t output_stride() const;
  /// 2K for the ordinal head, K for the cross-entropy head.
  std::size_t head_channels() const;
  std::size_t grid_height() const { return height / output_stride(); }
  std::size_t grid_width() const { return width / output_stride(); }
  /// Throws ParameterError on an inconsistent config and ConfigError-style
  /// ParameterError when the input is not divisible by the output stride.
  void validate() const;
};

/// Encoder, context aggregation module and 1x1 classifier.
class Network {
 public:
  struct Output {
    Var logits;     // (B * N) x head_channels, pixel rows in batch-major order
    Var attention;  // B x N x N
    std::size_t batch = 0;
    std::size_t grid_height = 0;
    std::size_t grid_width = 0;
  };

  /// Fan-in scaled uniform init, batch-norm scale 1 and shift 0.
  Network(NetworkConfig config, std::uint64_t seed);

  /// `rgb` is B x 3 x H x W (or 3 x H x W).
  Output forward(Tape& tape, const Tensor& rgb, Mode mode);

  std::vector<Parameter*> parameters();
  std::vector<std::pair<std::string, BatchNormState*>> norm_states();
  std::size_t parameter_count() const;
  const NetworkConfig& config() const { return config_; }

  /// Checkpoint layout (little-endian):
  ///   "ACKP" | u32 version | u32 json_len | JSON header | u32 count |
  ///   count x (u32 name_len | name | ACTN tensor record)
  /// The JSON header holds {"network": NetworkConfig, "extra": ...}.
  void save(const std::string& path, const std::string& extra_json = "{}") const;
  /// Restores parameters and running statistics into this network. Throws
  /// LoadError when names or shapes disagree with this network's config.
  void load_weights(const std::string& path);
  static Network load(const std::string& path);
  /// The "extra" JSON stored with a checkpoint.
  static std::string read_extra(const std::string& path);

 private:
  struct Stage {
    StageSpec spec;
    Parameter weight;
    Parameter gamma;
    Parameter beta;
    BatchNormState bn;
  };

  NetworkConfig config_;
  std::vector<Stage> stages_;
  AttentionParams cam_;
  Parameter head_weight_;
  Parameter head_bias_;
};

/// Log-space block average of a depth map onto a grid `factor` times
/// smaller, over valid pixels. Cells with no valid pixel are invalid.
std::pair<std::vector<double>, Mask> downsample_log_depth(std::span<const double> depth, const Mask& valid,
                                                          std::size_t height, std::size_t width, std::size_t factor);

}  // namespace ctxdepth
