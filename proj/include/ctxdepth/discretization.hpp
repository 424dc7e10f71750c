#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ctxdepth/tensor.hpp"

namespace ctxdepth {

/// Log-spaced depth bins: K bins bounded by K+1 edges, edges[0] == d_min and
/// edges[K] == d_max.
struct DepthDiscretization {
  double d_min = 0.0;
  double d_max = 0.0;
  std::size_t bins = 0;
  std::vector<double> edges;

  /// Width of one bin in log space.
  double log_step() const;
  /// Centre of bin `label` in linear space, (t^l + t^{l+1}) / 2. Clamps the
  /// label into [0, K-1].
  double midpoint(long label) const;
};

inline constexpr std::size_t kDefaultBins = 80;

DepthDiscretization build_discretization(double d_min, double d_max, std::size_t bins = kDefaultBins);

/// Bin label of a ground-truth depth; out-of-range depths clamp to the end
/// bins. Throws DomainError for depth <= 0.
std::size_t quantize_depth(double depth, const DepthDiscretization& disc);

/// Binary "label > k" targets. `label` may equal K (all ones).
std::vector<double> ordinal_encode(std::size_t label, std::size_t bins);

/// Network output for N pixels: logits (N x 2K, pair (2k, 2k+1) per bin) and
/// the derived probabilities P(l > k) (N x K).
struct OrdinalOutput {
  Tensor logits;
  Tensor probs;

  std::size_t pixels() const { return probs.dim(0); }
  std::size_t bins() const { return probs.dim(1); }
};

/// Derives P(l > k) = sigmoid(y_{2k+1} - y_{2k}) without overflow.
OrdinalOutput make_ordinal_output(Tensor logits);
/// Wraps externally supplied probabilities (no logits).
OrdinalOutput ordinal_output_from_probs(Tensor probs);

struct InferenceResult {
  std::vector<std::size_t> label;
  std::vector<double> mass;      // s_i, area under the probability curve
  std::vector<double> fraction;  // D_i in [0, 1)
  std::vector<double> depth;     // metres
};

/// Threshold inference: l = #{k : P_k >= 0.5}, depth = midpoint(l).
InferenceResult hard_infer(const OrdinalOutput& out, const DepthDiscretization& disc);

/// Soft ordinal inference: interpolates between midpoint(l) and
/// midpoint(l+1) with weight D = s - floor(s), s = sum_k P_k.
InferenceResult soft_infer(const OrdinalOutput& out, const DepthDiscretization& disc);

/// Expected midpoint under a K-way class distribution (rows must sum to 1).
std::vector<double> ce_soft_infer(const Tensor& classprobs, const DepthDiscretization& disc);
/// Midpoint of the arg-max class.
std::vector<double> ce_hard_infer(const Tensor& classprobs, const DepthDiscretization& disc);
/// Arg-max class per row.
std::vector<std::size_t> ce_labels(const Tensor& classprobs);

}  // namespace ctxdepth
