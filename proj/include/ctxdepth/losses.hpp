#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ctxdepth/discretization.hpp"
#include "ctxdepth/tape.hpp"
#include "ctxdepth/tensor.hpp"

namespace ctxdepth {

struct LossWeights {
  double attention = 0.1;
  double ordinal = 1.0;

  /// Throws ParameterError unless both are finite, non-negative and not both zero.
  void validate() const;
};

/// Lower clamp applied to predicted attention weights inside the KL log.
inline constexpr double kAttentionClamp = 1e-12;

/// Target attention from depth similarity:
///   w*_ij = softmax_j(ln d_max - |ln d_i - ln d_j|).
///
/// Columns whose `valid` flag is zero receive weight 0 (they carry no depth).
/// `valid` may be empty (all valid). Throws ParameterError if d_max does not
/// exceed every valid depth and DomainError for non-positive depths.
Tensor gt_attention_weights(std::span<const double> depths, double d_max, const Mask& valid = {});

/// Mean over valid rows of KL(w*_i || w_i). W and W* are N x N or B x N x N;
/// `valid_rows` has one entry per row (empty = all valid).
double attention_loss(const Tensor& weights, const Tensor& target, const Mask& valid_rows = {});
Var attention_loss(const Var& weights, const Tensor& target, const Mask& valid_rows = {});

/// Ordinal regression loss over N x 2K logits, averaged over valid pixels.
/// Evaluated in log space from the logits.
double ordinal_loss(const Tensor& logits, std::span<const std::size_t> labels, const Mask& valid = {});
Var ordinal_loss(const Var& logits, std::span<const std::size_t> labels, const Mask& valid = {});

/// Mean negative log-softmax of the true bin over valid pixels (N x K logits).
double cross_entropy_loss(const Tensor& logits, std::span<const std::size_t> labels, const Mask& valid = {});
Var cross_entropy_loss(const Var& logits, std::span<const std::size_t> labels, const Mask& valid = {});

double total_loss(double attention, double ordinal, const LossWeights& w);
Var total_loss(const Var& attention, const Var& ordinal, const LossWeights& w);

}  // namespace ctxdepth
