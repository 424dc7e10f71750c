#pragma once

#include "ctxdepth/tape.hpp"
#include "ctxdepth/tensor.hpp"

namespace ctxdepth {

// Differentiable ops. Every Var overload records a node on the operands'
// tape; the Tensor overloads are plain forward evaluations.
//
// Feature maps are C x H x W or B x C x H x W. Matrices are m x n or
// B x m x n (batched).

// --- elementwise ------------------------------------------------------------
//
// Binary ops accept identical shapes, or `b` whose shape is a trailing suffix
// of `a`'s shape (broadcast over the leading axes of `a`).

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add(const Var& a, double c);
Var mul(const Var& a, double c);
Var exp(const Var& a);
/// Throws DomainError naming the first non-positive index.
Var log(const Var& a);
/// Subgradient 0 at 0.
Var relu(const Var& a);
Var abs(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);

Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);

// --- linear algebra ---------------------------------------------------------

/// m x k times k x n, or batched B x m x k times B x k x n.
Var matmul(const Var& a, const Var& b);
Tensor matmul(const Tensor& a, const Tensor& b);

/// Swaps the last two axes of a rank-2 or rank-3 tensor.
Var transpose(const Var& a);
Tensor transpose(const Tensor& a);

Var reshape(const Var& a, Shape shape);

/// Softmax over the last axis with per-row max subtraction.
Var softmax_rows(const Var& logits);
Tensor softmax_rows(const Tensor& logits);

Var log_softmax_rows(const Var& logits);
Tensor log_softmax_rows(const Tensor& logits);

// --- convolution and pooling ------------------------------------------------

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t dilation = 1;
};

/// Zero "same" padding of dilation*(k-1)/2 per side. Output spatial size is
/// ceil(H / stride) x ceil(W / stride). Kernel is C_out x C_in x k x k, k odd.
Var conv2d(const Var& input, const Var& kernel, Conv2dOptions opts = {});
Tensor conv2d(const Tensor& input, const Tensor& kernel, Conv2dOptions opts = {});

/// Adds a per-channel bias (length C) to a feature map.
Var add_channel_bias(const Var& input, const Var& bias);

/// 2x2 average pooling with stride 2; H and W must be even.
Var avg_pool2(const Var& input);

/// C x H x W -> C, or B x C x H x W -> B x C.
Var global_avg_pool(const Var& input);
Tensor global_avg_pool(const Tensor& input);

/// C -> C x H x W, or B x C -> B x C x H x W, by replication.
Var broadcast_spatial(const Var& v, std::size_t height, std::size_t width);

/// Concatenates feature maps along the channel axis.
Var concat_channels(const Var& a, const Var& b);

/// Bilinear resize of C x H x W (half-pixel centres, edge clamped).
Tensor upsample_bilinear(const Tensor& input, std::size_t out_h, std::size_t out_w);

// --- batch normalisation ----------------------------------------------------

enum class Mode { kTrain, kEval };

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  bool populated = false;
  double eps = 1e-5;
  double momentum = 0.1;
};

/// Per-channel normalisation over batch and spatial axes. Train mode uses
/// batch statistics and updates `state`; eval mode requires populated state.
Var batch_norm(const Var& input, const Var& gamma, const Var& beta, BatchNormState& state, Mode mode);

}  // namespace ctxdepth
