#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ctxdepth/ops.hpp"
#include "ctxdepth/tape.hpp"

namespace ctxdepth {

// Pixel-level self-attention with an image-pooling branch.
//
// Feature maps enter as C_in x h x w (or batched). Positions are flattened
// row-major, so row i of an attention map is pixel (i / w, i % w).

/// logit[i][j] = dot(query_i, key_j) / sqrt(C_K). Inputs are N x C (or
/// B x N x C); key and query widths must agree.
Tensor attention_logits(const Tensor& key, const Tensor& query);
Var attention_logits(const Var& key, const Var& query);

/// Row-wise softmax: row i is pixel i's distribution over all N positions.
Tensor attention_weights(const Tensor& logits);
Var attention_weights(const Var& logits);

/// c_i = sum_j w_ij v_j. W is N x N, V is N x C_V (or batched).
Tensor attend(const Tensor& weights, const Tensor& values);
Var attend(const Var& weights, const Var& values);

/// Global average pooling replicated back to the input's spatial size.
Var image_pool(const Var& x);
Tensor image_pool(const Tensor& x);

/// Parameters of the context aggregation module.
///
/// Key and query embeddings share one 1x1 conv + batch norm + ReLU; both
/// accessors return the same storage.
struct AttentionParams {
  std::size_t in_channels = 0;
  std::size_t key_channels = 0;
  std::size_t value_channels = 0;
  bool value_bn_relu = false;

  Parameter embed_weight;  // C_K x C_in x 1 x 1
  Parameter embed_gamma;
  Parameter embed_beta;
  BatchNormState embed_bn;

  Parameter value_weight;  // C_V x C_in x 1 x 1
  Parameter value_bias;    // used when !value_bn_relu
  Parameter value_gamma;   // used when value_bn_relu
  Parameter value_beta;
  BatchNormState value_bn;

  Parameter& key_weight() { return embed_weight; }
  Parameter& query_weight() { return embed_weight; }

  std::vector<Parameter*> parameters();
  std::vector<BatchNormState*> norm_states();
};

/// Allocates parameters with fan-in scaled uniform weights. C_K must be
/// smaller than C_in.
AttentionParams make_attention_params(std::size_t in_channels, std::size_t key_channels, std::size_t value_channels,
                                      std::uint64_t seed, bool value_bn_relu = false);

struct CamOutput {
  Var features;   // (C_V + C_in) x h x w, attended context then image context
  Var attention;  // N x N, or B x N x N for batched input
};

/// Runs both branches and concatenates them along channels. With
/// `image_pooling` false the pooled branch is a zero map of the same shape.
CamOutput cam_forward(const Var& x, AttentionParams& params, Mode mode, bool image_pooling = true);

}  // namespace ctxdepth
