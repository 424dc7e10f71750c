#include "ctxdepth/attention.hpp"

#include <cmath>

#include "ctxdepth/error.hpp"
#include "ctxdepth/random.hpp"

namespace ctxdepth {

namespace {

void check_embeddings(const Shape& key, const Shape& query) {
  const bool ranks_ok = (key.size() == 2 || key.size() == 3) && key.size() == query.size();
  if (!ranks_ok || key.back() != query.back() || (key.size() == 3 && key[0] != query[0])) {
    throw DimensionError("attention_logits: key " + shape_str(key) + " and query " + shape_str(query) +
                         " must be N x C with equal channel counts");
  }
}

}  // namespace

Tensor attention_logits(const Tensor& key, const Tensor& query) {
  check_embeddings(key.shape(), query.shape());
  Tensor logits = matmul(query, transpose(key));
  const double scale = 1.0 / std::sqrt(static_cast<double>(key.shape().back()));
  for (auto& v : logits.data()) v *= scale;
  return logits;
}

Var attention_logits(const Var& key, const Var& query) {
  check_embeddings(key.shape(), query.shape());
  const double scale = 1.0 / std::sqrt(static_cast<double>(key.shape().back()));
  return mul(matmul(query, transpose(key)), scale);
}

Tensor attention_weights(const Tensor& logits) { return softmax_rows(logits); }
Var attention_weights(const Var& logits) { return softmax_rows(logits); }

Tensor attend(const Tensor& weights, const Tensor& values) { return matmul(weights, values); }
Var attend(const Var& weights, const Var& values) { return matmul(weights, values); }

Tensor image_pool(const Tensor& x) {
  if (x.rank() != 3) throw DimensionError("image_pool: expected C x H x W, got " + shape_str(x.shape()));
  const Tensor pooled = global_avg_pool(x);
  Tensor out(x.shape());
  const std::size_t plane = x.dim(1) * x.dim(2);
  for (std::size_t c = 0; c < x.dim(0); ++c)
    for (std::size_t p = 0; p < plane; ++p) out[c * plane + p] = pooled[c];
  return out;
}

Var image_pool(const Var& x) {
  const auto& s = x.shape();
  return broadcast_spatial(global_avg_pool(x), s[s.size() - 2], s[s.size() - 1]);
}

std::vector<Parameter*> AttentionParams::parameters() {
  std::vector<Parameter*> ps{&embed_weight, &embed_gamma, &embed_beta, &value_weight};
  if (value_bn_relu) {
    ps.push_back(&value_gamma);
    ps.push_back(&value_beta);
  } else {
    ps.push_back(&value_bias);
  }
  return ps;
}

std::vector<BatchNormState*> AttentionParams::norm_states() {
  std::vector<BatchNormState*> s{&embed_bn};
  if (value_bn_relu) s.push_back(&value_bn);
  return s;
}

AttentionParams make_attention_params(std::size_t in_channels, std::size_t key_channels, std::size_t value_channels,
                                      std::uint64_t seed, bool value_bn_relu) {
  if (key_channels == 0 || value_channels == 0 || key_channels >= in_channels) {
    throw ParameterError("attention widths must satisfy 0 < C_K < C_in and C_V > 0");
  }
  Rng rng(seed);
  AttentionParams p;
  p.in_channels = in_channels;
  p.key_channels = key_channels;
  p.value_channels = value_channels;
  p.value_bn_relu = value_bn_relu;
  p.embed_weight = conv_weight("cam.embed.weight", key_channels, in_channels, 1, rng);
  p.embed_gamma = constant_param("cam.embed.bn.gamma", key_channels, 1.0);
  p.embed_beta = constant_param("cam.embed.bn.beta", key_channels, 0.0);
  p.value_weight = conv_weight("cam.value.weight", value_channels, in_channels, 1, rng);
  p.value_bias = constant_param("cam.value.bias", value_channels, 0.0);
  p.value_gamma = constant_param("cam.value.bn.gamma", value_channels, 1.0);
  p.value_beta = constant_param("cam.value.bn.beta", value_channels, 0.0);
  for (auto* q : p.parameters()) q->decoder = true;
  p.value_gamma.decoder = p.value_beta.decoder = p.value_bias.decoder = true;
  return p;
}

namespace {

// C x h x w (or B x C x h x w) -> N x C (or B x N x C).
Var to_rows(const Var& x) {
  const auto& s = x.shape();
  if (s.size() == 3) return transpose(reshape(x, {s[0], s[1] * s[2]}));
  return transpose(reshape(x, {s[0], s[1], s[2] * s[3]}));
}

// Inverse of to_rows for a map with the given spatial size.
Var from_rows(const Var& rows, const Shape& like, std::size_t channels) {
  const Var cols = transpose(rows);
  if (like.size() == 3) return reshape(cols, {channels, like[1], like[2]});
  return reshape(cols, {like[0], channels, like[2], like[3]});
}

}  // namespace

CamOutput cam_forward(const Var& x, AttentionParams& params, Mode mode, bool image_pooling) {
  const Shape& s = x.shape();
  if (s.size() != 3 && s.size() != 4) throw DimensionError("cam_forward: expected a feature map, got " + shape_str(s));
  const std::size_t c_in = s[s.size() - 3];
  if (c_in != params.in_channels) {
    throw DimensionError("cam_forward: input has " + std::to_string(c_in) + " channels, module expects " +
                         std::to_string(params.in_channels));
  }
  Tape& tape = *x.tape();

  // Shared key/query embedding.
  Var embed = conv2d(x, tape.param(params.embed_weight));
  embed = relu(batch_norm(embed, tape.param(params.embed_gamma), tape.param(params.embed_beta), params.embed_bn, mode));
  const Var key = to_rows(embed);
  const Var query = key;

  Var value = conv2d(x, tape.param(params.value_weight));
  if (params.value_bn_relu) {
    value = relu(batch_norm(value, tape.param(params.value_gamma), tape.param(params.value_beta), params.value_bn, mode));
  } else {
    value = add_channel_bias(value, tape.param(params.value_bias));
  }

  const Var weights = attention_weights(attention_logits(key, query));
  const Var context = from_rows(attend(weights, to_rows(value)), s, params.value_channels);

  Var pooled = image_pool(x);
  if (!image_pooling) pooled = mul(pooled, 0.0);
  return {concat_channels(context, pooled), weights};
}

}  // namespace ctxdepth
