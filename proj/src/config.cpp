#include "ctxdepth/config.hpp"

#include "ctxdepth/error.hpp"

namespace ctxdepth {

using nlohmann::json;

void to_json(json& j, const StageSpec& s) {
  j = {{"channels", s.channels}, {"stride", s.stride}, {"dilation", s.dilation}, {"pool", s.pool}};
}

void from_json(const json& j, StageSpec& s) {
  s.channels = j.value("channels", s.channels);
  s.stride = j.value("stride", s.stride);
  s.dilation = j.value("dilation", s.dilation);
  s.pool = j.value("pool", s.pool);
}

void to_json(json& j, const NetworkConfig& c) {
  j = {{"stages", c.stages},
       {"key_channels", c.key_channels},
       {"value_channels", c.value_channels},
       {"bins", c.bins},
       {"height", c.height},
       {"width", c.width},
       {"head", c.head == LossKind::kOrdinal ? "ordinal" : "ce"},
       {"image_pooling", c.image_pooling},
       {"value_bn_relu", c.value_bn_relu}};
}

void from_json(const json& j, NetworkConfig& c) {
  if (j.contains("stages")) c.stages = j.at("stages").get<std::vector<StageSpec>>();
  c.key_channels = j.value("key_channels", c.key_channels);
  c.value_channels = j.value("value_channels", c.value_channels);
  c.bins = j.value("bins", c.bins);
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  if (j.contains("head")) {
    const auto h = j.at("head").get<std::string>();
    if (h != "ordinal" && h != "ce") throw ParameterError("network head must be 'ordinal' or 'ce', got " + h);
    c.head = h == "ordinal" ? LossKind::kOrdinal : LossKind::kCrossEntropy;
  }
  c.image_pooling = j.value("image_pooling", c.image_pooling);
  c.value_bn_relu = j.value("value_bn_relu", c.value_bn_relu);
}

void to_json(json& j, const LossWeights& w) { j = {{"alpha_att", w.attention}, {"alpha_ord", w.ordinal}}; }

void from_json(const json& j, LossWeights& w) {
  w.attention = j.value("alpha_att", w.attention);
  w.ordinal = j.value("alpha_ord", w.ordinal);
}

void to_json(json& j, const SceneConfig& c) {
  j = {{"height", c.height},
       {"width", c.width},
       {"d_min", c.d_min},
       {"d_max", c.d_max},
       {"min_objects", c.min_objects},
       {"max_objects", c.max_objects},
       {"texture_amplitude", c.texture_amplitude},
       {"texture_period_min", c.texture_period_min},
       {"texture_period_max", c.texture_period_max},
       {"max_jump_fraction", c.max_jump_fraction},
       {"smoothness_bins", c.smoothness_bins}};
}

void from_json(const json& j, SceneConfig& c) {
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.d_min = j.value("d_min", c.d_min);
  c.d_max = j.value("d_max", c.d_max);
  c.min_objects = j.value("min_objects", c.min_objects);
  c.max_objects = j.value("max_objects", c.max_objects);
  c.texture_amplitude = j.value("texture_amplitude", c.texture_amplitude);
  c.texture_period_min = j.value("texture_period_min", c.texture_period_min);
  c.texture_period_max = j.value("texture_period_max", c.texture_period_max);
  c.max_jump_fraction = j.value("max_jump_fraction", c.max_jump_fraction);
  c.smoothness_bins = j.value("smoothness_bins", c.smoothness_bins);
}

void to_json(json& j, const MetricReport& r) {
  j = {{"delta1", r.delta1},     {"delta2", r.delta2},   {"delta3", r.delta3}, {"rmse", r.rmse},
       {"rmse_log", r.rmse_log}, {"abs_rel", r.abs_rel}, {"sq_rel", r.sq_rel}, {"n_valid", r.n_valid}};
}

json discretization_json(const DepthDiscretization& d) { return {{"d_min", d.d_min}, {"d_max", d.d_max}, {"K", d.bins}}; }

DepthDiscretization discretization_from_json(const json& j) {
  return build_discretization(j.at("d_min").get<double>(), j.at("d_max").get<double>(), j.at("K").get<std::size_t>());
}

}  // namespace ctxdepth
