#pragma once

#include <json.hpp>

#include "ctxdepth/discretization.hpp"
#include "ctxdepth/losses.hpp"
#include "ctxdepth/metrics.hpp"
#include "ctxdepth/model.hpp"
#include "ctxdepth/scene.hpp"

namespace ctxdepth {

// JSON conversions. Missing keys keep their defaults.

void to_json(nlohmann::json& j, const StageSpec& s);
void from_json(const nlohmann::json& j, StageSpec& s);
void to_json(nlohmann::json& j, const NetworkConfig& c);
void from_json(const nlohmann::json& j, NetworkConfig& c);
void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);
void to_json(nlohmann::json& j, const SceneConfig& c);
void from_json(const nlohmann::json& j, SceneConfig& c);
void to_json(nlohmann::json& j, const MetricReport& r);

/// {"d_min": .., "d_max": .., "K": ..}
nlohmann::json discretization_json(const DepthDiscretization& d);
DepthDiscretization discretization_from_json(const nlohmann::json& j);

}  // namespace ctxdepth
