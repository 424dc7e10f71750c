#include "ctxdepth/optimizer.hpp"

#include <cmath>

#include "ctxdepth/error.hpp"

namespace ctxdepth {

void OptimizerConfig::validate() const {
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw ParameterError("base_lr must be positive");
  if (!(decoder_lr_multiplier > 0.0)) throw ParameterError("decoder_lr_multiplier must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ParameterError("weight_decay must be non-negative");
  if (!(poly_power > 0.0)) throw ParameterError("poly_power must be positive");
}

double poly_lr(double base_lr, std::size_t step, std::size_t max_steps, double power) {
  if (max_steps == 0) throw ParameterError("max_steps must be positive");
  if (step >= max_steps) return 0.0;
  const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(max_steps);
  return base_lr * std::pow(frac, power);
}

OptimizerState::OptimizerState(OptimizerConfig cfg, std::size_t total_steps) : config(cfg), max_steps(total_steps) {
  config.validate();
  if (total_steps == 0) throw ParameterError("max_steps must be positive");
}

void sgd_step(const std::vector<Parameter*>& params, OptimizerState& state) {
  for (const auto* p : params) {
    if (p->grad.shape() != p->value.shape()) throw ContractError("missing gradient for parameter '" + p->name + "'");
  }
  const double m = state.config.momentum;
  for (auto* p : params) {
    auto& v = state.velocity[p];
    if (v.shape() != p->value.shape()) v = Tensor(p->value.shape());
    const double wd = p->weight_decay ? state.config.weight_decay : 0.0;
    const double lr = state.lr_for(*p);
    auto val = p->value.data();
    auto g = p->grad.data();
    auto vel = v.data();
    for (std::size_t i = 0; i < val.size(); ++i) {
      vel[i] = m * vel[i] + g[i] + wd * val[i];
      val[i] -= lr * vel[i];
    }
  }
  ++state.step;
}

}  // namespace ctxdepth
