#pragma once

#include <cstddef>
#include <unordered_map>
#include <vector>

#include "ctxdepth/tape.hpp"

namespace ctxdepth {

struct OptimizerConfig {
  double base_lr = 2e-4;
  double decoder_lr_multiplier = 10.0;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double poly_power = 0.9;

  void validate() const;
};

/// base_lr * (1 - step / max_steps)^power, clamped at 0 past the end.
double poly_lr(double base_lr, std::size_t step, std::size_t max_steps, double power);

/// SGD with momentum and a polynomial schedule. The decoder multiplier is
/// applied to the decayed rate.
struct OptimizerState {
  OptimizerConfig config;
  std::size_t step = 0;
  std::size_t max_steps = 1;
  std::unordered_map<const Parameter*, Tensor> velocity;

  OptimizerState() = default;
  OptimizerState(OptimizerConfig cfg, std::size_t total_steps);

  double lr() const { return poly_lr(config.base_lr, step, max_steps, config.poly_power); }
  double lr_for(const Parameter& p) const { return p.decoder ? lr() * config.decoder_lr_multiplier : lr(); }
};

/// v <- momentum * v + grad + wd * param; param <- param - lr_group * v, then
/// advances the step counter. Weight decay only touches parameters flagged
/// for it. Throws ContractError naming any parameter whose gradient is unset.
void sgd_step(const std::vector<Parameter*>& params, OptimizerState& state);

}  // namespace ctxdepth
