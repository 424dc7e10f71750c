#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "ctxdepth/tape.hpp"

namespace ctxdepth {

/// Seeded generator with distribution code written out explicitly so that
/// streams are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)); }
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

/// Conv kernel C_out x C_in x k x k, uniform with variance 2 / fan_in.
inline Parameter conv_weight(std::string name, std::size_t c_out, std::size_t c_in, std::size_t k, Rng& rng) {
  Parameter p;
  p.name = std::move(name);
  p.value = Tensor({c_out, c_in, k, k});
  const double bound = std::sqrt(6.0 / static_cast<double>(c_in * k * k));
  for (auto& v : p.value.data()) v = rng.uniform(-bound, bound);
  p.grad = Tensor(p.value.shape());
  p.weight_decay = true;
  return p;
}

inline Parameter constant_param(std::string name, std::size_t n, double value) {
  Parameter p;
  p.name = std::move(name);
  p.value = Tensor({n}, value);
  p.grad = Tensor({n});
  p.weight_decay = false;
  return p;
}

}  // namespace ctxdepth
