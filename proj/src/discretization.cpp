#include "ctxdepth/discretization.hpp"

#include <algorithm>
#include <cmath>

#include "ctxdepth/error.hpp"

namespace ctxdepth {

double DepthDiscretization::log_step() const {
  return (std::log(d_max) - std::log(d_min)) / static_cast<double>(bins);
}

double DepthDiscretization::midpoint(long label) const {
  const long top = static_cast<long>(bins) - 1;
  const auto l = static_cast<std::size_t>(std::clamp(label, 0L, top));
  return 0.5 * (edges[l] + edges[l + 1]);
}

DepthDiscretization build_discretization(double d_min, double d_max, std::size_t bins) {
  if (!(d_min > 0.0) || !(d_max > d_min) || !std::isfinite(d_max)) {
    throw ParameterError("discretization requires 0 < d_min < d_max, got d_min=" + std::to_string(d_min) +
                         " d_max=" + std::to_string(d_max));
  }
  if (bins < 2) throw ParameterError("discretization requires at least 2 bins, got " + std::to_string(bins));
  DepthDiscretization disc{d_min, d_max, bins, {}};
  const double lo = std::log(d_min);
  const double step = (std::log(d_max) - lo) / static_cast<double>(bins);
  disc.edges.resize(bins + 1);
  for (std::size_t k = 0; k <= bins; ++k) disc.edges[k] = std::exp(lo + step * static_cast<double>(k));
  disc.edges.front() = d_min;
  disc.edges.back() = d_max;
  return disc;
}

std::size_t quantize_depth(double depth, const DepthDiscretization& disc) {
  if (!(depth > 0.0)) throw DomainError("quantize_depth: non-positive depth " + std::to_string(depth));
  const double rel = (std::log(depth) - std::log(disc.d_min)) / (std::log(disc.d_max) - std::log(disc.d_min));
  const double l = std::floor(rel * static_cast<double>(disc.bins));
  const double top = static_cast<double>(disc.bins - 1);
  return static_cast<std::size_t>(std::clamp(l, 0.0, top));
}

std::vector<double> ordinal_encode(std::size_t label, std::size_t bins) {
  if (label > bins) {
    throw ParameterError("ordinal_encode: label " + std::to_string(label) + " outside [0, " + std::to_string(bins) +
                         "]");
  }
  std::vector<double> bits(bins, 0.0);
  std::fill_n(bits.begin(), label, 1.0);
  return bits;
}

OrdinalOutput make_ordinal_output(Tensor logits) {
  if (logits.rank() != 2 || logits.dim(1) % 2 != 0) {
    throw DimensionError("ordinal output must be N x 2K, got " + shape_str(logits.shape()));
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1) / 2;
  Tensor probs({n, k});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t b = 0; b < k; ++b) {
      const double z = logits.at(i, 2 * b + 1) - logits.at(i, 2 * b);
      probs.at(i, b) = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    }
  return {std::move(logits), std::move(probs)};
}

OrdinalOutput ordinal_output_from_probs(Tensor probs) {
  if (probs.rank() != 2) throw DimensionError("ordinal probabilities must be N x K, got " + shape_str(probs.shape()));
  for (double p : probs.data()) {
    if (!(p >= 0.0 && p <= 1.0)) throw ParameterError("ordinal probability outside [0, 1]: " + std::to_string(p));
  }
  return {Tensor(), std::move(probs)};
}

namespace {

void check_bins(const OrdinalOutput& out, const DepthDiscretization& disc) {
  if (out.probs.rank() != 2 || out.bins() != disc.bins) {
    throw DimensionError("ordinal output " + shape_str(out.probs.shape()) + " does not match " +
                         std::to_string(disc.bins) + " bins");
  }
}

}  // namespace

InferenceResult hard_infer(const OrdinalOutput& out, const DepthDiscretization& disc) {
  check_bins(out, disc);
  const std::size_t n = out.pixels(), k = out.bins();
  InferenceResult r;
  r.label.resize(n);
  r.mass.resize(n);
  r.fraction.assign(n, 0.0);
  r.depth.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t l = 0;
    for (std::size_t b = 0; b < k; ++b) l += out.probs.at(i, b) >= 0.5 ? 1 : 0;
    r.label[i] = l;
    r.mass[i] = static_cast<double>(l);
    r.depth[i] = disc.midpoint(static_cast<long>(l));
  }
  return r;
}

InferenceResult soft_infer(const OrdinalOutput& out, const DepthDiscretization& disc) {
  check_bins(out, disc);
  const std::size_t n = out.pixels(), k = out.bins();
  InferenceResult r;
  r.label.resize(n);
  r.mass.resize(n);
  r.fraction.resize(n);
  r.depth.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t b = 0; b < k; ++b) s += out.probs.at(i, b);
    s = std::clamp(s, 0.0, static_cast<double>(k));
    const double fl = std::floor(s);
    const auto l = static_cast<long>(fl);
    const double frac = s - fl;
    r.label[i] = static_cast<std::size_t>(l);
    r.mass[i] = s;
    r.fraction[i] = frac;
    const double d = disc.midpoint(l) * (1.0 - frac) + disc.midpoint(l + 1) * frac;
    r.depth[i] = std::clamp(d, disc.d_min, disc.d_max);
  }
  return r;
}

namespace {

void check_class_rows(const Tensor& classprobs, const DepthDiscretization& disc) {
  if (classprobs.rank() != 2 || classprobs.dim(1) != disc.bins) {
    throw DimensionError("class probabilities " + shape_str(classprobs.shape()) + " do not match " +
                         std::to_string(disc.bins) + " bins");
  }
  for (std::size_t i = 0; i < classprobs.dim(0); ++i) {
    double s = 0.0;
    for (std::size_t b = 0; b < disc.bins; ++b) s += classprobs.at(i, b);
    if (std::abs(s - 1.0) > 1e-6) {
      throw ContractError("class probability row " + std::to_string(i) + " sums to " + std::to_string(s));
    }
  }
}

}  // namespace

std::vector<double> ce_soft_infer(const Tensor& classprobs, const DepthDiscretization& disc) {
  check_class_rows(classprobs, disc);
  std::vector<double> depth(classprobs.dim(0));
  for (std::size_t i = 0; i < depth.size(); ++i) {
    double d = 0.0;
    for (std::size_t b = 0; b < disc.bins; ++b) d += classprobs.at(i, b) * disc.midpoint(static_cast<long>(b));
    depth[i] = d;
  }
  return depth;
}

std::vector<std::size_t> ce_labels(const Tensor& classprobs) {
  if (classprobs.rank() != 2) throw DimensionError("class probabilities must be N x K");
  std::vector<std::size_t> labels(classprobs.dim(0));
  const std::size_t k = classprobs.dim(1);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double* row = classprobs.data().data() + i * k;
    labels[i] = static_cast<std::size_t>(std::max_element(row, row + k) - row);
  }
  return labels;
}

std::vector<double> ce_hard_infer(const Tensor& classprobs, const DepthDiscretization& disc) {
  check_class_rows(classprobs, disc);
  const auto labels = ce_labels(classprobs);
  std::vector<double> depth(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) depth[i] = disc.midpoint(static_cast<long>(labels[i]));
  return depth;
}

}  // namespace ctxdepth
