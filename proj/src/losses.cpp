#include "ctxdepth/losses.hpp"

#include <algorithm>
#include <cmath>

#include "ctxdepth/error.hpp"
#include "ctxdepth/ops.hpp"

namespace ctxdepth {

void LossWeights::validate() const {
  if (!std::isfinite(attention) || !std::isfinite(ordinal) || attention < 0.0 || ordinal < 0.0) {
    throw ParameterError("loss weights must be finite and non-negative");
  }
  if (attention == 0.0 && ordinal == 0.0) throw ParameterError("loss weights must not both be zero");
}

namespace {

bool is_valid(const Mask& m, std::size_t i) { return m.empty() || m[i] != 0; }

void check_mask(const Mask& m, std::size_t n, const char* what) {
  if (!m.empty() && m.size() != n) {
    throw DimensionError(std::string(what) + ": mask has " + std::to_string(m.size()) + " entries, expected " +
                         std::to_string(n));
  }
}

// log(1 + e^x) without overflow.
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor gt_attention_weights(std::span<const double> depths, double d_max, const Mask& valid) {
  const std::size_t n = depths.size();
  if (n == 0) throw DimensionError("gt_attention_weights: empty depth list");
  check_mask(valid, n, "gt_attention_weights");
  std::vector<double> logd(n, 0.0);
  double max_depth = 0.0;
  bool any_valid = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_valid(valid, i)) continue;
    if (!(depths[i] > 0.0)) throw DomainError("gt_attention_weights: non-positive depth at index " + std::to_string(i));
    logd[i] = std::log(depths[i]);
    max_depth = std::max(max_depth, depths[i]);
    any_valid = true;
  }
  if (any_valid && !(d_max > max_depth)) {
    throw ParameterError("gt_attention_weights: d_max " + std::to_string(d_max) + " must exceed max depth " +
                         std::to_string(max_depth));
  }
  const double log_dmax = std::log(d_max);
  Tensor w({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_valid(valid, i)) {
      // Rows without ground truth are ignored by the loss; keep them stochastic.
      for (std::size_t j = 0; j < n; ++j) w.at(i, j) = 1.0 / static_cast<double>(n);
      continue;
    }
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      if (is_valid(valid, j)) mx = std::max(mx, log_dmax - std::abs(logd[i] - logd[j]));
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = is_valid(valid, j) ? std::exp(log_dmax - std::abs(logd[i] - logd[j]) - mx) : 0.0;
      w.at(i, j) = e;
      z += e;
    }
    for (std::size_t j = 0; j < n; ++j) w.at(i, j) /= z;
  }
  return w;
}

namespace {

void check_attention_pair(const Tensor& w, const Tensor& target, const Mask& valid_rows) {
  if (w.shape() != target.shape() || w.rank() < 2 || w.shape().back() != w.shape()[w.rank() - 2]) {
    throw DimensionError("attention_loss: shapes " + shape_str(w.shape()) + " and " + shape_str(target.shape()) +
                         " must be matching square maps");
  }
  check_mask(valid_rows, w.size() / w.shape().back(), "attention_loss");
}

std::size_t count_valid(const Mask& m, std::size_t rows) {
  if (m.empty()) return rows;
  return static_cast<std::size_t>(std::count_if(m.begin(), m.end(), [](std::uint8_t v) { return v != 0; }));
}

}  // namespace

double attention_loss(const Tensor& weights, const Tensor& target, const Mask& valid_rows) {
  check_attention_pair(weights, target, valid_rows);
  const std::size_t n = weights.shape().back();
  const std::size_t rows = weights.size() / n;
  const std::size_t nv = count_valid(valid_rows, rows);
  if (nv == 0) return 0.0;
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!is_valid(valid_rows, r)) continue;
    for (std::size_t j = 0; j < n; ++j) {
      const double t = target[r * n + j];
      if (t <= 0.0) continue;
      total += t * (std::log(t) - std::log(std::max(weights[r * n + j], kAttentionClamp)));
    }
  }
  return total / static_cast<double>(nv);
}

Var attention_loss(const Var& weights, const Tensor& target, const Mask& valid_rows) {
  const Tensor w = weights.value();
  const double loss = attention_loss(w, target, valid_rows);
  const std::size_t n = w.shape().back();
  const std::size_t rows = w.size() / n;
  const std::size_t nv = count_valid(valid_rows, rows);
  return weights.tape()->record(Tensor::scalar(loss), {weights},
                                [weights, w, target, valid_rows, n, rows, nv](Tape& t, const Tensor& g) {
                                  Tensor gw(w.shape());
                                  if (nv > 0) {
                                    const double scale = g[0] / static_cast<double>(nv);
                                    for (std::size_t r = 0; r < rows; ++r) {
                                      if (!is_valid(valid_rows, r)) continue;
                                      for (std::size_t j = 0; j < n; ++j) {
                                        const std::size_t i = r * n + j;
                                        if (target[i] > 0.0 && w[i] > kAttentionClamp) gw[i] = -scale * target[i] / w[i];
                                      }
                                    }
                                  }
                                  t.accumulate(weights, gw);
                                });
}

namespace {

void check_labels(std::size_t rows, std::span<const std::size_t> labels, const Mask& valid, std::size_t bins,
                  const char* what) {
  if (labels.size() != rows) {
    throw DimensionError(std::string(what) + ": " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(rows) + " pixels");
  }
  check_mask(valid, rows, what);
  for (std::size_t i = 0; i < rows; ++i) {
    if (is_valid(valid, i) && labels[i] >= bins) {
      throw ParameterError(std::string(what) + ": label " + std::to_string(labels[i]) + " outside [0, " +
                           std::to_string(bins - 1) + "]");
    }
  }
}

void check_ordinal_logits(const Tensor& logits) {
  if (logits.rank() != 2 || logits.dim(1) % 2 != 0) {
    throw DimensionError("ordinal_loss: logits must be N x 2K, got " + shape_str(logits.shape()));
  }
}

}  // namespace

double ordinal_loss(const Tensor& logits, std::span<const std::size_t> labels, const Mask& valid) {
  check_ordinal_logits(logits);
  const std::size_t n = logits.dim(0), k = logits.dim(1) / 2;
  check_labels(n, labels, valid, k, "ordinal_loss");
  const std::size_t nv = count_valid(valid, n);
  if (nv == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_valid(valid, i)) continue;
    for (std::size_t b = 0; b < k; ++b) {
      // z = y_{2k+1} - y_{2k}; -ln P = softplus(-z), -ln(1-P) = softplus(z).
      const double z = logits.at(i, 2 * b + 1) - logits.at(i, 2 * b);
      total += b < labels[i] ? softplus(-z) : softplus(z);
    }
  }
  return total / static_cast<double>(nv);
}

Var ordinal_loss(const Var& logits, std::span<const std::size_t> labels, const Mask& valid) {
  const Tensor y = logits.value();
  const double loss = ordinal_loss(y, labels, valid);
  const std::size_t n = y.dim(0), k = y.dim(1) / 2;
  const std::size_t nv = count_valid(valid, n);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return logits.tape()->record(Tensor::scalar(loss), {logits}, [logits, y, lab, valid, n, k, nv](Tape& t,
                                                                                                const Tensor& g) {
    Tensor gy(y.shape());
    if (nv > 0) {
      const double scale = g[0] / static_cast<double>(nv);
      for (std::size_t i = 0; i < n; ++i) {
        if (!is_valid(valid, i)) continue;
        for (std::size_t b = 0; b < k; ++b) {
          const double p = sigmoid(y.at(i, 2 * b + 1) - y.at(i, 2 * b));
          const double target = b < lab[i] ? 1.0 : 0.0;
          const double dz = scale * (p - target);
          gy.at(i, 2 * b + 1) = dz;
          gy.at(i, 2 * b) = -dz;
        }
      }
    }
    t.accumulate(logits, gy);
  });
}

double cross_entropy_loss(const Tensor& logits, std::span<const std::size_t> labels, const Mask& valid) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy_loss: logits must be N x K");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  check_labels(n, labels, valid, k, "cross_entropy_loss");
  const std::size_t nv = count_valid(valid, n);
  if (nv == 0) return 0.0;
  const Tensor lsm = log_softmax_rows(logits);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (is_valid(valid, i)) total -= lsm.at(i, labels[i]);
  }
  return total / static_cast<double>(nv);
}

Var cross_entropy_loss(const Var& logits, std::span<const std::size_t> labels, const Mask& valid) {
  const Tensor y = logits.value();
  const double loss = cross_entropy_loss(y, labels, valid);
  const std::size_t n = y.dim(0), k = y.dim(1);
  const std::size_t nv = count_valid(valid, n);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return logits.tape()->record(Tensor::scalar(loss), {logits}, [logits, y, lab, valid, n, k, nv](Tape& t,
                                                                                                const Tensor& g) {
    Tensor gy(y.shape());
    if (nv > 0) {
      const Tensor p = softmax_rows(y);
      const double scale = g[0] / static_cast<double>(nv);
      for (std::size_t i = 0; i < n; ++i) {
        if (!is_valid(valid, i)) continue;
        for (std::size_t b = 0; b < k; ++b) gy.at(i, b) = scale * (p.at(i, b) - (b == lab[i] ? 1.0 : 0.0));
      }
    }
    t.accumulate(logits, gy);
  });
}

double total_loss(double attention, double ordinal, const LossWeights& w) {
  return w.attention * attention + w.ordinal * ordinal;
}

Var total_loss(const Var& attention, const Var& ordinal, const LossWeights& w) {
  return add(mul(attention, w.attention), mul(ordinal, w.ordinal));
}

}  // namespace ctxdepth
