#include "ctxdepth/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "ctxdepth/error.hpp"

namespace ctxdepth {

std::string MetricReport::csv_header() { return "delta1,delta2,delta3,rmse,rmse_log,abs_rel,sq_rel,n_valid"; }

std::string MetricReport::csv_line() const {
  std::ostringstream os;
  os << std::setprecision(17) << delta1 << ',' << delta2 << ',' << delta3 << ',' << rmse << ',' << rmse_log << ','
     << abs_rel << ',' << sq_rel << ',' << n_valid;
  return os.str();
}

MetricReport evaluate(std::span<const double> pred, std::span<const double> gt, const Mask& valid) {
  if (pred.size() != gt.size() || (!valid.empty() && valid.size() != gt.size())) {
    throw DimensionError("evaluate: prediction, ground truth and mask sizes differ");
  }
  const double t1 = 1.25, t2 = 1.25 * 1.25, t3 = 1.25 * 1.25 * 1.25;
  std::size_t n = 0, c1 = 0, c2 = 0, c3 = 0;
  double se = 0.0, sle = 0.0, ar = 0.0, sr = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!valid.empty() && !valid[i]) continue;
    const double d = pred[i], g = gt[i];
    if (!(d > 0.0) || !(g > 0.0)) {
      throw DomainError("evaluate: non-positive depth at valid pixel " + std::to_string(i));
    }
    ++n;
    const double ratio = std::max(d / g, g / d);
    c1 += ratio < t1;
    c2 += ratio < t2;
    c3 += ratio < t3;
    const double diff = d - g;
    const double ldiff = std::log(d) - std::log(g);
    se += diff * diff;
    sle += ldiff * ldiff;
    ar += std::abs(diff) / g;
    sr += diff * diff / g;
  }
  if (n == 0) throw EvaluationError("evaluate: no valid pixels");
  const double nn = static_cast<double>(n);
  MetricReport r;
  r.delta1 = static_cast<double>(c1) / nn;
  r.delta2 = static_cast<double>(c2) / nn;
  r.delta3 = static_cast<double>(c3) / nn;
  r.rmse = std::sqrt(se / nn);
  r.rmse_log = std::sqrt(sle / nn);
  r.abs_rel = ar / nn;
  r.sq_rel = sr / nn;
  r.n_valid = n;
  return r;
}

Tensor confusion_matrix(std::span<const std::size_t> pred_labels, std::span<const std::size_t> gt_labels,
                        const Mask& valid, std::size_t bins) {
  if (pred_labels.size() != gt_labels.size() || (!valid.empty() && valid.size() != gt_labels.size())) {
    throw DimensionError("confusion_matrix: label and mask sizes differ");
  }
  if (bins == 0) throw ParameterError("confusion_matrix: zero bins");
  Tensor m({bins, bins});
  std::vector<double> row_count(bins, 0.0);
  for (std::size_t i = 0; i < gt_labels.size(); ++i) {
    if (!valid.empty() && !valid[i]) continue;
    if (gt_labels[i] >= bins || pred_labels[i] >= bins) {
      throw ParameterError("confusion_matrix: label outside [0, " + std::to_string(bins - 1) + "]");
    }
    m.at(gt_labels[i], pred_labels[i]) += 1.0;
    row_count[gt_labels[i]] += 1.0;
  }
  for (std::size_t r = 0; r < bins; ++r) {
    if (row_count[r] == 0.0) continue;
    for (std::size_t c = 0; c < bins; ++c) m.at(r, c) /= row_count[r];
  }
  return m;
}

double diagonal_mass(const Tensor& confusion) {
  const std::size_t k = confusion.dim(0);
  double diag = 0.0;
  std::size_t rows = 0;
  for (std::size_t r = 0; r < k; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) s += confusion.at(r, c);
    if (s == 0.0) continue;
    diag += confusion.at(r, r);
    ++rows;
  }
  return rows ? diag / static_cast<double>(rows) : 0.0;
}

std::string dump_probability_curves(const OrdinalOutput& out, std::span<const std::size_t> pixels) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (auto idx : pixels) {
    if (idx >= out.pixels()) {
      throw ParameterError("dump_probability_curves: pixel " + std::to_string(idx) + " out of range");
    }
    os << idx;
    for (std::size_t k = 0; k < out.bins(); ++k) os << ',' << out.probs.at(idx, k);
    os << '\n';
  }
  return os.str();
}

}  // namespace ctxdepth
