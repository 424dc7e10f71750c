#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ctxdepth/discretization.hpp"
#include "ctxdepth/tensor.hpp"

namespace ctxdepth {

/// Standard monocular depth metrics over valid pixels.
struct MetricReport {
  double delta1 = 0.0;  // fraction with max(d/d*, d*/d) < 1.25
  double delta2 = 0.0;  // ... < 1.25^2
  double delta3 = 0.0;  // ... < 1.25^3
  double rmse = 0.0;
  double rmse_log = 0.0;  // natural log
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  std::size_t n_valid = 0;

  static std::string csv_header();
  std::string csv_line() const;
};

/// Throws EvaluationError when no pixel is valid and DomainError for
/// non-positive depths on valid pixels.
MetricReport evaluate(std::span<const double> pred, std::span<const double> gt, const Mask& valid = {});

/// Row-normalised K x K matrix; entry (r, c) is the fraction of pixels of true
/// label r predicted as c. Rows without pixels are all zero.
Tensor confusion_matrix(std::span<const std::size_t> pred_labels, std::span<const std::size_t> gt_labels,
                        const Mask& valid, std::size_t bins);

/// Mean diagonal entry over occupied rows of a normalised confusion matrix.
double diagonal_mass(const Tensor& confusion);

/// CSV rows "index,P^0,...,P^{K-1}" for the requested pixels (no header).
std::string dump_probability_curves(const OrdinalOutput& out, std::span<const std::size_t> pixels);

}  // namespace ctxdepth
