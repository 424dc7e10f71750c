#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "ctxdepth/error.hpp"
#include "ctxdepth/metrics.hpp"
#include "ctxdepth/random.hpp"

using namespace ctxdepth;

TEST(Metrics, PerfectPrediction) {
  const std::vector<double> d = {1.0, 2.5, 7.0, 0.6};
  const auto r = evaluate(d, d);
  EXPECT_EQ(r.delta1, 1.0);
  EXPECT_EQ(r.delta2, 1.0);
  EXPECT_EQ(r.delta3, 1.0);
  EXPECT_EQ(r.rmse, 0.0);
  EXPECT_EQ(r.rmse_log, 0.0);
  EXPECT_EQ(r.abs_rel, 0.0);
  EXPECT_EQ(r.sq_rel, 0.0);
  EXPECT_EQ(r.n_valid, 4u);
}

TEST(Metrics, SinglePixelOracle) {
  const auto r = evaluate(std::vector<double>{2.0}, std::vector<double>{1.0});
  EXPECT_EQ(r.rmse, 1.0);
  EXPECT_EQ(r.rmse_log, std::log(2.0));
  EXPECT_EQ(r.abs_rel, 1.0);
  EXPECT_EQ(r.sq_rel, 1.0);
  EXPECT_EQ(r.delta1, 0.0);
  EXPECT_EQ(r.delta2, 0.0);
  EXPECT_EQ(r.delta3, 0.0);
}

TEST(Metrics, HandComputedMixture) {
  // Ratios 1.1, 1.5, 1.9, 3.0 -> delta1 1/4, delta2 2/4, delta3 3/4.
  const std::vector<double> gt = {1.0, 2.0, 1.0, 1.0};
  const std::vector<double> pred = {1.1, 3.0, 1.0 / 1.9, 3.0};
  const auto r = evaluate(pred, gt);
  EXPECT_DOUBLE_EQ(r.delta1, 0.25);
  EXPECT_DOUBLE_EQ(r.delta2, 0.5);
  EXPECT_DOUBLE_EQ(r.delta3, 0.75);
  const double se = 0.01 + 1.0 + std::pow(1.0 - 1.0 / 1.9, 2) + 4.0;
  EXPECT_NEAR(r.rmse, std::sqrt(se / 4.0), 1e-15);
  EXPECT_NEAR(r.abs_rel, (0.1 + 0.5 + (1.0 - 1.0 / 1.9) + 2.0) / 4.0, 1e-15);
  EXPECT_NEAR(r.sq_rel, (0.01 + 0.5 + std::pow(1.0 - 1.0 / 1.9, 2) + 4.0) / 4.0, 1e-15);
}

TEST(Metrics, MaskAndErrors) {
  const std::vector<double> pred = {2.0, 100.0}, gt = {1.0, 1.0};
  const auto r = evaluate(pred, gt, Mask{1, 0});
  EXPECT_EQ(r.n_valid, 1u);
  EXPECT_EQ(r.rmse, 1.0);
  EXPECT_THROW(evaluate(pred, gt, Mask{0, 0}), EvaluationError);
  EXPECT_THROW(evaluate(std::vector<double>{0.0}, std::vector<double>{1.0}), DomainError);
}

TEST(Metrics, Properties) {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> a(50), b(50);
    for (std::size_t i = 0; i < 50; ++i) a[i] = rng.uniform(0.5, 10.0), b[i] = rng.uniform(0.5, 10.0);
    const auto ab = evaluate(a, b), ba = evaluate(b, a);
    EXPECT_EQ(ab.delta1, ba.delta1);
    EXPECT_EQ(ab.delta2, ba.delta2);
    EXPECT_EQ(ab.delta3, ba.delta3);
    EXPECT_LE(ab.delta1, ab.delta2);
    EXPECT_LE(ab.delta2, ab.delta3);
    EXPECT_GT(ab.rmse, 0.0);
    const double s = rng.uniform(0.1, 10.0);
    std::vector<double> as = a, bs = b;
    for (auto& v : as) v *= s;
    for (auto& v : bs) v *= s;
    const auto scaled = evaluate(as, bs);
    // Ratios are unchanged up to rounding in the last place.
    EXPECT_NEAR(scaled.delta1, ab.delta1, 1.0 / 50 + 1e-12);
    EXPECT_NEAR(scaled.rmse_log, ab.rmse_log, 1e-12);
  }
}

TEST(Metrics, CsvAndHeader) {
  const auto r = evaluate(std::vector<double>{2.0}, std::vector<double>{1.0});
  EXPECT_EQ(MetricReport::csv_header(), "delta1,delta2,delta3,rmse,rmse_log,abs_rel,sq_rel,n_valid");
  std::stringstream ss(r.csv_line());
  std::string cell;
  std::vector<std::string> cells;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  ASSERT_EQ(cells.size(), 8u);
  EXPECT_EQ(std::stod(cells[4]), std::log(2.0));
}

TEST(Confusion, Examples) {
  const std::vector<std::size_t> gt = {0, 1, 1, 3, 3, 3};
  const Tensor id = confusion_matrix(gt, gt, {}, 4);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(id.at(r, c), (r == c && r != 2) ? 1.0 : 0.0);
  EXPECT_DOUBLE_EQ(diagonal_mass(id), 1.0);

  const std::vector<std::size_t> pred = {1, 1, 0, 3, 2, 3};
  const Tensor m = confusion_matrix(pred, gt, {}, 4);
  EXPECT_DOUBLE_EQ(m.at(1, 1), 0.5);
  EXPECT_DOUBLE_EQ(m.at(3, 3), 2.0 / 3.0);
  EXPECT_TRUE(m.all_finite());
  EXPECT_DOUBLE_EQ(diagonal_mass(m), (0.0 + 0.5 + 2.0 / 3.0) / 3.0);
  EXPECT_THROW(confusion_matrix(std::vector<std::size_t>{4}, std::vector<std::size_t>{0}, {}, 4), ParameterError);
}

TEST(Confusion, UniformPredictionsStatistical) {
  const std::size_t k = 5, n = 50000;
  Rng rng(8);
  std::vector<std::size_t> gt(n), pred(n);
  for (std::size_t i = 0; i < n; ++i) gt[i] = rng.below(k), pred[i] = rng.below(k);
  const Tensor m = confusion_matrix(pred, gt, {}, k);
  const double per_row = static_cast<double>(n) / k;
  const double sigma = std::sqrt((1.0 / k) * (1.0 - 1.0 / k) / per_row);
  for (std::size_t r = 0; r < k; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      EXPECT_NEAR(m.at(r, c), 1.0 / k, 3.0 * sigma * 1.1);
      s += m.at(r, c);
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(ProbabilityCurves, FormatAndRange) {
  Tensor y({3, 8});
  for (std::size_t b = 0; b < 4; ++b) {
    y.at(0, 2 * b + 1) = b < 2 ? 30.0 : -30.0;
  }
  const auto o = make_ordinal_output(y);
  const std::string csv = dump_probability_curves(o, std::vector<std::size_t>{0, 2});
  std::stringstream ss(csv);
  std::string line;
  int rows = 0;
  while (std::getline(ss, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 4);  // K + 1 fields
  }
  EXPECT_EQ(rows, 2);
  EXPECT_EQ(csv.substr(0, 2), "0,");
  // Saturated row is a step curve.
  EXPECT_GT(o.probs.at(0, 1), 0.999);
  EXPECT_LT(o.probs.at(0, 2), 0.001);
  EXPECT_THROW(dump_probability_curves(o, std::vector<std::size_t>{3}), ParameterError);
}
