#include <gtest/gtest.h>

#include <cmath>

#include "ctxdepth/discretization.hpp"
#include "ctxdepth/error.hpp"
#include "ctxdepth/random.hpp"

using namespace ctxdepth;

namespace {

const double e = std::exp(1.0);

OrdinalOutput probs_row(std::vector<double> p) {
  const std::size_t k = p.size();
  return ordinal_output_from_probs(Tensor({1, k}, std::move(p)));
}

}  // namespace

TEST(Discretization, EdgesClosedForm) {
  const auto d = build_discretization(1.0, std::exp(4.0), 4);
  ASSERT_EQ(d.edges.size(), 5u);
  for (int k = 0; k <= 4; ++k) EXPECT_NEAR(d.edges[k], std::exp(static_cast<double>(k)), 1e-12 * d.edges[k]);
}

TEST(Discretization, EndpointsAndLogSpacing) {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const double lo = rng.uniform(0.01, 5.0), hi = lo * rng.uniform(1.01, 200.0);
    const std::size_t k = 2 + rng.below(100);
    const auto d = build_discretization(lo, hi, k);
    EXPECT_EQ(d.edges.front(), lo);
    EXPECT_EQ(d.edges.back(), hi);
    const double step = (std::log(hi) - std::log(lo)) / static_cast<double>(k);
    for (std::size_t i = 0; i < k; ++i) {
      EXPECT_GT(d.edges[i + 1], d.edges[i]);
      EXPECT_NEAR(std::log(d.edges[i + 1]) - std::log(d.edges[i]), step, 1e-12);
    }
  }
}

TEST(Discretization, DefaultBinCount) { EXPECT_EQ(kDefaultBins, 80u); }

TEST(Discretization, InvalidParameters) {
  EXPECT_THROW(build_discretization(0.0, 1.0, 4), ParameterError);
  EXPECT_THROW(build_discretization(2.0, 1.0, 4), ParameterError);
  EXPECT_THROW(build_discretization(1.0, 1.0, 4), ParameterError);
  EXPECT_THROW(build_discretization(1.0, 2.0, 1), ParameterError);
}

TEST(Quantize, Examples) {
  const auto d = build_discretization(1.0, std::exp(4.0), 4);
  EXPECT_EQ(quantize_depth(1.0, d), 0u);
  EXPECT_EQ(quantize_depth(std::exp(4.0), d), 3u);
  EXPECT_EQ(quantize_depth(std::exp(2.5), d), 2u);
  EXPECT_EQ(quantize_depth(0.01, d), 0u);
  EXPECT_EQ(quantize_depth(1e6, d), 3u);
  EXPECT_THROW(quantize_depth(0.0, d), DomainError);
  EXPECT_THROW(quantize_depth(-1.0, d), DomainError);
}

TEST(Quantize, MonotoneInDepth) {
  const auto d = build_discretization(0.5, 10.0, 16);
  std::size_t prev = 0;
  for (double x = 0.1; x < 20.0; x *= 1.003) {
    const auto l = quantize_depth(x, d);
    EXPECT_GE(l, prev);
    prev = l;
  }
}

TEST(OrdinalEncode, Examples) {
  EXPECT_EQ(ordinal_encode(0, 4), (std::vector<double>{0, 0, 0, 0}));
  EXPECT_EQ(ordinal_encode(4, 4), (std::vector<double>{1, 1, 1, 1}));
  EXPECT_EQ(ordinal_encode(2, 4), (std::vector<double>{1, 1, 0, 0}));
  EXPECT_THROW(ordinal_encode(5, 4), ParameterError);
}

TEST(OrdinalOutput, StableSigmoidOfPairDifference) {
  Tensor y({3, 4}, std::vector<double>{0.0, 0.0, 1.0, -1.0, 800.0, -800.0, -800.0, 800.0, 0.3, 1.7, -2.0, 5.0});
  const auto o = make_ordinal_output(y);
  EXPECT_EQ(o.bins(), 2u);
  EXPECT_DOUBLE_EQ(o.probs.at(0, 0), 0.5);
  EXPECT_NEAR(o.probs.at(0, 1), std::exp(-1.0) / (std::exp(1.0) + std::exp(-1.0)), 1e-12);
  EXPECT_EQ(o.probs.at(1, 0), 0.0);
  EXPECT_EQ(o.probs.at(1, 1), 1.0);
  EXPECT_NEAR(o.probs.at(2, 0), std::exp(1.7) / (std::exp(0.3) + std::exp(1.7)), 1e-12);
  EXPECT_NEAR(o.probs.at(2, 1), std::exp(5.0) / (std::exp(-2.0) + std::exp(5.0)), 1e-12);
  EXPECT_TRUE(o.probs.all_finite());
}

TEST(HardInfer, Examples) {
  const auto d = build_discretization(1.0, std::exp(4.0), 4);
  auto r = hard_infer(probs_row({1, 1, 0, 0}), d);
  EXPECT_EQ(r.label[0], 2u);
  EXPECT_NEAR(r.depth[0], (e * e + e * e * e) / 2.0, 1e-12);
  EXPECT_NEAR(r.depth[0], 13.737, 1e-3);

  r = hard_infer(probs_row({0.4, 0.1, 0.2, 0.49}), d);
  EXPECT_EQ(r.label[0], 0u);
  EXPECT_NEAR(r.depth[0], (1.0 + e) / 2.0, 1e-12);

  const auto d3 = build_discretization(1.0, std::exp(3.0), 3);
  EXPECT_EQ(hard_infer(probs_row({0.6, 0.5, 0.4}), d3).label[0], 2u);
}

TEST(HardInfer, TopLabelClampsMidpoint) {
  const auto d = build_discretization(1.0, std::exp(4.0), 4);
  const auto r = hard_infer(probs_row({1, 1, 1, 1}), d);
  EXPECT_EQ(r.label[0], 4u);
  EXPECT_NEAR(r.depth[0], (std::exp(3.0) + std::exp(4.0)) / 2.0, 1e-12);
}

TEST(SoftInfer, Examples) {
  const auto d = build_discretization(1.0, std::exp(4.0), 4);
  const auto r = soft_infer(probs_row({1, 1, 0.5, 0}), d);
  EXPECT_DOUBLE_EQ(r.mass[0], 2.5);
  EXPECT_EQ(r.label[0], 2u);
  EXPECT_DOUBLE_EQ(r.fraction[0], 0.5);
  const double want = (e * e + 2 * e * e * e + std::exp(4.0)) / 4.0;
  EXPECT_NEAR(r.depth[0], want, 1e-12);
  EXPECT_NEAR(r.depth[0], 25.54, 1e-2);
}

TEST(SoftInfer, EqualsHardOnBinaryRows) {
  const auto d = build_discretization(0.5, 10.0, 16);
  for (std::size_t l = 0; l <= 16; ++l) {
    const auto enc = ordinal_encode(l, 16);
    const auto o = probs_row(enc);
    const auto h = hard_infer(o, d), s = soft_infer(o, d);
    EXPECT_EQ(s.fraction[0], 0.0);
    EXPECT_EQ(s.depth[0], h.depth[0]) << "label " << l;
  }
}

TEST(SoftInfer, MonotoneInEachProbability) {
  const auto d = build_discretization(0.5, 10.0, 8);
  Rng rng(17);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> p(8);
    for (auto& v : p) v = rng.uniform(0.0, 0.9);
    // Keep s below K - 1 so the top clamp does not saturate.
    double s = 0.0;
    for (double v : p) s += v;
    if (s > 6.5) continue;
    const std::size_t k = rng.below(8);
    auto q = p;
    q[k] += rng.uniform(0.01, 0.1);
    EXPECT_GT(soft_infer(probs_row(q), d).depth[0], soft_infer(probs_row(p), d).depth[0]);
  }
}

TEST(SoftInfer, RangeInvariants) {
  const auto d = build_discretization(0.5, 10.0, 16);
  Rng rng(19);
  for (int t = 0; t < 500; ++t) {
    Tensor y({4, 32});
    for (auto& v : y.data()) v = rng.uniform(-30.0, 30.0);
    const auto o = make_ordinal_output(y);
    for (const auto& r : {soft_infer(o, d), hard_infer(o, d)}) {
      for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_GE(r.mass[i], 0.0);
        EXPECT_LE(r.mass[i], 16.0);
        EXPECT_LE(r.label[i], 16u);
        EXPECT_GE(r.depth[i], d.d_min);
        EXPECT_LE(r.depth[i], d.d_max);
      }
    }
  }
}

// The bin representative is the arithmetic midpoint, which sits
// ln((1 + r) / 2) above the lower edge in log space (r = edge ratio). That
// offset exceeds half a log-bin, so the tight round-trip bound is the offset.
TEST(Discretization, RoundTripWithinMidpointOffset) {
  const auto d = build_discretization(0.5, 10.0, 16);
  const double r = std::exp(d.log_step());
  const double bound = std::log((1.0 + r) / 2.0) + 1e-12;
  EXPECT_GT(bound, d.log_step() / 2.0);
  Rng rng(23);
  for (int t = 0; t < 10000; ++t) {
    const double x = std::exp(rng.uniform(std::log(d.d_min), std::log(d.d_max)));
    const auto r = hard_infer(probs_row(ordinal_encode(quantize_depth(x, d), 16)), d);
    EXPECT_LE(std::abs(std::log(r.depth[0]) - std::log(x)), bound);
  }
}

TEST(Discretization, WorstRoundTripErrorAtLowerEdge) {
  const auto d = build_discretization(0.5, 10.0, 16);
  const double r = std::exp(d.log_step());
  const double x = d.edges[5];
  const auto res = hard_infer(probs_row(ordinal_encode(quantize_depth(x, d), 16)), d);
  EXPECT_NEAR(std::log(res.depth[0]) - std::log(x), std::log((1.0 + r) / 2.0), 1e-12);
}

TEST(CeSoftInfer, Examples) {
  const auto d = build_discretization(1.0, std::exp(4.0), 4);
  const auto onehot = ce_soft_infer(Tensor({1, 4}, std::vector<double>{0, 0, 1, 0}), d);
  EXPECT_NEAR(onehot[0], d.midpoint(2), 1e-12);
  const auto uni = ce_soft_infer(Tensor({1, 4}, 0.25), d);
  EXPECT_NEAR(uni[0], (d.midpoint(0) + d.midpoint(1) + d.midpoint(2) + d.midpoint(3)) / 4.0, 1e-12);
  const auto half = ce_soft_infer(Tensor({1, 4}, std::vector<double>{0.5, 0.5, 0, 0}), d);
  EXPECT_NEAR(half[0], ((1 + e) / 2 + (e + e * e) / 2) / 2, 1e-12);
  EXPECT_THROW(ce_soft_infer(Tensor({1, 4}, std::vector<double>{0.5, 0.6, 0, 0}), d), ContractError);
}

TEST(CeHardInfer, ArgMax) {
  const auto d = build_discretization(1.0, std::exp(4.0), 4);
  const Tensor p({2, 4}, std::vector<double>{0.1, 0.6, 0.2, 0.1, 0.05, 0.05, 0.1, 0.8});
  EXPECT_EQ(ce_labels(p), (std::vector<std::size_t>{1, 3}));
  const auto h = ce_hard_infer(p, d);
  EXPECT_NEAR(h[1], d.midpoint(3), 1e-12);
}
