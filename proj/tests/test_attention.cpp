#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "ctxdepth/attention.hpp"
#include "ctxdepth/error.hpp"
#include "ctxdepth/optimizer.hpp"
#include "test_util.hpp"

using namespace ctxdepth;
using ctxdepth::test_util::random_tensor;

TEST(AttentionLogits, Examples) {
  const Tensor eq({3, 2}, 0.7);
  const Tensor l = attention_logits(eq, eq);
  for (double v : l.data()) EXPECT_DOUBLE_EQ(v, l[0]);

  const Tensor k = random_tensor({4, 3}, 1), q = random_tensor({4, 3}, 2);
  Tensor k2 = k, q2 = q;
  for (auto& v : k2.data()) v *= 2.0;
  for (auto& v : q2.data()) v *= 2.0;
  const Tensor a = attention_logits(k, q), b = attention_logits(k2, q2);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b[i], 4.0 * a[i], 1e-12);

  const Tensor id({2, 2}, std::vector<double>{1, 0, 0, 1});
  const Tensor h = attention_logits(id, id);
  EXPECT_NEAR(h.at(0, 0), 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_EQ(h.at(0, 1), 0.0);
  EXPECT_EQ(h.at(1, 0), 0.0);
  EXPECT_NEAR(h.at(1, 1), 1.0 / std::sqrt(2.0), 1e-15);
}

TEST(AttentionLogits, ChannelMismatch) {
  EXPECT_THROW(attention_logits(Tensor({3, 2}), Tensor({3, 4})), DimensionError);
}

TEST(AttentionWeights, Examples) {
  const Tensor u = attention_weights(Tensor({5, 5}, -2.0));
  for (double v : u.data()) EXPECT_DOUBLE_EQ(v, 0.2);
  Tensor l({1, 4});
  l[2] = 20.0;
  EXPECT_GT(attention_weights(l)[2], 0.999);
}

TEST(Attend, Examples) {
  const Tensor v = random_tensor({4, 3}, 3);
  const Tensor avg = attend(Tensor({4, 4}, 0.25), v);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      EXPECT_NEAR(avg.at(i, c), (v.at(0, c) + v.at(1, c) + v.at(2, c) + v.at(3, c)) / 4.0, 1e-15);

  const std::vector<std::size_t> perm = {2, 0, 3, 1};
  Tensor w({4, 4});
  for (std::size_t i = 0; i < 4; ++i) w.at(i, perm[i]) = 1.0;
  const Tensor sel = attend(w, v);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(sel.at(i, c), v.at(perm[i], c));
}

TEST(AttentionProperty, RowsStochasticAndConvexHull) {
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + t % 9, ck = 1 + t % 4;
    const Tensor k = random_tensor({n, ck}, 1000 + t, -3.0, 3.0);
    const Tensor q = random_tensor({n, ck}, 5000 + t, -3.0, 3.0);
    const Tensor w = attention_weights(attention_logits(k, q));
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        EXPECT_GE(w.at(i, j), 0.0);
        s += w.at(i, j);
      }
      ASSERT_NEAR(s, 1.0, 1e-9);
    }
    const Tensor v = random_tensor({n, 3}, 9000 + t, -5.0, 5.0);
    const Tensor c = attend(w, v);
    for (std::size_t ch = 0; ch < 3; ++ch) {
      double lo = INFINITY, hi = -INFINITY;
      for (std::size_t j = 0; j < n; ++j) lo = std::min(lo, v.at(j, ch)), hi = std::max(hi, v.at(j, ch));
      for (std::size_t i = 0; i < n; ++i) {
        ASSERT_GE(c.at(i, ch), lo - 1e-12);
        ASSERT_LE(c.at(i, ch), hi + 1e-12);
      }
    }
  }
}

TEST(ImagePool, Examples) {
  const Tensor c({2, 3, 3}, 1.5);
  EXPECT_EQ(image_pool(c), c);
  const Tensor x = random_tensor({3, 4, 5}, 4);
  const Tensor p = image_pool(x);
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(p[ch * 20 + i], p[ch * 20]);
  const Tensor pp = image_pool(p);
  EXPECT_LE(test_util::max_abs_diff(pp, p), 1e-15);
}

TEST(Cam, OutputShapesAndSharedStorage) {
  auto params = make_attention_params(6, 3, 5, 7);
  EXPECT_EQ(&params.key_weight(), &params.query_weight());
  Tape tape;
  const Var x = tape.constant(random_tensor({2, 6, 3, 4}, 5));
  const auto out = cam_forward(x, params, Mode::kTrain);
  EXPECT_EQ(out.features.shape(), (Shape{2, 5 + 6, 3, 4}));
  EXPECT_EQ(out.attention.shape(), (Shape{2, 12, 12}));
  EXPECT_THROW(make_attention_params(4, 4, 3, 1), ParameterError);
}

TEST(Cam, KeyQuerySharingSurvivesOptimizerStep) {
  auto params = make_attention_params(4, 2, 3, 9);
  auto ps = params.parameters();
  Tape tape;
  const auto out = cam_forward(tape.constant(random_tensor({4, 4, 4}, 6)), params, Mode::kTrain);
  for (auto* p : ps) p->zero_grad();
  tape.backward(sum(mul(out.features, tape.constant(random_tensor(out.features.shape(), 7)))));
  OptimizerState opt(OptimizerConfig{0.1, 10.0, 0.9, 5e-4, 0.9}, 10);
  sgd_step(ps, opt);
  EXPECT_EQ(params.key_weight().value, params.query_weight().value);
  EXPECT_EQ(&params.key_weight(), &params.query_weight());
}

TEST(Cam, ZeroedPoolingBranch) {
  auto params = make_attention_params(4, 2, 3, 11);
  Tape tape;
  const auto out = cam_forward(tape.constant(random_tensor({4, 3, 3}, 8)), params, Mode::kTrain, false);
  const Tensor& f = out.features.value();
  for (std::size_t i = 3 * 9; i < f.size(); ++i) EXPECT_EQ(f[i], 0.0);
}

TEST(Cam, BothBranchesReceiveGradient) {
  auto params = make_attention_params(4, 2, 3, 12);
  Tape tape;
  const Var x = tape.variable(random_tensor({4, 4, 4}, 9));
  const auto out = cam_forward(x, params, Mode::kTrain);
  for (auto* p : params.parameters()) p->zero_grad();
  // Upstream gradient only on the context channels reaches the attention
  // parameters; the pooled channels reach the input directly.
  tape.backward(sum(mul(out.features, tape.constant(random_tensor(out.features.shape(), 10)))));
  auto nonzero = [](const Tensor& t) {
    return std::any_of(t.data().begin(), t.data().end(), [](double v) { return v != 0.0; });
  };
  EXPECT_TRUE(nonzero(params.embed_weight.grad));
  EXPECT_TRUE(nonzero(params.value_weight.grad));
  EXPECT_TRUE(nonzero(params.embed_gamma.grad));

  // Pooling path alone: gradient from the pooled channels only.
  Tape t2;
  const Var x2 = t2.variable(random_tensor({4, 4, 4}, 9));
  const auto o2 = cam_forward(x2, params, Mode::kTrain);
  Tensor mask(o2.features.shape());
  for (std::size_t i = 3 * 16; i < mask.size(); ++i) mask[i] = 1.0;
  t2.backward(sum(mul(o2.features, t2.constant(mask))));
  EXPECT_TRUE(nonzero(t2.grad(x2)));
}
