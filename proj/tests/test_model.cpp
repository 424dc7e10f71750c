#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "ctxdepth/error.hpp"
#include "ctxdepth/model.hpp"
#include "test_util.hpp"

using namespace ctxdepth;
using ctxdepth::test_util::random_tensor;
using ctxdepth::test_util::TempDir;

namespace {

NetworkConfig small_config() {
  NetworkConfig c;
  c.stages = {{8, 2, 1, false}, {8, 2, 1, false}, {8, 1, 2, true}};
  c.key_channels = 4;
  c.value_channels = 8;
  c.bins = 6;
  c.height = 16;
  c.width = 24;
  return c;
}

// One train-mode pass populates the batch-norm running statistics.
void warm_up(Network& net, const Tensor& x) {
  Tape tape;
  net.forward(tape, x, Mode::kTrain);
}

}  // namespace

TEST(Network, OutputShapes) {
  Network net(NetworkConfig{}, 1);
  EXPECT_EQ(net.config().output_stride(), 8u);
  Tape tape;
  const auto out = net.forward(tape, random_tensor({2, 3, 48, 48}, 2, 0.0, 1.0), Mode::kTrain);
  EXPECT_EQ(out.grid_height, 6u);
  EXPECT_EQ(out.grid_width, 6u);
  EXPECT_EQ(out.logits.shape(), (Shape{2 * 36, 32}));
  EXPECT_EQ(out.attention.shape(), (Shape{2, 36, 36}));
  EXPECT_TRUE(out.logits.value().all_finite());

  NetworkConfig ce;
  ce.head = LossKind::kCrossEntropy;
  Network ce_net(ce, 1);
  Tape t2;
  EXPECT_EQ(ce_net.forward(t2, random_tensor({3, 48, 48}, 2, 0.0, 1.0), Mode::kTrain).logits.shape(),
            (Shape{36, 16}));
}

TEST(Network, ParameterCount) {
  Network net(NetworkConfig{}, 0);
  std::size_t total = 0;
  for (auto* p : net.parameters()) total += p->value.size();
  EXPECT_EQ(net.parameter_count(), total);
  EXPECT_EQ(total, 66928u);
}

TEST(Network, RejectsIndivisibleInput) {
  auto c = small_config();
  c.width = 20;
  EXPECT_THROW(Network(c, 0), ParameterError);
  c = small_config();
  c.bins = 1;
  EXPECT_THROW(Network(c, 0), ParameterError);
  Network net(small_config(), 0);
  Tape tape;
  EXPECT_THROW(net.forward(tape, Tensor({1, 3, 16, 16}), Mode::kTrain), DimensionError);
}

TEST(Network, SameSeedSameInit) {
  Network a(NetworkConfig{}, 5), b(NetworkConfig{}, 5), c(NetworkConfig{}, 6);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->value, pb[i]->value) << pa[i]->name;
    differs = differs || !(pa[i]->value == pc[i]->value);
  }
  EXPECT_TRUE(differs);
}

TEST(Network, ConvInitVarianceTracksFanIn) {
  Network net(NetworkConfig{}, 3);
  for (auto* p : net.parameters()) {
    if (p->value.rank() != 4) continue;
    const auto& s = p->value.shape();
    const double fan_in = static_cast<double>(s[1] * s[2] * s[3]);
    double var = 0.0;
    for (double v : p->value.data()) var += v * v;
    var /= static_cast<double>(p->value.size());
    const double target = 2.0 / fan_in;
    EXPECT_GT(var, target / 2.0) << p->name;
    EXPECT_LT(var, target * 2.0) << p->name;
  }
}

TEST(Network, EvalIsDeterministicAndRequiresStatistics) {
  Network net(small_config(), 4);
  const Tensor x = random_tensor({2, 3, 16, 24}, 9, 0.0, 1.0);
  Tape t0;
  EXPECT_THROW(net.forward(t0, x, Mode::kEval), StateError);
  warm_up(net, x);
  Tape t1, t2;
  const Tensor a = net.forward(t1, x, Mode::kEval).logits.value();
  const Tensor b = net.forward(t2, x, Mode::kEval).logits.value();
  EXPECT_EQ(a, b);
}

TEST(Network, EvalOutputIndependentOfBatchMates) {
  Network net(small_config(), 4);
  const Tensor x = random_tensor({2, 3, 16, 24}, 9, 0.0, 1.0);
  warm_up(net, x);
  Tape t1, t2;
  const Tensor both = net.forward(t1, x, Mode::kEval).logits.value();
  Tensor first({1, 3, 16, 24}, std::vector<double>(x.data().begin(), x.data().begin() + 3 * 16 * 24));
  const Tensor one = net.forward(t2, first, Mode::kEval).logits.value();
  for (std::size_t i = 0; i < one.size(); ++i) EXPECT_NEAR(one[i], both[i], 1e-12);
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  TempDir dir("ckpt");
  Network net(small_config(), 7);
  const Tensor x = random_tensor({2, 3, 16, 24}, 10, 0.0, 1.0);
  warm_up(net, x);
  net.save(dir.file("a.ckpt"), R"({"note":"hi"})");
  Network back = Network::load(dir.file("a.ckpt"));
  EXPECT_EQ(Network::read_extra(dir.file("a.ckpt")), R"({"note":"hi"})");
  Tape t1, t2;
  EXPECT_EQ(net.forward(t1, x, Mode::kEval).logits.value(), back.forward(t2, x, Mode::kEval).logits.value());
  EXPECT_EQ(back.parameter_count(), net.parameter_count());
}

TEST(Checkpoint, MismatchedConfigIsRejected) {
  TempDir dir("ckpt_bad");
  Network net(small_config(), 7);
  warm_up(net, random_tensor({1, 3, 16, 24}, 1, 0.0, 1.0));
  net.save(dir.file("a.ckpt"));
  auto other = small_config();
  other.value_channels = 4;
  Network target(other, 0);
  EXPECT_THROW(target.load_weights(dir.file("a.ckpt")), LoadError);
  EXPECT_THROW(Network::load(dir.file("missing.ckpt")), LoadError);
  {
    std::ofstream f(dir.file("junk.ckpt"), std::ios::binary);
    f << "NOPE";
  }
  EXPECT_THROW(Network::load(dir.file("junk.ckpt")), LoadError);
}

TEST(DownsampleLogDepth, GeometricMeanOfValidPixels) {
  // 4x4 map, factor 2: top-left block has a masked pixel, bottom-right none valid.
  std::vector<double> d = {1, 4, 2, 2,  //
                           4, 9, 2, 2,  //
                           3, 3, 5, 5,  //
                           3, 3, 5, 5};
  Mask v = {1, 1, 1, 1,  //
            1, 0, 1, 1,  //
            1, 1, 0, 0,  //
            1, 1, 0, 0};
  const auto [g, gv] = downsample_log_depth(d, v, 4, 4, 2);
  ASSERT_EQ(g.size(), 4u);
  EXPECT_NEAR(g[0], std::cbrt(16.0), 1e-12);
  EXPECT_NEAR(g[1], 2.0, 1e-12);
  EXPECT_NEAR(g[2], 3.0, 1e-12);
  EXPECT_EQ(gv, (Mask{1, 1, 1, 0}));
  EXPECT_THROW(downsample_log_depth(d, v, 4, 4, 3), ParameterError);
}
