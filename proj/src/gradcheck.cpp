#include "ctxdepth/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "ctxdepth/attention.hpp"
#include "ctxdepth/discretization.hpp"
#include "ctxdepth/error.hpp"
#include "ctxdepth/losses.hpp"
#include "ctxdepth/model.hpp"
#include "ctxdepth/ops.hpp"
#include "ctxdepth/random.hpp"

namespace ctxdepth {

namespace {

// Reduces any output to a scalar with weights fixed per output shape.
Var to_scalar(Tape& tape, const Var& out) {
  if (out.value().size() == 1) return out;
  Rng rng(0xC0FFEE + out.value().size());
  Tensor proj(out.value().shape());
  for (auto& v : proj.data()) v = rng.uniform(-1.0, 1.0);
  return sum(mul(out, tape.constant(std::move(proj))));
}

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

GradCheckResult finish(const std::string& name, const std::vector<double>& analytic,
                       const std::vector<double>& numeric, double tolerance) {
  double diff = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
  const double scale = std::max(max_abs(numeric), 1e-12);
  GradCheckResult r{name, diff / scale, tolerance, false};
  r.passed = std::isfinite(r.max_rel_error) && r.max_rel_error < tolerance;
  return r;
}

}  // namespace

GradCheckResult check_gradients(const std::string& name, const std::vector<Tensor>& inputs, const GraphFn& fn,
                                double tolerance, double step) {
  auto evaluate = [&](const std::vector<Tensor>& xs, std::vector<Tensor>* grads) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& x : xs) vars.push_back(tape.variable(x));
    const Var loss = to_scalar(tape, fn(tape, vars));
    if (grads) {
      tape.backward(loss);
      for (const auto& v : vars) grads->push_back(tape.grad(v));
    }
    return loss.item();
  };

  std::vector<Tensor> grads;
  evaluate(inputs, &grads);
  std::vector<double> analytic, numeric;
  std::vector<Tensor> xs = inputs;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    for (std::size_t i = 0; i < xs[t].size(); ++i) {
      const double orig = xs[t][i];
      xs[t][i] = orig + step;
      const double fp = evaluate(xs, nullptr);
      xs[t][i] = orig - step;
      const double fm = evaluate(xs, nullptr);
      xs[t][i] = orig;
      numeric.push_back((fp - fm) / (2.0 * step));
      analytic.push_back(grads[t][i]);
    }
  }
  return finish(name, analytic, numeric, tolerance);
}

GradCheckResult check_parameter_gradients(const std::string& name, const std::vector<Parameter*>& params,
                                          const std::function<Var(Tape&)>& loss, double tolerance, double step) {
  for (auto* p : params) p->zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  std::vector<double> analytic, numeric;
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + step;
      double fp, fm;
      {
        Tape tape;
        fp = loss(tape).item();
      }
      p->value[i] = orig - step;
      {
        Tape tape;
        fm = loss(tape).item();
      }
      p->value[i] = orig;
      numeric.push_back((fp - fm) / (2.0 * step));
      analytic.push_back(p->grad[i]);
    }
  }
  return finish(name, analytic, numeric, tolerance);
}

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero so that kinks (relu, abs) are not straddled.
Tensor signed_away_from_zero(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.0);
  return t;
}

Tensor row_stochastic(std::size_t n, std::uint64_t seed) {
  return softmax_rows(random_tensor({n, n}, seed, -2.0, 2.0));
}

constexpr double kOpTol = 1e-4;
constexpr double kElementwiseTol = 1e-6;

std::vector<GradCheck> build_registry() {
  std::vector<GradCheck> r;
  auto op = [&](std::string name, double tol, std::vector<Tensor> inputs, GraphFn fn) {
    r.push_back({name, tol, [name, tol, inputs, fn] { return check_gradients(name, inputs, fn, tol); }});
  };

  // Elementwise.
  op("add", kElementwiseTol, {random_tensor({2, 3, 4}, 1), random_tensor({3, 4}, 2)},
     [](Tape&, const std::vector<Var>& v) { return add(v[0], v[1]); });
  op("sub", kElementwiseTol, {random_tensor({2, 3}, 3), random_tensor({2, 3}, 4)},
     [](Tape&, const std::vector<Var>& v) { return sub(v[0], v[1]); });
  op("mul", kElementwiseTol, {random_tensor({2, 3, 4}, 5), random_tensor({4}, 6)},
     [](Tape&, const std::vector<Var>& v) { return mul(v[0], v[1]); });
  op("exp", kElementwiseTol, {random_tensor({3, 4}, 7)}, [](Tape&, const std::vector<Var>& v) { return exp(v[0]); });
  op("log", kElementwiseTol, {random_tensor({3, 4}, 8, 0.5, 2.0)},
     [](Tape&, const std::vector<Var>& v) { return log(v[0]); });
  op("relu", kElementwiseTol, {signed_away_from_zero({3, 4}, 9)},
     [](Tape&, const std::vector<Var>& v) { return relu(v[0]); });
  op("abs", kElementwiseTol, {signed_away_from_zero({3, 4}, 10)},
     [](Tape&, const std::vector<Var>& v) { return abs(v[0]); });

  op("add_scalar", kElementwiseTol, {random_tensor({3, 4}, 50)},
     [](Tape&, const std::vector<Var>& v) { return add(v[0], 0.75); });
  op("mul_scalar", kElementwiseTol, {random_tensor({3, 4}, 51)},
     [](Tape&, const std::vector<Var>& v) { return mul(v[0], -1.5); });
  op("sum", kElementwiseTol, {random_tensor({3, 4}, 52)}, [](Tape&, const std::vector<Var>& v) { return sum(v[0]); });
  op("mean", kElementwiseTol, {random_tensor({3, 4}, 53)},
     [](Tape&, const std::vector<Var>& v) { return mean(v[0]); });

  // Linear algebra.
  op("matmul", kOpTol, {random_tensor({3, 4}, 11), random_tensor({4, 2}, 12)},
     [](Tape&, const std::vector<Var>& v) { return matmul(v[0], v[1]); });
  op("matmul_batched", kOpTol, {random_tensor({2, 3, 4}, 13), random_tensor({2, 4, 5}, 14)},
     [](Tape&, const std::vector<Var>& v) { return matmul(v[0], v[1]); });
  op("transpose", kOpTol, {random_tensor({2, 3, 4}, 15)},
     [](Tape&, const std::vector<Var>& v) { return transpose(v[0]); });
  op("reshape", kOpTol, {random_tensor({2, 6}, 54)},
     [](Tape&, const std::vector<Var>& v) { return reshape(v[0], {3, 4}); });
  op("softmax_rows", kOpTol, {random_tensor({4, 5}, 16, -2.0, 2.0)},
     [](Tape&, const std::vector<Var>& v) { return softmax_rows(v[0]); });
  op("log_softmax_rows", kOpTol, {random_tensor({4, 5}, 17, -2.0, 2.0)},
     [](Tape&, const std::vector<Var>& v) { return log_softmax_rows(v[0]); });

  // Convolution and pooling.
  op("conv2d", kOpTol, {random_tensor({1, 4, 4}, 18), random_tensor({2, 1, 3, 3}, 19)},
     [](Tape&, const std::vector<Var>& v) { return conv2d(v[0], v[1]); });
  op("conv2d_dilated", kOpTol, {random_tensor({2, 6, 6}, 20), random_tensor({3, 2, 3, 3}, 21)},
     [](Tape&, const std::vector<Var>& v) { return conv2d(v[0], v[1], {1, 2}); });
  op("conv2d_strided", kOpTol, {random_tensor({2, 2, 5, 6}, 22), random_tensor({3, 2, 3, 3}, 23)},
     [](Tape&, const std::vector<Var>& v) { return conv2d(v[0], v[1], {2, 1}); });
  op("add_channel_bias", kOpTol, {random_tensor({2, 3, 2, 2}, 24), random_tensor({3}, 25)},
     [](Tape&, const std::vector<Var>& v) { return add_channel_bias(v[0], v[1]); });
  op("avg_pool2", kOpTol, {random_tensor({2, 2, 4, 4}, 26)},
     [](Tape&, const std::vector<Var>& v) { return avg_pool2(v[0]); });
  op("global_avg_pool", kOpTol, {random_tensor({3, 4, 5}, 27)},
     [](Tape&, const std::vector<Var>& v) { return global_avg_pool(v[0]); });
  op("broadcast_spatial", kOpTol, {random_tensor({2, 3}, 28)},
     [](Tape&, const std::vector<Var>& v) { return broadcast_spatial(v[0], 2, 3); });
  op("concat_channels", kOpTol, {random_tensor({2, 2, 2, 2}, 29), random_tensor({2, 3, 2, 2}, 30)},
     [](Tape&, const std::vector<Var>& v) { return concat_channels(v[0], v[1]); });
  op("batch_norm", kOpTol, {random_tensor({2, 3, 3}, 31), random_tensor({2}, 32, 0.5, 1.5), random_tensor({2}, 33)},
     [](Tape&, const std::vector<Var>& v) {
       BatchNormState st;
       return batch_norm(v[0], v[1], v[2], st, Mode::kTrain);
     });

  // Attention module pieces.
  op("attention_logits", kOpTol, {random_tensor({5, 3}, 34), random_tensor({5, 3}, 35)},
     [](Tape&, const std::vector<Var>& v) { return attention_logits(v[0], v[1]); });
  op("attend", kOpTol, {row_stochastic(4, 36), random_tensor({4, 3}, 37)},
     [](Tape&, const std::vector<Var>& v) { return attend(v[0], v[1]); });
  op("image_pool", kOpTol, {random_tensor({3, 2, 3}, 38)},
     [](Tape&, const std::vector<Var>& v) { return image_pool(v[0]); });

  r.push_back({"cam_forward", kOpTol, [] {
                 auto params = make_attention_params(4, 2, 3, 39);
                 const Tensor x = random_tensor({4, 4, 4}, 40);
                 auto ps = params.parameters();
                 auto loss = [&](Tape& tape) {
                   const Var in = tape.constant(x);
                   const auto out = cam_forward(in, params, Mode::kTrain);
                   return add(to_scalar(tape, out.features), to_scalar(tape, out.attention));
                 };
                 auto res = check_parameter_gradients("cam_forward", ps, loss, kOpTol);
                 // Input gradient through both branches as well.
                 auto in_res = check_gradients("cam_forward", {x}, [&](Tape& tape, const std::vector<Var>& v) {
                   const auto out = cam_forward(v[0], params, Mode::kTrain);
                   return add(to_scalar(tape, out.features), to_scalar(tape, out.attention));
                 }, kOpTol);
                 res.max_rel_error = std::max(res.max_rel_error, in_res.max_rel_error);
                 res.passed = res.passed && in_res.passed;
                 return res;
               }});

  // Losses.
  r.push_back({"attention_loss", kOpTol, [] {
                 const std::vector<double> depth = {1.0, 1.5, 2.0, 3.0, 4.0, 4.5, 6.0, 7.0, 9.0};
                 const Tensor target = gt_attention_weights(depth, 10.0);
                 const Mask valid = {1, 1, 0, 1, 1, 1, 1, 0, 1};
                 return check_gradients("attention_loss", {row_stochastic(9, 41)},
                                        [target, valid](Tape&, const std::vector<Var>& v) {
                                          return attention_loss(v[0], target, valid);
                                        },
                                        kOpTol);
               }});
  r.push_back({"attention_loss_composite", kOpTol, [] {
                 // softmax(Q K^T / sqrt(C)) -> KL against depth targets.
                 const std::vector<double> depth = {1.0, 1.2, 2.0, 3.5, 4.0, 8.0};
                 const Tensor target = gt_attention_weights(depth, 9.0);
                 return check_gradients("attention_loss_composite", {random_tensor({6, 3}, 42), random_tensor({6, 3}, 43)},
                                        [target](Tape&, const std::vector<Var>& v) {
                                          return attention_loss(attention_weights(attention_logits(v[0], v[1])), target);
                                        },
                                        kOpTol);
               }});
  r.push_back({"ordinal_loss", kOpTol, [] {
                 const std::vector<std::size_t> labels = {0, 2, 3, 1, 3, 2, 0, 3, 1};
                 const Mask valid = {1, 1, 1, 0, 1, 1, 1, 1, 0};
                 return check_gradients("ordinal_loss", {random_tensor({9, 8}, 44, -3.0, 3.0)},
                                        [labels, valid](Tape&, const std::vector<Var>& v) {
                                          return ordinal_loss(v[0], labels, valid);
                                        },
                                        kOpTol);
               }});
  r.push_back({"cross_entropy_loss", kOpTol, [] {
                 const std::vector<std::size_t> labels = {0, 2, 3, 1, 3, 2, 0, 3, 1};
                 const Mask valid = {1, 0, 1, 1, 1, 1, 1, 1, 1};
                 return check_gradients("cross_entropy_loss", {random_tensor({9, 4}, 45, -3.0, 3.0)},
                                        [labels, valid](Tape&, const std::vector<Var>& v) {
                                          return cross_entropy_loss(v[0], labels, valid);
                                        },
                                        kOpTol);
               }});

  // End-to-end: total loss through the full network on 8 x 8 inputs, K = 4.
  r.push_back({"network_total_loss", kOpTol, [] {
                 NetworkConfig cfg;
                 cfg.stages = {{3, 2, 1, true}, {4, 2, 1, false}, {4, 1, 2, false}, {5, 1, 4, false}};
                 cfg.key_channels = 2;
                 cfg.value_channels = 3;
                 cfg.bins = 4;
                 cfg.height = cfg.width = 8;
                 Network net(cfg, 46);
                 const Tensor rgb = random_tensor({4, 3, 8, 8}, 47, 0.0, 1.0);
                 const std::vector<std::size_t> labels = {0, 3, 1, 2};
                 const Tensor target = [] {
                   // Batch of four 1 x 1 grids: each target row is the single weight 1.
                   return Tensor({4, 1, 1}, 1.0);
                 }();
                 LossWeights w{0.1, 1.0};
                 auto loss = [&](Tape& tape) {
                   const auto out = net.forward(tape, rgb, Mode::kTrain);
                   return total_loss(attention_loss(out.attention, target), ordinal_loss(out.logits, labels), w);
                 };
                 return check_parameter_gradients("network_total_loss", net.parameters(), loss, kOpTol);
               }});
  r.push_back({"network_total_loss_16px", kOpTol, [] {
                 // 16 x 16 gives a 2 x 2 grid so the attention loss is non-trivial.
                 NetworkConfig cfg;
                 cfg.stages = {{3, 2, 1, true}, {4, 2, 1, false}, {4, 1, 2, false}, {5, 1, 4, false}};
                 cfg.key_channels = 2;
                 cfg.value_channels = 3;
                 cfg.bins = 4;
                 cfg.height = cfg.width = 16;
                 Network net(cfg, 48);
                 const Tensor rgb = random_tensor({2, 3, 16, 16}, 49, 0.0, 1.0);
                 const std::vector<std::size_t> labels = {0, 3, 1, 2, 2, 2, 1, 0};
                 Tensor target({2, 4, 4});
                 const Tensor t0 = gt_attention_weights(std::vector<double>{1.0, 2.0, 3.0, 4.0}, 5.0);
                 const Tensor t1 = gt_attention_weights(std::vector<double>{4.0, 1.0, 1.5, 2.5}, 5.0);
                 std::copy(t0.data().begin(), t0.data().end(), target.data().begin());
                 std::copy(t1.data().begin(), t1.data().end(), target.data().begin() + 16);
                 LossWeights w{0.1, 1.0};
                 auto loss = [&](Tape& tape) {
                   const auto out = net.forward(tape, rgb, Mode::kTrain);
                   return total_loss(attention_loss(out.attention, target), ordinal_loss(out.logits, labels), w);
                 };
                 return check_parameter_gradients("network_total_loss_16px", net.parameters(), loss, kOpTol);
               }});
  return r;
}

}  // namespace

const std::vector<GradCheck>& gradcheck_registry() {
  static const std::vector<GradCheck> registry = build_registry();
  return registry;
}

std::vector<GradCheckResult> run_gradchecks(const std::string& scope) {
  std::vector<GradCheckResult> out;
  for (const auto& c : gradcheck_registry()) {
    if (scope == "all" || scope == c.name) out.push_back(c.run());
  }
  if (out.empty()) throw ParameterError("unknown gradcheck op '" + scope + "'");
  return out;
}

std::string format_gradcheck_table(const std::vector<GradCheckResult>& results) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-28s %14s %12s  %s\n", "op", "max_rel_err", "tolerance", "status");
  os << line;
  for (const auto& r : results) {
    std::snprintf(line, sizeof line, "%-28s %14.3e %12.1e  %s\n", r.name.c_str(), r.max_rel_error, r.tolerance,
                  r.passed ? "PASS" : "FAIL");
    os << line;
  }
  return os.str();
}

}  // namespace ctxdepth
