#include "ctxdepth/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ctxdepth/error.hpp"

namespace ctxdepth {

namespace {

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw StateError("op applied to an unbound Var");
  return *a.tape();
}

bool is_suffix(const Shape& full, const Shape& tail) {
  if (tail.size() > full.size()) return false;
  return std::equal(tail.rbegin(), tail.rend(), full.rbegin());
}

// Returns the broadcast inner length of `b` against `a`.
std::size_t broadcast_inner(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return a.size();
  if (is_suffix(a.shape(), b.shape())) return b.size();
  throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(b.shape()) + " onto " +
                       shape_str(a.shape()));
}

// Sums a gradient shaped like `a` down to `inner` trailing elements.
Tensor reduce_to(const Tensor& g, const Shape& shape) {
  if (g.shape() == shape) return g;
  Tensor out(shape);
  const std::size_t inner = out.size();
  for (std::size_t i = 0; i < g.size(); ++i) out[i % inner] += g[i];
  return out;
}

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

// C (m x n) += op(A) * op(B); A is m x k (or k x m when trans_a), B is k x n
// (or n x k when trans_b).
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n, bool trans_a,
          bool trans_b) {
  if (!trans_a && !trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      double* ci = c + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a[i * k + p];
        const double* bp = b + p * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  } else if (!trans_a && trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* ai = a + i * k;
      for (std::size_t j = 0; j < n; ++j) {
        const double* bj = b + j * k;
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
        c[i * n + j] += s;
      }
    }
  } else if (trans_a && !trans_b) {
    for (std::size_t p = 0; p < k; ++p) {
      const double* ap = a + p * m;
      const double* bp = b + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        const double av = ap[i];
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[j * k + p];
        c[i * n + j] += s;
      }
    }
  }
}

struct MatDims {
  std::size_t batch, m, k, n;
};

MatDims matmul_dims(const Shape& a, const Shape& b) {
  if (a.size() == 2 && b.size() == 2) {
    if (a[1] != b[0]) {
      throw DimensionError("matmul: inner dimensions disagree for " + shape_str(a) + " and " + shape_str(b));
    }
    return {1, a[0], a[1], b[1]};
  }
  if (a.size() == 3 && b.size() == 3) {
    if (a[0] != b[0] || a[2] != b[1]) {
      throw DimensionError("matmul: batched shapes disagree for " + shape_str(a) + " and " + shape_str(b));
    }
    return {a[0], a[1], a[2], b[2]};
  }
  throw DimensionError("matmul: unsupported ranks " + shape_str(a) + " and " + shape_str(b));
}

// Feature map geometry; rank-3 inputs are a batch of one.
struct MapDims {
  std::size_t batch, channels, height, width;
};

MapDims map_dims(const Shape& s, const char* op) {
  if (s.size() == 3) return {1, s[0], s[1], s[2]};
  if (s.size() == 4) return {s[0], s[1], s[2], s[3]};
  throw DimensionError(std::string(op) + ": expected C x H x W or B x C x H x W, got " + shape_str(s));
}

Shape map_shape(const Shape& like, std::size_t c, std::size_t h, std::size_t w) {
  if (like.size() == 3) return {c, h, w};
  return {like[0], c, h, w};
}

}  // namespace

// --- elementwise ------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  const std::size_t inner = broadcast_inner(av, bv, "add");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % inner];
  const Shape bshape = bv.shape();
  return tape_of(a).record(std::move(out), {a, b}, [a, b, bshape](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, reduce_to(g, bshape));
  });
}

Var sub(const Var& a, const Var& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  const std::size_t inner = broadcast_inner(av, bv, "sub");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i % inner];
  const Shape bshape = bv.shape();
  return tape_of(a).record(std::move(out), {a, b}, [a, b, bshape](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    Tensor gb = reduce_to(g, bshape);
    for (auto& v : gb.data()) v = -v;
    t.accumulate(b, gb);
  });
}

Var mul(const Var& a, const Var& b) {
  const Tensor av = a.value();
  const Tensor bv = b.value();
  const std::size_t inner = broadcast_inner(av, bv, "mul");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i % inner];
  return tape_of(a).record(std::move(out), {a, b}, [a, b, av, bv, inner](Tape& t, const Tensor& g) {
    Tensor ga(av.shape());
    Tensor gb_full(av.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] = g[i] * bv[i % inner];
      gb_full[i] = g[i] * av[i];
    }
    t.accumulate(a, ga);
    t.accumulate(b, reduce_to(gb_full, bv.shape()));
  });
}

Var add(const Var& a, double c) {
  Tensor out = map(a.value(), [c](double x) { return x + c; });
  return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Tensor& g) { t.accumulate(a, g); });
}

Var mul(const Var& a, double c) {
  Tensor out = map(a.value(), [c](double x) { return x * c; });
  return tape_of(a).record(std::move(out), {a}, [a, c](Tape& t, const Tensor& g) {
    t.accumulate(a, map(g, [c](double x) { return x * c; }));
  });
}

Tensor exp(const Tensor& a) {
  return map(a, [](double x) { return std::exp(x); });
}

Tensor log(const Tensor& a) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a[i] > 0.0)) {
      throw DomainError("log: non-positive value " + std::to_string(a[i]) + " at index " + std::to_string(i));
    }
  }
  return map(a, [](double x) { return std::log(x); });
}

Tensor relu(const Tensor& a) {
  return map(a, [](double x) { return x < 0.0 ? 0.0 : x; });  // NaN passes through
}

Var exp(const Var& a) {
  Tensor out = exp(a.value());
  Tensor saved = out;
  return tape_of(a).record(std::move(out), {a}, [a, saved](Tape& t, const Tensor& g) {
    Tensor ga(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * saved[i];
    t.accumulate(a, ga);
  });
}

Var log(const Var& a) {
  Tensor x = a.value();
  Tensor out = log(x);
  return tape_of(a).record(std::move(out), {a}, [a, x](Tape& t, const Tensor& g) {
    Tensor ga(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] / x[i];
    t.accumulate(a, ga);
  });
}

Var relu(const Var& a) {
  Tensor x = a.value();
  Tensor out = relu(x);
  return tape_of(a).record(std::move(out), {a}, [a, x](Tape& t, const Tensor& g) {
    Tensor ga(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = x[i] > 0.0 ? g[i] : 0.0;
    t.accumulate(a, ga);
  });
}

Var abs(const Var& a) {
  Tensor x = a.value();
  Tensor out = map(x, [](double v) { return std::abs(v); });
  return tape_of(a).record(std::move(out), {a}, [a, x](Tape& t, const Tensor& g) {
    Tensor ga(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = x[i] > 0.0 ? g[i] : (x[i] < 0.0 ? -g[i] : 0.0);
    t.accumulate(a, ga);
  });
}

Var sum(const Var& a) {
  const auto& x = a.value();
  double s = 0.0;
  for (double v : x.data()) s += v;
  const Shape shape = x.shape();
  return tape_of(a).record(Tensor::scalar(s), {a},
                           [a, shape](Tape& t, const Tensor& g) { t.accumulate(a, Tensor(shape, g[0])); });
}

Var mean(const Var& a) { return mul(sum(a), 1.0 / static_cast<double>(a.value().size())); }

// --- linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto d = matmul_dims(a.shape(), b.shape());
  Tensor out(a.rank() == 2 ? Shape{d.m, d.n} : Shape{d.batch, d.m, d.n});
  for (std::size_t s = 0; s < d.batch; ++s) {
    gemm(a.data().data() + s * d.m * d.k, b.data().data() + s * d.k * d.n, out.data().data() + s * d.m * d.n, d.m,
         d.k, d.n, false, false);
  }
  return out;
}

Var matmul(const Var& a, const Var& b) {
  const Tensor av = a.value();
  const Tensor bv = b.value();
  Tensor out = matmul(av, bv);
  const auto d = matmul_dims(av.shape(), bv.shape());
  return tape_of(a).record(std::move(out), {a, b}, [a, b, av, bv, d](Tape& t, const Tensor& g) {
    Tensor ga(av.shape());
    Tensor gb(bv.shape());
    for (std::size_t s = 0; s < d.batch; ++s) {
      const double* gs = g.data().data() + s * d.m * d.n;
      // dA = dC * B^T, dB = A^T * dC
      gemm(gs, bv.data().data() + s * d.k * d.n, ga.data().data() + s * d.m * d.k, d.m, d.n, d.k, false, true);
      gemm(av.data().data() + s * d.m * d.k, gs, gb.data().data() + s * d.k * d.n, d.k, d.m, d.n, true, false);
    }
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2 && a.rank() != 3) throw DimensionError("transpose: expected rank 2 or 3, got " + shape_str(a.shape()));
  const std::size_t batch = a.rank() == 3 ? a.dim(0) : 1;
  const std::size_t m = a.dim(a.rank() - 2);
  const std::size_t n = a.dim(a.rank() - 1);
  Tensor out(a.rank() == 3 ? Shape{batch, n, m} : Shape{n, m});
  for (std::size_t s = 0; s < batch; ++s) {
    const std::size_t off = s * m * n;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[off + j * m + i] = a[off + i * n + j];
  }
  return out;
}

Var transpose(const Var& a) {
  Tensor out = transpose(a.value());
  return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Tensor& g) { t.accumulate(a, transpose(g)); });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const Shape orig = a.value().shape();
  return tape_of(a).record(std::move(out), {a},
                           [a, orig](Tape& t, const Tensor& g) { t.accumulate(a, g.reshaped(orig)); });
}

Tensor softmax_rows(const Tensor& logits) {
  const std::size_t n = logits.shape().back();
  const std::size_t rows = logits.size() / n;
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = logits.data().data() + r * n;
    double* y = out.data().data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  return out;
}

Var softmax_rows(const Var& logits) {
  Tensor out = softmax_rows(logits.value());
  Tensor y = out;
  return tape_of(logits).record(std::move(out), {logits}, [logits, y](Tape& t, const Tensor& g) {
    const std::size_t n = y.shape().back();
    const std::size_t rows = y.size() / n;
    Tensor gx(y.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t off = r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[off + j] * y[off + j];
      for (std::size_t j = 0; j < n; ++j) gx[off + j] = y[off + j] * (g[off + j] - dot);
    }
    t.accumulate(logits, gx);
  });
}

Tensor log_softmax_rows(const Tensor& logits) {
  const std::size_t n = logits.shape().back();
  const std::size_t rows = logits.size() / n;
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = logits.data().data() + r * n;
    double* y = out.data().data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(x[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) y[j] = x[j] - lse;
  }
  return out;
}

Var log_softmax_rows(const Var& logits) {
  Tensor out = log_softmax_rows(logits.value());
  Tensor y = out;
  return tape_of(logits).record(std::move(out), {logits}, [logits, y](Tape& t, const Tensor& g) {
    const std::size_t n = y.shape().back();
    const std::size_t rows = y.size() / n;
    Tensor gx(y.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t off = r * n;
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j) gs += g[off + j];
      for (std::size_t j = 0; j < n; ++j) gx[off + j] = g[off + j] - std::exp(y[off + j]) * gs;
    }
    t.accumulate(logits, gx);
  });
}

// --- convolution ------------------------------------------------------------

namespace {

struct ConvGeom {
  MapDims in;
  std::size_t out_c, k, out_h, out_w, stride, dilation;
  long pad;
};

ConvGeom conv_geometry(const Shape& in, const Shape& kernel, Conv2dOptions opts) {
  const auto d = map_dims(in, "conv2d");
  if (kernel.size() != 4) throw DimensionError("conv2d: kernel must be C_out x C_in x k x k, got " + shape_str(kernel));
  if (kernel[2] != kernel[3]) throw ParameterError("conv2d: kernel must be square, got " + shape_str(kernel));
  if (kernel[2] % 2 == 0) throw ParameterError("conv2d: kernel size must be odd, got " + std::to_string(kernel[2]));
  if (kernel[1] != d.channels) {
    throw DimensionError("conv2d: kernel " + shape_str(kernel) + " does not match input " + shape_str(in));
  }
  if (opts.stride == 0 || opts.dilation == 0) throw ParameterError("conv2d: stride and dilation must be positive");
  ConvGeom g{};
  g.in = d;
  g.out_c = kernel[0];
  g.k = kernel[2];
  g.stride = opts.stride;
  g.dilation = opts.dilation;
  g.pad = static_cast<long>(opts.dilation * (g.k - 1) / 2);
  g.out_h = (d.height + opts.stride - 1) / opts.stride;
  g.out_w = (d.width + opts.stride - 1) / opts.stride;
  return g;
}

// Output indices [lo, hi) whose input tap at offset `off` lands inside [0, n).
std::pair<std::size_t, std::size_t> valid_range(long off, std::size_t n, std::size_t out_n, std::size_t stride) {
  const long s = static_cast<long>(stride);
  long lo = off >= 0 ? 0 : (-off + s - 1) / s;
  const long span = static_cast<long>(n) - off;
  long hi = span > 0 ? (span + s - 1) / s : 0;
  hi = std::min<long>(hi, static_cast<long>(out_n));
  if (lo > hi) lo = hi;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Visits (out_row, in_row) x (out_col range, in_col start) for every tap.
template <typename F>
void for_each_tap(const ConvGeom& g, F f) {
  for (std::size_t ky = 0; ky < g.k; ++ky) {
    const long offy = static_cast<long>(ky * g.dilation) - g.pad;
    const auto [ylo, yhi] = valid_range(offy, g.in.height, g.out_h, g.stride);
    for (std::size_t kx = 0; kx < g.k; ++kx) {
      const long offx = static_cast<long>(kx * g.dilation) - g.pad;
      const auto [xlo, xhi] = valid_range(offx, g.in.width, g.out_w, g.stride);
      f(ky, kx, ylo, yhi, offy, xlo, xhi, offx);
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, Conv2dOptions opts) {
  const auto g = conv_geometry(input.shape(), kernel.shape(), opts);
  Tensor out(map_shape(input.shape(), g.out_c, g.out_h, g.out_w));
  const std::size_t in_plane = g.in.height * g.in.width;
  const std::size_t out_plane = g.out_h * g.out_w;
  const std::size_t s = g.stride;
  for (std::size_t b = 0; b < g.in.batch; ++b) {
    for (std::size_t co = 0; co < g.out_c; ++co) {
      double* o = out.data().data() + (b * g.out_c + co) * out_plane;
      for (std::size_t ci = 0; ci < g.in.channels; ++ci) {
        const double* x = input.data().data() + (b * g.in.channels + ci) * in_plane;
        const double* w = kernel.data().data() + (co * g.in.channels + ci) * g.k * g.k;
        for_each_tap(g, [&](std::size_t ky, std::size_t kx, std::size_t ylo, std::size_t yhi, long offy,
                            std::size_t xlo, std::size_t xhi, long offx) {
          const double wv = w[ky * g.k + kx];
          if (wv == 0.0) return;
          for (std::size_t oy = ylo; oy < yhi; ++oy) {
            const double* xr = x + static_cast<std::size_t>(static_cast<long>(oy * s) + offy) * g.in.width;
            double* orow = o + oy * g.out_w;
            for (std::size_t ox = xlo; ox < xhi; ++ox) {
              orow[ox] += wv * xr[static_cast<std::size_t>(static_cast<long>(ox * s) + offx)];
            }
          }
        });
      }
    }
  }
  return out;
}

Var conv2d(const Var& input, const Var& kernel, Conv2dOptions opts) {
  const Tensor x = input.value();
  const Tensor w = kernel.value();
  Tensor out = conv2d(x, w, opts);
  return tape_of(input).record(std::move(out), {input, kernel}, [input, kernel, x, w, opts](Tape& t,
                                                                                          const Tensor& gout) {
    const auto g = conv_geometry(x.shape(), w.shape(), opts);
    const std::size_t in_plane = g.in.height * g.in.width;
    const std::size_t out_plane = g.out_h * g.out_w;
    const std::size_t s = g.stride;
    const bool need_x = t.requires_grad(input);
    const bool need_w = t.requires_grad(kernel);
    Tensor gx(x.shape());
    Tensor gw(w.shape());
    for (std::size_t b = 0; b < g.in.batch; ++b) {
      for (std::size_t co = 0; co < g.out_c; ++co) {
        const double* go = gout.data().data() + (b * g.out_c + co) * out_plane;
        for (std::size_t ci = 0; ci < g.in.channels; ++ci) {
          const double* xp = x.data().data() + (b * g.in.channels + ci) * in_plane;
          double* gxp = gx.data().data() + (b * g.in.channels + ci) * in_plane;
          const double* wp = w.data().data() + (co * g.in.channels + ci) * g.k * g.k;
          double* gwp = gw.data().data() + (co * g.in.channels + ci) * g.k * g.k;
          for_each_tap(g, [&](std::size_t ky, std::size_t kx, std::size_t ylo, std::size_t yhi, long offy,
                              std::size_t xlo, std::size_t xhi, long offx) {
            const double wv = wp[ky * g.k + kx];
            double acc = 0.0;
            for (std::size_t oy = ylo; oy < yhi; ++oy) {
              const std::size_t row = static_cast<std::size_t>(static_cast<long>(oy * s) + offy) * g.in.width;
              const double* gr = go + oy * g.out_w;
              for (std::size_t ox = xlo; ox < xhi; ++ox) {
                const std::size_t ix = row + static_cast<std::size_t>(static_cast<long>(ox * s) + offx);
                if (need_w) acc += gr[ox] * xp[ix];
                if (need_x) gxp[ix] += wv * gr[ox];
              }
            }
            gwp[ky * g.k + kx] += acc;
          });
        }
      }
    }
    t.accumulate(input, gx);
    t.accumulate(kernel, gw);
  });
}

Var add_channel_bias(const Var& input, const Var& bias) {
  const auto d = map_dims(input.value().shape(), "add_channel_bias");
  if (bias.value().size() != d.channels) {
    throw DimensionError("add_channel_bias: bias " + shape_str(bias.value().shape()) + " for input " +
                         shape_str(input.value().shape()));
  }
  const std::size_t plane = d.height * d.width;
  Tensor out = input.value();
  const auto& bv = bias.value();
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t c = 0; c < d.channels; ++c)
      for (std::size_t p = 0; p < plane; ++p) out[(b * d.channels + c) * plane + p] += bv[c];
  const Shape bshape = bv.shape();
  return tape_of(input).record(std::move(out), {input, bias}, [input, bias, d, plane, bshape](Tape& t,
                                                                                            const Tensor& g) {
    t.accumulate(input, g);
    Tensor gb(bshape);
    for (std::size_t b = 0; b < d.batch; ++b)
      for (std::size_t c = 0; c < d.channels; ++c)
        for (std::size_t p = 0; p < plane; ++p) gb[c] += g[(b * d.channels + c) * plane + p];
    t.accumulate(bias, gb);
  });
}

Var avg_pool2(const Var& input) {
  const auto& x = input.value();
  const auto d = map_dims(x.shape(), "avg_pool2");
  if (d.height % 2 || d.width % 2) throw DimensionError("avg_pool2: odd spatial size " + shape_str(x.shape()));
  const std::size_t oh = d.height / 2, ow = d.width / 2;
  Tensor out(map_shape(x.shape(), d.channels, oh, ow));
  const std::size_t maps = d.batch * d.channels;
  for (std::size_t m = 0; m < maps; ++m)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const std::size_t base = m * d.height * d.width;
        const double s = x[base + (2 * y) * d.width + 2 * xx] + x[base + (2 * y) * d.width + 2 * xx + 1] +
                         x[base + (2 * y + 1) * d.width + 2 * xx] + x[base + (2 * y + 1) * d.width + 2 * xx + 1];
        out[m * oh * ow + y * ow + xx] = 0.25 * s;
      }
  const Shape in_shape = x.shape();
  return tape_of(input).record(std::move(out), {input}, [input, in_shape, d, oh, ow, maps](Tape& t,
                                                                                          const Tensor& g) {
    Tensor gx(in_shape);
    for (std::size_t m = 0; m < maps; ++m)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const double v = 0.25 * g[m * oh * ow + y * ow + xx];
          const std::size_t base = m * d.height * d.width;
          gx[base + (2 * y) * d.width + 2 * xx] += v;
          gx[base + (2 * y) * d.width + 2 * xx + 1] += v;
          gx[base + (2 * y + 1) * d.width + 2 * xx] += v;
          gx[base + (2 * y + 1) * d.width + 2 * xx + 1] += v;
        }
    t.accumulate(input, gx);
  });
}

Tensor global_avg_pool(const Tensor& input) {
  const auto d = map_dims(input.shape(), "global_avg_pool");
  const std::size_t plane = d.height * d.width;
  Tensor out(input.rank() == 3 ? Shape{d.channels} : Shape{d.batch, d.channels});
  for (std::size_t m = 0; m < d.batch * d.channels; ++m) {
    double s = 0.0;
    for (std::size_t p = 0; p < plane; ++p) s += input[m * plane + p];
    out[m] = s / static_cast<double>(plane);
  }
  return out;
}

Var global_avg_pool(const Var& input) {
  Tensor out = global_avg_pool(input.value());
  const Shape in_shape = input.value().shape();
  return tape_of(input).record(std::move(out), {input}, [input, in_shape](Tape& t, const Tensor& g) {
    const auto d = map_dims(in_shape, "global_avg_pool");
    const std::size_t plane = d.height * d.width;
    Tensor gx(in_shape);
    for (std::size_t m = 0; m < d.batch * d.channels; ++m) {
      const double v = g[m] / static_cast<double>(plane);
      for (std::size_t p = 0; p < plane; ++p) gx[m * plane + p] = v;
    }
    t.accumulate(input, gx);
  });
}

Var broadcast_spatial(const Var& v, std::size_t height, std::size_t width) {
  const auto& x = v.value();
  if (x.rank() != 1 && x.rank() != 2) throw DimensionError("broadcast_spatial: expected C or B x C, got " + shape_str(x.shape()));
  const std::size_t plane = height * width;
  Shape shape = x.rank() == 1 ? Shape{x.dim(0), height, width} : Shape{x.dim(0), x.dim(1), height, width};
  Tensor out(shape);
  for (std::size_t m = 0; m < x.size(); ++m)
    for (std::size_t p = 0; p < plane; ++p) out[m * plane + p] = x[m];
  const Shape vshape = x.shape();
  return tape_of(v).record(std::move(out), {v}, [v, vshape, plane](Tape& t, const Tensor& g) {
    Tensor gv(vshape);
    for (std::size_t m = 0; m < gv.size(); ++m) {
      double s = 0.0;
      for (std::size_t p = 0; p < plane; ++p) s += g[m * plane + p];
      gv[m] = s;
    }
    t.accumulate(v, gv);
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const auto da = map_dims(a.value().shape(), "concat_channels");
  const auto db = map_dims(b.value().shape(), "concat_channels");
  if (a.value().rank() != b.value().rank() || da.batch != db.batch || da.height != db.height || da.width != db.width) {
    throw DimensionError("concat_channels: incompatible " + shape_str(a.value().shape()) + " and " +
                         shape_str(b.value().shape()));
  }
  const std::size_t plane = da.height * da.width;
  const std::size_t ca = da.channels * plane, cb = db.channels * plane;
  Tensor out(map_shape(a.value().shape(), da.channels + db.channels, da.height, da.width));
  for (std::size_t s = 0; s < da.batch; ++s) {
    std::copy_n(a.value().data().data() + s * ca, ca, out.data().data() + s * (ca + cb));
    std::copy_n(b.value().data().data() + s * cb, cb, out.data().data() + s * (ca + cb) + ca);
  }
  const Shape sa = a.value().shape(), sb = b.value().shape();
  const std::size_t batch = da.batch;
  return tape_of(a).record(std::move(out), {a, b}, [a, b, sa, sb, ca, cb, batch](Tape& t, const Tensor& g) {
    Tensor ga(sa), gb(sb);
    for (std::size_t s = 0; s < batch; ++s) {
      std::copy_n(g.data().data() + s * (ca + cb), ca, ga.data().data() + s * ca);
      std::copy_n(g.data().data() + s * (ca + cb) + ca, cb, gb.data().data() + s * cb);
    }
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  });
}

Tensor upsample_bilinear(const Tensor& input, std::size_t out_h, std::size_t out_w) {
  if (input.rank() != 3) throw DimensionError("upsample_bilinear: expected C x H x W, got " + shape_str(input.shape()));
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  Tensor out({c, out_h, out_w});
  auto coord = [](std::size_t dst, std::size_t in_n, std::size_t out_n) {
    double src = (static_cast<double>(dst) + 0.5) * static_cast<double>(in_n) / static_cast<double>(out_n) - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in_n - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, in_n - 1);
    return std::tuple{i0, i1, src - static_cast<double>(i0)};
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    const auto [y0, y1, fy] = coord(y, h, out_h);
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto [x0, x1, fx] = coord(x, w, out_w);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* p = input.data().data() + ch * h * w;
        const double top = p[y0 * w + x0] * (1 - fx) + p[y0 * w + x1] * fx;
        const double bot = p[y1 * w + x0] * (1 - fx) + p[y1 * w + x1] * fx;
        out[(ch * out_h + y) * out_w + x] = top * (1 - fy) + bot * fy;
      }
    }
  }
  return out;
}

// --- batch normalisation ----------------------------------------------------

Var batch_norm(const Var& input, const Var& gamma, const Var& beta, BatchNormState& state, Mode mode) {
  const Tensor x = input.value();
  const auto d = map_dims(x.shape(), "batch_norm");
  if (gamma.value().size() != d.channels || beta.value().size() != d.channels) {
    throw DimensionError("batch_norm: scale/shift length does not match " + std::to_string(d.channels) + " channels");
  }
  const std::size_t plane = d.height * d.width;
  const std::size_t count = d.batch * plane;
  const auto& gv = gamma.value();
  const auto& bv = beta.value();

  Tensor mu(Shape{d.channels}), inv_std(Shape{d.channels});
  if (mode == Mode::kTrain) {
    if (state.running_mean.size() != d.channels) {
      state.running_mean = Tensor(Shape{d.channels}, 0.0);
      state.running_var = Tensor(Shape{d.channels}, 1.0);
    }
    for (std::size_t c = 0; c < d.channels; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < d.batch; ++b)
        for (std::size_t p = 0; p < plane; ++p) s += x[(b * d.channels + c) * plane + p];
      const double m = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t b = 0; b < d.batch; ++b)
        for (std::size_t p = 0; p < plane; ++p) {
          const double dv = x[(b * d.channels + c) * plane + p] - m;
          ss += dv * dv;
        }
      const double var = ss / static_cast<double>(count);
      mu[c] = m;
      inv_std[c] = 1.0 / std::sqrt(var + state.eps);
      const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
      state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * m;
      state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    }
    state.populated = true;
  } else {
    if (!state.populated) throw StateError("batch_norm: eval mode before any training step populated running stats");
    for (std::size_t c = 0; c < d.channels; ++c) {
      mu[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
    }
  }

  Tensor xhat(x.shape());
  Tensor out(x.shape());
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t c = 0; c < d.channels; ++c)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t i = (b * d.channels + c) * plane + p;
        xhat[i] = (x[i] - mu[c]) * inv_std[c];
        out[i] = gv[c] * xhat[i] + bv[c];
      }

  const Tensor gamma_v = gv;
  return tape_of(input).record(
      std::move(out), {input, gamma, beta},
      [input, gamma, beta, xhat, inv_std, gamma_v, d, plane, count, mode](Tape& t, const Tensor& g) {
        Tensor gx(xhat.shape()), gg(Shape{d.channels}), gb(Shape{d.channels});
        for (std::size_t c = 0; c < d.channels; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t b = 0; b < d.batch; ++b)
            for (std::size_t p = 0; p < plane; ++p) {
              const std::size_t i = (b * d.channels + c) * plane + p;
              sum_g += g[i];
              sum_gx += g[i] * xhat[i];
            }
          gg[c] = sum_gx;
          gb[c] = sum_g;
          const double scale = gamma_v[c] * inv_std[c];
          const double n = static_cast<double>(count);
          for (std::size_t b = 0; b < d.batch; ++b)
            for (std::size_t p = 0; p < plane; ++p) {
              const std::size_t i = (b * d.channels + c) * plane + p;
              gx[i] = mode == Mode::kTrain ? scale * (g[i] - sum_g / n - xhat[i] * sum_gx / n) : scale * g[i];
            }
        }
        t.accumulate(input, gx);
        t.accumulate(gamma, gg);
        t.accumulate(beta, gb);
      });
}

}  // namespace ctxdepth
