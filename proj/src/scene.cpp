#include "ctxdepth/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ctxdepth/error.hpp"
#include "ctxdepth/random.hpp"

namespace ctxdepth {

void SceneConfig::validate() const {
  if (height < 8 || width < 8) throw ParameterError("scene size must be at least 8 x 8");
  if (!(d_min > 0.0) || !(d_max > d_min)) throw ParameterError("scene depth range must satisfy 0 < d_min < d_max");
  if (min_objects == 0 || max_objects < min_objects) {
    throw ParameterError("scene object count range must satisfy 1 <= min_objects <= max_objects");
  }
  if (texture_amplitude < 0.0 || !(texture_period_min > 0.0) || texture_period_max < texture_period_min) {
    throw ParameterError("invalid texture parameters");
  }
  if (smoothness_bins == 0 || !(max_jump_fraction > 0.0 && max_jump_fraction < 1.0)) {
    throw ParameterError("invalid smoothness parameters");
  }
}

namespace {

struct Stripe {
  double amplitude, cos_t, sin_t, period, phase;

  double at(double x, double y) const {
    return amplitude * std::sin(2.0 * M_PI * (x * cos_t + y * sin_t) / period + phase);
  }
};

Stripe random_stripe(Rng& rng, const SceneConfig& cfg) {
  const double theta = rng.uniform(0.0, M_PI);
  return {cfg.texture_amplitude, std::cos(theta), std::sin(theta),
          rng.uniform(cfg.texture_period_min, cfg.texture_period_max), rng.uniform(0.0, 2.0 * M_PI)};
}

struct Object {
  bool ellipse;
  double cx, cy, rx, ry;
  double log_depth, gx, gy;
  Stripe texture;

  bool contains(double x, double y) const {
    const double dx = (x - cx) / rx, dy = (y - cy) / ry;
    return ellipse ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
  }
};

}  // namespace

SceneSample generate_scene(std::uint64_t seed, const SceneConfig& cfg) {
  cfg.validate();
  Rng rng(seed);
  const std::size_t h = cfg.height, w = cfg.width;
  const double lo = std::log(cfg.d_min), hi = std::log(cfg.d_max), span = hi - lo;
  const double fh = static_cast<double>(h), fw = static_cast<double>(w);

  // Background: a receding ground plane, far at the top and near at the bottom.
  const double bg_top = hi - span * rng.uniform(0.0, 0.25);
  const double bg_bottom = lo + span * rng.uniform(0.05, 0.5);
  const double bg_tilt = span * rng.uniform(-0.1, 0.1);
  const Stripe bg_texture = random_stripe(rng, cfg);
  auto background = [&](double x, double y) {
    const double v = y / (fh - 1.0);
    return bg_top + (bg_bottom - bg_top) * v + bg_tilt * (x / (fw - 1.0) - 0.5);
  };

  const std::size_t count = cfg.min_objects + rng.below(cfg.max_objects - cfg.min_objects + 1);
  std::vector<Object> objects(count);
  for (auto& o : objects) {
    o.ellipse = rng.uniform() < 0.5;
    o.rx = fw * rng.uniform(0.08, 0.2);
    o.ry = fh * rng.uniform(0.08, 0.2);
    o.cx = rng.uniform(0.0, fw - 1.0);
    o.cy = rng.uniform(0.0, fh - 1.0);
    // Objects stand in front of the background at their centre.
    const double behind = background(o.cx, o.cy);
    o.log_depth = lo + (behind - lo) * rng.uniform(0.05, 0.9);
    o.gx = span * rng.uniform(-0.15, 0.15);
    o.gy = span * rng.uniform(-0.15, 0.15);
    o.texture = random_stripe(rng, cfg);
  }
  // Painter's order: far objects first so nearer ones occlude them.
  std::stable_sort(objects.begin(), objects.end(),
                   [](const Object& a, const Object& b) { return a.log_depth > b.log_depth; });

  std::vector<double> tint(3);
  for (auto& t : tint) t = rng.uniform(0.7, 1.0);

  auto render = [&]() {
    SceneSample s;
    s.height = h;
    s.width = w;
    s.seed = seed;
    s.config = cfg;
    s.rgb = Tensor({3, h, w});
    s.depth.resize(h * w);
    s.valid.assign(h * w, 1);

    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double fx = static_cast<double>(x), fy = static_cast<double>(y);
        double ld = background(fx, fy);
        double tex = bg_texture.at(fx, fy);
        for (const auto& o : objects) {
          if (!o.contains(fx, fy)) continue;
          ld = o.log_depth + o.gx * (fx - o.cx) / fw + o.gy * (fy - o.cy) / fh;
          tex = o.texture.at(fx, fy);
        }
        ld = std::clamp(ld, lo, hi);
        const std::size_t i = y * w + x;
        s.depth[i] = std::clamp(std::exp(ld), cfg.d_min, cfg.d_max);
        // Shading falls off monotonically with log depth.
        const double shade = 0.15 + 0.75 * (1.0 - (ld - lo) / span);
        for (std::size_t c = 0; c < 3; ++c) {
          s.rgb[c * h * w + i] = std::clamp(tint[c] * shade + tex, 0.0, 1.0);
        }
      }
    }
  return s;
  };

  // Enforce piecewise smoothness: drop the nearest object, then shrink the
  // last one, until few enough pixels sit on a depth discontinuity.
  const double jump_threshold = span / static_cast<double>(cfg.smoothness_bins);
  SceneSample s = render();
  while (log_jump_fraction(s, jump_threshold) > cfg.max_jump_fraction) {
    if (objects.size() > 1) {
      objects.pop_back();
    } else {
      objects[0].rx *= 0.8;
      objects[0].ry *= 0.8;
    }
    s = render();
  }
  return s;
}

SceneSample sparsify_mask(const SceneSample& sample, double keep_fraction, SparsePattern pattern,
                          std::uint64_t seed) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    throw ParameterError("sparsify_mask: keep fraction must be in (0, 1]");
  }
  SceneSample out = sample;
  if (keep_fraction == 1.0) return out;
  const std::size_t h = sample.height, w = sample.width, n = h * w;
  Mask keep(n, 0);
  if (pattern == SparsePattern::kRows) {
    const auto rows = static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(h)));
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t y = r * h / rows;
      std::fill_n(keep.begin() + static_cast<std::ptrdiff_t>(y * w), w, 1);
    }
  } else {
    const auto target = static_cast<std::size_t>(std::llround(keep_fraction * static_cast<double>(n)));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    for (std::size_t i = 0; i < target; ++i) {
      const std::size_t j = i + rng.below(n - i);
      std::swap(idx[i], idx[j]);
      keep[idx[i]] = 1;
    }
  }
  for (std::size_t i = 0; i < n; ++i) out.valid[i] = out.valid[i] && keep[i];
  return out;
}

SceneSample flip_horizontal(const SceneSample& sample) {
  SceneSample out = sample;
  const std::size_t h = sample.height, w = sample.width;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t src = y * w + (w - 1 - x), dst = y * w + x;
      out.depth[dst] = sample.depth[src];
      out.valid[dst] = sample.valid[src];
      for (std::size_t c = 0; c < 3; ++c) out.rgb[c * h * w + dst] = sample.rgb[c * h * w + src];
    }
  return out;
}

double log_jump_fraction(const SceneSample& sample, double log_threshold) {
  const std::size_t h = sample.height, w = sample.width;
  std::size_t jumps = 0;
  auto jump = [&](std::size_t a, std::size_t b) {
    return sample.valid[a] && sample.valid[b] &&
           std::abs(std::log(sample.depth[a]) - std::log(sample.depth[b])) > log_threshold;
  };
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      const bool any = (x + 1 < w && jump(i, i + 1)) || (x > 0 && jump(i, i - 1)) ||
                       (y + 1 < h && jump(i, i + w)) || (y > 0 && jump(i, i - w));
      jumps += any ? 1 : 0;
    }
  return static_cast<double>(jumps) / static_cast<double>(h * w);
}

}  // namespace ctxdepth
