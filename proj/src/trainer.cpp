#include "ctxdepth/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "ctxdepth/config.hpp"
#include "ctxdepth/error.hpp"
#include "ctxdepth/image_io.hpp"
#include "ctxdepth/ops.hpp"
#include "ctxdepth/random.hpp"

namespace ctxdepth {

namespace fs = std::filesystem;
using nlohmann::json;

InferenceKind parse_inference(const std::string& name) {
  if (name == "hard") return InferenceKind::kHard;
  if (name == "soft") return InferenceKind::kSoft;
  if (name == "ce-hard") return InferenceKind::kCeHard;
  if (name == "ce-soft") return InferenceKind::kCeSoft;
  throw ParameterError("unknown inference variant '" + name + "' (hard, soft, ce-hard, ce-soft)");
}

std::string inference_name(InferenceKind kind) {
  switch (kind) {
    case InferenceKind::kHard: return "hard";
    case InferenceKind::kSoft: return "soft";
    case InferenceKind::kCeHard: return "ce-hard";
    case InferenceKind::kCeSoft: return "ce-soft";
  }
  return "?";
}

NetworkConfig ExperimentConfig::effective_network() const {
  NetworkConfig n = network;
  n.head = loss;
  n.image_pooling = image_pooling;
  return n;
}

LossWeights ExperimentConfig::effective_loss_weights() const {
  LossWeights w = loss_weights;
  if (!attention_loss) w.attention = 0.0;
  return w;
}

DepthDiscretization ExperimentConfig::discretization() const {
  return build_discretization(d_min, d_max, network.bins);
}

void ExperimentConfig::validate() const {
  effective_network().validate();
  effective_loss_weights().validate();
  optimizer.validate();
  discretization();
  if (batch_size == 0) throw ParameterError("batch_size must be positive");
  if (epochs == 0) throw ParameterError("epochs must be positive");
  const bool ce = loss == LossKind::kCrossEntropy;
  if (ce && (inference == InferenceKind::kHard || inference == InferenceKind::kSoft)) {
    throw ParameterError("inference '" + inference_name(inference) + "' requires the ordinal loss");
  }
  if (!ce && (inference == InferenceKind::kCeHard || inference == InferenceKind::kCeSoft)) {
    throw ParameterError("inference '" + inference_name(inference) + "' requires the cross-entropy loss");
  }
  if (!manifest.empty()) {
    const auto m = load_manifest(manifest);
    if (m.bins != network.bins || m.d_min != d_min || m.d_max != d_max) {
      throw ParameterError("manifest discretization does not match the experiment config");
    }
    if (m.split("train").empty()) throw ParameterError("manifest has no training samples");
  } else {
    data.scene.validate();
    if (data.train == 0) throw ParameterError("synthetic data needs at least one training sample");
    if (data.scene.height != network.height || data.scene.width != network.width) {
      throw ParameterError("scene size does not match the network input size");
    }
  }
}

namespace {

json experiment_to_json(const ExperimentConfig& c) {
  return {{"manifest", c.manifest},
          {"data",
           {{"scene", c.data.scene}, {"train", c.data.train}, {"val", c.data.val}, {"test", c.data.test},
            {"seed", c.data.seed}}},
          {"network", c.network},
          {"discretization", {{"d_min", c.d_min}, {"d_max", c.d_max}}},
          {"loss_weights", c.loss_weights},
          {"optimizer",
           {{"base_lr", c.optimizer.base_lr},
            {"decoder_lr_multiplier", c.optimizer.decoder_lr_multiplier},
            {"momentum", c.optimizer.momentum},
            {"weight_decay", c.optimizer.weight_decay},
            {"poly_power", c.optimizer.poly_power}}},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"loss", c.loss == LossKind::kOrdinal ? "ordinal" : "ce"},
          {"inference", inference_name(c.inference)},
          {"attention_loss", c.attention_loss},
          {"image_pooling", c.image_pooling},
          {"hflip", c.hflip}};
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ParameterError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; })) {
      throw ParameterError("unknown key '" + k + "' in " + where);
    }
  }
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

ExperimentConfig parse_experiment(const std::string& text, const std::string& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(ParseError::Kind::kFormat, std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j,
             {"manifest", "data", "network", "discretization", "loss_weights", "optimizer", "batch_size", "epochs",
              "seed", "loss", "inference", "attention_loss", "image_pooling", "hflip"},
             "config");
  ExperimentConfig c;
  try {
    c.manifest = j.value("manifest", c.manifest);
    if (!c.manifest.empty() && fs::path(c.manifest).is_relative() && !base_dir.empty()) {
      c.manifest = (fs::path(base_dir) / c.manifest).lexically_normal().string();
    }
    if (j.contains("data")) {
      const auto& d = j.at("data");
      check_keys(d, {"scene", "train", "val", "test", "seed"}, "data");
      if (d.contains("scene")) c.data.scene = d.at("scene").get<SceneConfig>();
      c.data.train = d.value("train", c.data.train);
      c.data.val = d.value("val", c.data.val);
      c.data.test = d.value("test", c.data.test);
      c.data.seed = d.value("seed", c.data.seed);
    }
    if (j.contains("network")) c.network = j.at("network").get<NetworkConfig>();
    if (j.contains("discretization")) {
      const auto& d = j.at("discretization");
      check_keys(d, {"d_min", "d_max", "K"}, "discretization");
      c.d_min = d.value("d_min", c.d_min);
      c.d_max = d.value("d_max", c.d_max);
      if (d.contains("K")) c.network.bins = d.at("K").get<std::size_t>();
    }
    if (j.contains("loss_weights")) c.loss_weights = j.at("loss_weights").get<LossWeights>();
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      check_keys(o, {"base_lr", "decoder_lr_multiplier", "momentum", "weight_decay", "poly_power"}, "optimizer");
      c.optimizer.base_lr = o.value("base_lr", c.optimizer.base_lr);
      c.optimizer.decoder_lr_multiplier = o.value("decoder_lr_multiplier", c.optimizer.decoder_lr_multiplier);
      c.optimizer.momentum = o.value("momentum", c.optimizer.momentum);
      c.optimizer.weight_decay = o.value("weight_decay", c.optimizer.weight_decay);
      c.optimizer.poly_power = o.value("poly_power", c.optimizer.poly_power);
    }
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    if (j.contains("loss")) {
      const auto l = j.at("loss").get<std::string>();
      if (l != "ordinal" && l != "ce") throw ParameterError("loss must be 'ordinal' or 'ce', got '" + l + "'");
      c.loss = l == "ordinal" ? LossKind::kOrdinal : LossKind::kCrossEntropy;
    }
    if (j.contains("inference")) c.inference = parse_inference(j.at("inference").get<std::string>());
    c.attention_loss = j.value("attention_loss", c.attention_loss);
    c.image_pooling = j.value("image_pooling", c.image_pooling);
    c.hflip = j.value("hflip", c.hflip);
  } catch (const json::exception& e) {
    throw ParameterError(std::string("config has a wrongly typed value: ") + e.what());
  }
  return c;
}

ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(ParseError::Kind::kIo, "cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment(ss.str(), fs::path(path).parent_path().string());
}

std::string experiment_json(const ExperimentConfig& cfg) { return experiment_to_json(cfg).dump(2); }

Dataset make_synthetic_dataset(const SyntheticData& data) {
  data.scene.validate();
  Dataset ds;
  std::uint64_t s = data.seed;
  for (std::size_t i = 0; i < data.train; ++i) ds.train.push_back(generate_scene(s++, data.scene));
  for (std::size_t i = 0; i < data.val; ++i) ds.val.push_back(generate_scene(s++, data.scene));
  for (std::size_t i = 0; i < data.test; ++i) ds.test.push_back(generate_scene(s++, data.scene));
  return ds;
}

Dataset load_dataset(const ExperimentConfig& cfg) {
  if (cfg.manifest.empty()) return make_synthetic_dataset(cfg.data);
  const auto m = load_manifest(cfg.manifest);
  Dataset ds;
  for (const auto& e : m.samples) {
    auto s = read_sample(e.rgb, e.depth);
    if (e.split == "train") ds.train.push_back(std::move(s));
    else if (e.split == "val") ds.val.push_back(std::move(s));
    else ds.test.push_back(std::move(s));
  }
  return ds;
}

GridTarget make_grid_target(const SceneSample& sample, const NetworkConfig& net, const DepthDiscretization& disc) {
  const std::size_t stride = net.output_stride();
  auto [depth, valid] = downsample_log_depth(sample.depth, sample.valid, sample.height, sample.width, stride);
  GridTarget t;
  t.labels.assign(depth.size(), 0);
  double max_depth = disc.d_max;
  for (std::size_t i = 0; i < depth.size(); ++i) {
    if (!valid[i]) continue;
    t.labels[i] = quantize_depth(depth[i], disc);
    max_depth = std::max(max_depth, depth[i]);
  }
  t.attention = gt_attention_weights(depth, 1.05 * max_depth, valid);
  t.depth = std::move(depth);
  t.valid = std::move(valid);
  return t;
}

const MetricReport& EvalResult::report(InferenceKind kind) const {
  return (kind == InferenceKind::kHard || kind == InferenceKind::kCeHard) ? primary : secondary;
}

namespace {

Tensor stack_rgb(const std::vector<const SceneSample*>& batch) {
  const auto& first = *batch.front();
  Tensor out({batch.size(), 3, first.height, first.width});
  const std::size_t per = 3 * first.height * first.width;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto src = batch[b]->rgb.data();
    if (src.size() != per) throw DimensionError("batch samples differ in size");
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(b * per));
  }
  return out;
}

Tensor slice_rows(const Tensor& m, std::size_t start, std::size_t count) {
  const std::size_t c = m.dim(1);
  Tensor out({count, c});
  std::copy_n(m.data().begin() + static_cast<std::ptrdiff_t>(start * c), count * c, out.data().begin());
  return out;
}

std::vector<double> upsample_depth(const std::vector<double>& grid, std::size_t h, std::size_t w, std::size_t out_h,
                                   std::size_t out_w) {
  return upsample_bilinear(Tensor({1, h, w}, grid), out_h, out_w).vec();
}

}  // namespace

EvalResult evaluate_model(Network& net, const std::vector<SceneSample>& samples, const DepthDiscretization& disc,
                          std::size_t batch_size, bool keep_maps) {
  if (samples.empty()) throw EvaluationError("evaluate_model: no samples");
  if (batch_size == 0) throw ParameterError("evaluate_model: batch_size must be positive");
  const auto& cfg = net.config();
  if (cfg.bins != disc.bins) throw LoadError("checkpoint has K=" + std::to_string(cfg.bins) +
                                             " but the discretization has K=" + std::to_string(disc.bins));
  const bool ordinal = cfg.head == LossKind::kOrdinal;
  const std::size_t k = disc.bins;

  std::vector<double> pred_a, pred_b, gt;
  Mask valid;
  std::vector<std::size_t> pred_labels, gt_labels;
  Mask grid_valid;
  double kl_sum = 0.0;
  std::size_t kl_rows = 0, curves = 0, monotone = 0;
  EvalResult res;

  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    std::vector<const SceneSample*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&samples[i]);
    Tape tape;
    const auto out = net.forward(tape, stack_rgb(batch), Mode::kEval);
    const Tensor& logits = out.logits.value();
    const Tensor& att = out.attention.value();
    const std::size_t h = out.grid_height, w = out.grid_width, n = h * w;

    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& s = *batch[b];
      const auto target = make_grid_target(s, cfg, disc);
      const Tensor rows = slice_rows(logits, b * n, n);
      std::vector<double> da, db;
      std::vector<std::size_t> labels;
      if (ordinal) {
        const auto o = make_ordinal_output(rows);
        const auto hard = hard_infer(o, disc);
        const auto soft = soft_infer(o, disc);
        da = hard.depth;
        db = soft.depth;
        labels = hard.label;
        for (std::size_t i = 0; i < n; ++i) {
          bool mono = true;
          for (std::size_t c = 1; c < k; ++c) mono = mono && o.probs.at(i, c) <= o.probs.at(i, c - 1) + kMonotoneSlack;
          monotone += mono;
          ++curves;
        }
        if (start == 0 && b == 0) {
          const std::vector<std::size_t> px = {0, n / 2, n - 1};
          res.probability_curves = dump_probability_curves(o, px);
        }
      } else {
        const Tensor p = softmax_rows(rows);
        da = ce_hard_infer(p, disc);
        db = ce_soft_infer(p, disc);
        labels = ce_labels(p);
      }
      for (std::size_t i = 0; i < n; ++i) {
        pred_labels.push_back(std::min(labels[i], k - 1));
        gt_labels.push_back(target.labels[i]);
        grid_valid.push_back(target.valid[i]);
      }

      Tensor att_b({n, n});
      std::copy_n(att.data().begin() + static_cast<std::ptrdiff_t>(b * n * n), n * n, att_b.data().begin());
      const std::size_t nv = static_cast<std::size_t>(std::count(target.valid.begin(), target.valid.end(), 1));
      kl_sum += attention_loss(att_b, target.attention, target.valid) * static_cast<double>(nv);
      kl_rows += nv;

      auto ua = upsample_depth(da, h, w, s.height, s.width);
      auto ub = upsample_depth(db, h, w, s.height, s.width);
      pred_a.insert(pred_a.end(), ua.begin(), ua.end());
      pred_b.insert(pred_b.end(), ub.begin(), ub.end());
      gt.insert(gt.end(), s.depth.begin(), s.depth.end());
      valid.insert(valid.end(), s.valid.begin(), s.valid.end());
      if (keep_maps) {
        res.depth_maps.push_back(std::move(ub));
        res.attention_maps.push_back(std::move(att_b));
      }
    }
  }

  res.primary = evaluate(pred_a, gt, valid);
  res.secondary = evaluate(pred_b, gt, valid);
  res.confusion = confusion_matrix(pred_labels, gt_labels, grid_valid, k);
  res.diagonal_mass = diagonal_mass(res.confusion);
  res.attention_kl = kl_rows ? kl_sum / static_cast<double>(kl_rows) : 0.0;
  res.monotone_fraction = curves ? static_cast<double>(monotone) / static_cast<double>(curves) : 1.0;
  return res;
}

std::size_t steps_per_epoch(const ExperimentConfig& cfg, std::size_t train_size) {
  return (train_size + cfg.batch_size - 1) / cfg.batch_size;
}

namespace {

struct PreparedSample {
  const SceneSample* sample;
  GridTarget target;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(ParseError::Kind::kIo, "cannot write " + path.string());
  out << text;
}

std::string checkpoint_extra(const ExperimentConfig& cfg) {
  json extra = {{"discretization", discretization_json(cfg.discretization())},
                {"experiment", experiment_to_json(cfg)}};
  return extra.dump();
}

}  // namespace

TrainResult train(const ExperimentConfig& cfg, const Dataset& data, const TrainOptions& opts) {
  cfg.validate();
  if (data.train.empty()) throw ParameterError("train: empty training split");
  const auto disc = cfg.discretization();
  const auto netcfg = cfg.effective_network();
  const auto weights = cfg.effective_loss_weights();
  const bool ordinal = cfg.loss == LossKind::kOrdinal;

  // Flipped copies are prepared up front so every step is a lookup.
  std::vector<SceneSample> flipped;
  if (cfg.hflip) {
    flipped.reserve(data.train.size());
    for (const auto& s : data.train) flipped.push_back(flip_horizontal(s));
  }
  std::vector<PreparedSample> prepared, prepared_flip;
  for (const auto& s : data.train) prepared.push_back({&s, make_grid_target(s, netcfg, disc)});
  for (const auto& s : flipped) prepared_flip.push_back({&s, make_grid_target(s, netcfg, disc)});

  const std::size_t spe = steps_per_epoch(cfg, data.train.size());
  const std::size_t total_steps = spe * cfg.epochs;
  TrainResult result{Network(netcfg, cfg.seed), std::nullopt, {}, {}, {}, 0.0, total_steps};
  Network& net = result.network;
  OptimizerState opt(cfg.optimizer, total_steps);
  auto params = net.parameters();

  fs::path out_dir;
  if (!opts.out_dir.empty()) {
    out_dir = opts.out_dir;
    fs::create_directories(out_dir);
    write_text(out_dir / "config.json", experiment_json(cfg) + "\n");
  }

  std::string& log = result.step_csv;
  log = "step,l_att,l_ord,total,lr\n";
  std::string& vlog = result.validation_csv;
  vlog = "epoch,inference," + MetricReport::csv_header() + "\n";
  const auto names = ordinal ? std::pair<InferenceKind, InferenceKind>{InferenceKind::kHard, InferenceKind::kSoft}
                             : std::pair<InferenceKind, InferenceKind>{InferenceKind::kCeHard, InferenceKind::kCeSoft};
  double best = INFINITY;

  Rng rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 0x5EED);
  std::vector<std::size_t> order(data.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t b = 0; b < spe; ++b, ++step) {
      const std::size_t lo = b * cfg.batch_size, hi = std::min(order.size(), lo + cfg.batch_size);
      std::vector<const PreparedSample*> batch;
      for (std::size_t i = lo; i < hi; ++i) {
        const bool flip = cfg.hflip && rng.uniform() < 0.5;
        batch.push_back(flip ? &prepared_flip[order[i]] : &prepared[order[i]]);
      }

      std::vector<const SceneSample*> samples;
      std::vector<std::size_t> labels;
      Mask valid;
      const std::size_t n = batch.front()->target.labels.size();
      Tensor target({batch.size(), n, n});
      for (std::size_t j = 0; j < batch.size(); ++j) {
        const auto& t = batch[j]->target;
        samples.push_back(batch[j]->sample);
        labels.insert(labels.end(), t.labels.begin(), t.labels.end());
        valid.insert(valid.end(), t.valid.begin(), t.valid.end());
        std::copy(t.attention.data().begin(), t.attention.data().end(),
                  target.data().begin() + static_cast<std::ptrdiff_t>(j * n * n));
      }

      Tape tape(cfg.seed);
      const auto out = net.forward(tape, stack_rgb(samples), Mode::kTrain);
      const Var l_att = attention_loss(out.attention, target, valid);
      const Var l_ord = ordinal ? ordinal_loss(out.logits, labels, valid) : cross_entropy_loss(out.logits, labels, valid);
      const Var total = total_loss(l_att, l_ord, weights);
      const double lr = opt.lr();

      if (!std::isfinite(total.item())) {
        std::ostringstream msg;
        msg << "non-finite loss at step " << step << " (epoch " << epoch << ", batch " << b << ", seed " << cfg.seed
            << ")";
        if (!out_dir.empty()) {
          json dump = {{"step", step}, {"epoch", epoch}, {"batch", b}, {"seed", cfg.seed},
                       {"l_att", fmt17(l_att.item())}, {"l_ord", fmt17(l_ord.item())}, {"lr", lr}};
          std::vector<std::uint64_t> seeds;
          for (const auto* s : samples) seeds.push_back(s->seed);
          dump["sample_seeds"] = seeds;
          write_text(out_dir / "nan_dump.json", dump.dump(2) + "\n");
          net.save((out_dir / "nan_state.ckpt").string(), checkpoint_extra(cfg));
          msg << "; diagnostics in " << (out_dir / "nan_dump.json").string();
        }
        if (!out_dir.empty()) write_text(out_dir / "train_log.csv", log);
        throw TrainingError(msg.str());
      }

      for (auto* p : params) p->zero_grad();
      tape.backward(total);
      sgd_step(params, opt);

      log += std::to_string(step) + "," + fmt17(l_att.item()) + "," + fmt17(l_ord.item()) + "," +
             fmt17(total.item()) + "," + fmt17(lr) + "\n";
      result.losses.push_back(total.item());
      if (opts.on_step) opts.on_step(step, total.item());
      if (opts.verbose && (step % 50 == 0 || step + 1 == total_steps)) {
        std::fprintf(stderr, "step %zu/%zu  l_att %.5f  l_ord %.5f  lr %.3g\n", step, total_steps, l_att.item(),
                     l_ord.item(), lr);
      }
    }

    const bool last = epoch + 1 == cfg.epochs;
    if (!data.val.empty() && (opts.validate_each_epoch || last)) {
      const auto ev = evaluate_model(net, data.val, disc, cfg.batch_size);
      vlog += std::to_string(epoch) + "," + inference_name(names.first) + "," + ev.primary.csv_line() + "\n";
      vlog += std::to_string(epoch) + "," + inference_name(names.second) + "," + ev.secondary.csv_line() + "\n";
      const double rmse = ev.report(cfg.inference).rmse;
      if (rmse < best) {
        best = rmse;
        result.best = net;
        if (!out_dir.empty()) net.save((out_dir / "best.ckpt").string(), checkpoint_extra(cfg));
      }
      if (opts.verbose) {
        std::fprintf(stderr, "epoch %zu  val rmse %s %.4f  %s %.4f\n", epoch, inference_name(names.first).c_str(),
                     ev.primary.rmse, inference_name(names.second).c_str(), ev.secondary.rmse);
      }
    }
  }
  result.best_val_rmse = best;

  if (!out_dir.empty()) {
    net.save((out_dir / "final.ckpt").string(), checkpoint_extra(cfg));
    write_text(out_dir / "train_log.csv", log);
    write_text(out_dir / "val_log.csv", vlog);
  }
  return result;
}

}  // namespace ctxdepth
