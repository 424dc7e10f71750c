#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ctxdepth/discretization.hpp"
#include "ctxdepth/losses.hpp"
#include "ctxdepth/metrics.hpp"
#include "ctxdepth/model.hpp"
#include "ctxdepth/optimizer.hpp"
#include "ctxdepth/scene.hpp"

namespace ctxdepth {

enum class InferenceKind { kHard, kSoft, kCeHard, kCeSoft };

InferenceKind parse_inference(const std::string& name);
std::string inference_name(InferenceKind kind);

/// Synthetic dataset description used when no manifest is given.
struct SyntheticData {
  SceneConfig scene;
  std::size_t train = 160;
  std::size_t val = 20;
  std::size_t test = 20;
  std::uint64_t seed = 1000;
};

/// Everything a training run depends on. JSON keys mirror the field names.
struct ExperimentConfig {
  std::string manifest;  // empty: generate `data` in memory
  SyntheticData data;
  NetworkConfig network;
  double d_min = 0.5;
  double d_max = 10.0;
  LossWeights loss_weights;
  OptimizerConfig optimizer;
  std::size_t batch_size = 8;
  std::size_t epochs = 75;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::kOrdinal;
  InferenceKind inference = InferenceKind::kSoft;
  bool attention_loss = true;
  bool image_pooling = true;
  bool hflip = false;

  /// Network config with the head and pooling flags applied.
  NetworkConfig effective_network() const;
  /// alpha_att forced to 0 when the attention loss is switched off.
  LossWeights effective_loss_weights() const;
  DepthDiscretization discretization() const;
  /// Throws ParameterError for invalid combinations (ce-soft without the
  /// cross-entropy loss, bin count mismatches, unreadable manifest, ...).
  void validate() const;
};

ExperimentConfig load_experiment(const std::string& path);
std::string experiment_json(const ExperimentConfig& cfg);
/// Parses a JSON document; relative manifest paths resolve against `base_dir`.
ExperimentConfig parse_experiment(const std::string& text, const std::string& base_dir = "");

struct Dataset {
  std::vector<SceneSample> train;
  std::vector<SceneSample> val;
  std::vector<SceneSample> test;
};

/// Generates or loads the data named by the config.
Dataset load_dataset(const ExperimentConfig& cfg);
Dataset make_synthetic_dataset(const SyntheticData& data);

/// Per-sample supervision at the network's output grid.
struct GridTarget {
  std::vector<double> depth;  // h*w, log-averaged
  Mask valid;
  std::vector<std::size_t> labels;
  Tensor attention;  // N x N target weights
};

/// Target attention uses d_max = 1.05 * max(disc.d_max, largest grid depth).
GridTarget make_grid_target(const SceneSample& sample, const NetworkConfig& net, const DepthDiscretization& disc);

/// Largest rise between consecutive ordinal probabilities still counted as
/// non-increasing; saturated curves wobble around 1 and 0 by ~1e-4.
inline constexpr double kMonotoneSlack = 0.05;

struct EvalResult {
  MetricReport primary;    // hard or ce-hard
  MetricReport secondary;  // soft or ce-soft
  Tensor confusion;        // K x K at grid resolution
  double diagonal_mass = 0.0;
  double attention_kl = 0.0;  // mean row-wise KL(W* || W) over valid rows
  /// Fraction of ordinal probability curves that are non-increasing in k
  /// (up to kMonotoneSlack).
  double monotone_fraction = 1.0;
  std::string probability_curves;                 // CSV rows for a few pixels
  std::vector<std::vector<double>> depth_maps;    // full resolution, per sample
  std::vector<Tensor> attention_maps;             // N x N per sample

  const MetricReport& report(InferenceKind kind) const;
};

/// Eval-mode forward over `samples` in batches; depth is bilinearly upsampled
/// to input resolution before scoring.
EvalResult evaluate_model(Network& net, const std::vector<SceneSample>& samples, const DepthDiscretization& disc,
                          std::size_t batch_size = 8, bool keep_maps = false);

struct TrainOptions {
  std::string out_dir;  // empty: nothing is written
  bool verbose = false;
  bool validate_each_epoch = true;
  /// Called after every optimizer step with (step, total loss).
  std::function<void(std::size_t, double)> on_step;
};

struct TrainResult {
  Network network;  // final weights
  std::optional<Network> best;
  std::string step_csv;        // "step,l_att,l_ord,total,lr"
  std::string validation_csv;  // "epoch,inference,<metrics>"
  std::vector<double> losses;  // total loss per step
  double best_val_rmse = 0.0;
  std::size_t steps = 0;
};

/// Runs epochs x ceil(train / batch) SGD steps. Deterministic per config and
/// seed. Throws TrainingError on a non-finite loss after writing a diagnostic
/// dump (when an output directory is set).
TrainResult train(const ExperimentConfig& cfg, const Dataset& data, const TrainOptions& opts = {});

std::size_t steps_per_epoch(const ExperimentConfig& cfg, std::size_t train_size);

}  // namespace ctxdepth
