// Command-line front end: dataset generation, training, evaluation,
// single-image inference, gradient checks and report aggregation.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "ctxdepth/config.hpp"
#include "ctxdepth/error.hpp"
#include "ctxdepth/gradcheck.hpp"
#include "ctxdepth/image_io.hpp"
#include "ctxdepth/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ctxdepth;

namespace {

struct Common {
  std::string config;
  std::string out = "out";
  std::int64_t seed = -1;
  std::string inference;
  std::string loss;
  bool no_attention_loss = false;
  bool no_image_pooling = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Experiment config (JSON)");
  app->add_option("--out", c.out, "Output directory");
  app->add_option("--seed", c.seed, "Overrides the config seed");
  app->add_option("--inference", c.inference, "Depth decoding")->check(CLI::IsMember({"hard", "soft", "ce-hard", "ce-soft"}));
  app->add_option("--loss", c.loss, "Classification loss")->check(CLI::IsMember({"ordinal", "ce"}));
  app->add_flag("--no-attention-loss", c.no_attention_loss, "Train with alpha_att = 0");
  app->add_flag("--no-image-pooling", c.no_image_pooling, "Zero the image pooling branch");
}

ExperimentConfig resolve_config(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_experiment(c.config);
  if (c.seed >= 0) cfg.seed = static_cast<std::uint64_t>(c.seed);
  if (!c.loss.empty()) {
    cfg.loss = c.loss == "ce" ? LossKind::kCrossEntropy : LossKind::kOrdinal;
    // Follow the loss unless the decoding was given explicitly.
    if (c.inference.empty()) cfg.inference = c.loss == "ce" ? InferenceKind::kCeSoft : InferenceKind::kSoft;
  }
  if (!c.inference.empty()) cfg.inference = parse_inference(c.inference);
  if (c.no_attention_loss) cfg.attention_loss = false;
  if (c.no_image_pooling) cfg.image_pooling = false;
  cfg.validate();
  return cfg;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ParseError(ParseError::Kind::kIo, "cannot write " + p.string());
  out << text;
}

std::string matrix_csv(const Tensor& m) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t r = 0; r < m.dim(0); ++r) {
    for (std::size_t c = 0; c < m.dim(1); ++c) os << (c ? "," : "") << m.at(r, c);
    os << "\n";
  }
  return os.str();
}

// Scales a map to the full 16-bit range (nearest-neighbour enlargement).
Gray16 to_gray16(const std::vector<double>& v, std::size_t h, std::size_t w, std::size_t scale) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double range = *hi - *lo;
  Gray16 g{h * scale, w * scale, std::vector<std::uint16_t>(h * w * scale * scale)};
  for (std::size_t y = 0; y < g.height; ++y)
    for (std::size_t x = 0; x < g.width; ++x) {
      const double t = range > 0 ? (v[(y / scale) * w + x / scale] - *lo) / range : 0.0;
      g.pixels[y * g.width + x] = static_cast<std::uint16_t>(std::lround(t * 65535.0));
    }
  return g;
}

void write_depth_map(const fs::path& p, const std::vector<double>& depth, std::size_t h, std::size_t w,
                     const DepthDiscretization& disc) {
  DepthMap m;
  m.height = h;
  m.width = w;
  m.depth = depth;
  m.valid.assign(depth.size(), 1);
  m.d_lo = disc.d_min;
  m.d_hi = disc.d_max;
  write_depth(p.string(), m);
}

void write_attention_maps(const fs::path& dir, const std::string& prefix, const Tensor& att, std::size_t gh,
                          std::size_t gw, std::size_t scale) {
  const std::size_t n = gh * gw;
  const std::vector<std::pair<std::string, std::size_t>> queries = {
      {"center", (gh / 2) * gw + gw / 2}, {"top_left", 0}, {"bottom_right", n - 1}};
  for (const auto& [name, q] : queries) {
    std::vector<double> row(att.data().begin() + static_cast<std::ptrdiff_t>(q * n),
                            att.data().begin() + static_cast<std::ptrdiff_t>((q + 1) * n));
    write_pgm16((dir / (prefix + "attention_" + name + ".pgm")).string(), to_gray16(row, gh, gw, scale));
  }
}

json eval_json(const EvalResult& ev, bool ordinal) {
  json j = {{ordinal ? "hard" : "ce-hard", ev.primary},
            {ordinal ? "soft" : "ce-soft", ev.secondary},
            {"diagonal_mass", ev.diagonal_mass},
            {"attention_kl", ev.attention_kl}};
  if (ordinal) j["monotone_fraction"] = ev.monotone_fraction;
  return j;
}

int cmd_gen(const Common& c) {
  const auto cfg = resolve_config(c);
  SyntheticData data = cfg.data;
  if (c.seed >= 0) data.seed = static_cast<std::uint64_t>(c.seed);
  const auto ds = make_synthetic_dataset(data);
  fs::create_directories(c.out);
  DatasetManifest m;
  m.d_min = cfg.d_min;
  m.d_max = cfg.d_max;
  m.bins = cfg.network.bins;
  auto emit = [&](const std::vector<SceneSample>& split, const std::string& name) {
    for (std::size_t i = 0; i < split.size(); ++i) {
      char stem[64];
      std::snprintf(stem, sizeof stem, "%s_%04zu", name.c_str(), i);
      write_sample(c.out, stem, split[i]);
      m.samples.push_back({std::string(stem) + ".ppm", std::string(stem) + ".depth.pgm", name});
    }
  };
  emit(ds.train, "train");
  emit(ds.val, "val");
  emit(ds.test, "test");
  save_manifest((fs::path(c.out) / "manifest.json").string(), m);
  std::printf("wrote %zu samples and %s\n", m.samples.size(), (fs::path(c.out) / "manifest.json").c_str());
  return 0;
}

int cmd_train(const Common& c, bool quiet) {
  const auto cfg = resolve_config(c);
  const auto data = load_dataset(cfg);
  std::printf("parameters: %zu\n", Network(cfg.effective_network(), cfg.seed).parameter_count());
  std::fflush(stdout);
  TrainOptions opts;
  opts.out_dir = c.out;
  opts.verbose = !quiet;
  auto res = train(cfg, data, opts);
  if (!data.test.empty()) {
    const bool ordinal = cfg.loss == LossKind::kOrdinal;
    const auto ev = evaluate_model(res.network, data.test, cfg.discretization(), cfg.batch_size);
    json j = eval_json(ev, ordinal);
    j["split"] = "test";
    j["checkpoint"] = (fs::path(c.out) / "final.ckpt").string();
    write_file(fs::path(c.out) / "test_metrics.json", j.dump(2) + "\n");
    std::printf("test rmse %s %.6f  %s %.6f\n", ordinal ? "hard" : "ce-hard", ev.primary.rmse,
                ordinal ? "soft" : "ce-soft", ev.secondary.rmse);
  }
  std::printf("wrote %s\n", (fs::path(c.out) / "final.ckpt").c_str());
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string split = "test";
  std::size_t visualize = 0;
};

int cmd_eval(const Common& c, const EvalArgs& a) {
  auto net = Network::load(a.checkpoint);
  const auto extra = json::parse(Network::read_extra(a.checkpoint));
  ExperimentConfig cfg = c.config.empty() ? parse_experiment(extra.at("experiment").dump()) : resolve_config(c);
  const auto disc = discretization_from_json(extra.at("discretization"));
  const bool ordinal = net.config().head == LossKind::kOrdinal;
  if (!c.inference.empty()) {
    const auto kind = parse_inference(c.inference);
    const bool ce_kind = kind == InferenceKind::kCeHard || kind == InferenceKind::kCeSoft;
    if (ce_kind == ordinal) throw ParameterError("inference '" + c.inference + "' does not match the checkpoint head");
  }
  const auto data = load_dataset(cfg);
  const auto& samples = a.split == "val" ? data.val : a.split == "train" ? data.train : data.test;
  const auto ev = evaluate_model(net, samples, disc, cfg.batch_size, a.visualize > 0);

  fs::create_directories(c.out);
  const fs::path out(c.out);
  json j = eval_json(ev, ordinal);
  j["split"] = a.split;
  j["checkpoint"] = a.checkpoint;
  j["parameter_count"] = net.parameter_count();
  write_file(out / "metrics.json", j.dump(2) + "\n");
  std::string csv = "inference," + MetricReport::csv_header() + "\n";
  csv += std::string(ordinal ? "hard," : "ce-hard,") + ev.primary.csv_line() + "\n";
  csv += std::string(ordinal ? "soft," : "ce-soft,") + ev.secondary.csv_line() + "\n";
  write_file(out / "metrics.csv", csv);
  write_file(out / "confusion.csv", matrix_csv(ev.confusion));
  if (ordinal) write_file(out / "probability_curves.csv", ev.probability_curves);

  const std::size_t gh = net.config().grid_height(), gw = net.config().grid_width();
  for (std::size_t i = 0; i < std::min(a.visualize, samples.size()); ++i) {
    char prefix[32];
    std::snprintf(prefix, sizeof prefix, "sample_%03zu_", i);
    write_depth_map(out / (std::string(prefix) + "depth.pgm"), ev.depth_maps[i], samples[i].height, samples[i].width,
                    disc);
    write_attention_maps(out, prefix, ev.attention_maps[i], gh, gw, net.config().output_stride());
  }

  const auto& chosen = c.inference.empty() ? ev.secondary : ev.report(parse_inference(c.inference));
  std::printf("%s\n%s\n", MetricReport::csv_header().c_str(), chosen.csv_line().c_str());
  return 0;
}

struct InferArgs {
  std::string checkpoint;
  std::string image;
};

int cmd_infer(const Common& c, const InferArgs& a) {
  auto net = Network::load(a.checkpoint);
  const auto extra = json::parse(Network::read_extra(a.checkpoint));
  const auto disc = discretization_from_json(extra.at("discretization"));
  const Tensor rgb = read_ppm(a.image);
  Tape tape;
  const auto out = net.forward(tape, rgb, Mode::kEval);
  const Tensor& logits = out.logits.value();
  const bool ordinal = net.config().head == LossKind::kOrdinal;
  InferenceKind kind = ordinal ? InferenceKind::kSoft : InferenceKind::kCeSoft;
  if (!c.inference.empty()) kind = parse_inference(c.inference);

  std::vector<double> grid;
  switch (kind) {
    case InferenceKind::kHard:
    case InferenceKind::kSoft: {
      if (!ordinal) throw ParameterError("ordinal decoding needs an ordinal checkpoint");
      const auto o = make_ordinal_output(logits);
      grid = (kind == InferenceKind::kHard ? hard_infer(o, disc) : soft_infer(o, disc)).depth;
      break;
    }
    case InferenceKind::kCeHard:
    case InferenceKind::kCeSoft: {
      if (ordinal) throw ParameterError("ce decoding needs a cross-entropy checkpoint");
      const Tensor p = softmax_rows(logits);
      grid = kind == InferenceKind::kCeHard ? ce_hard_infer(p, disc) : ce_soft_infer(p, disc);
      break;
    }
  }
  const std::size_t h = rgb.dim(1), w = rgb.dim(2);
  const auto depth = upsample_bilinear(Tensor({1, out.grid_height, out.grid_width}, grid), h, w).vec();
  fs::create_directories(c.out);
  const fs::path dir(c.out);
  write_depth_map(dir / "depth.pgm", depth, h, w, disc);
  write_attention_maps(dir, "", out.attention.value().reshaped({out.grid_height * out.grid_width,
                                                                out.grid_height * out.grid_width}),
                       out.grid_height, out.grid_width, net.config().output_stride());
  std::printf("wrote %s\n", (dir / "depth.pgm").c_str());
  return 0;
}

int cmd_gradcheck(const std::string& scope) {
  const auto results = run_gradchecks(scope);
  std::fputs(format_gradcheck_table(results).c_str(), stdout);
  const bool ok = std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed; });
  return ok ? 0 : 1;
}

// Splits one CSV line (no quoting in our files).
std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

int cmd_report(const Common& c, const std::vector<std::string>& inputs) {
  const std::vector<std::pair<std::string, std::string>> cols = {
      {"delta1", "δ1"},           {"delta2", "δ2"},       {"delta3", "δ3"},      {"rmse", "RMSE"},
      {"rmse_log", "RMSE(log)"}, {"abs_rel", "AbsRel"}, {"sq_rel", "SqRel"}};
  std::ostringstream md;
  md << "| Run | Variant |";
  for (const auto& [k, title] : cols) md << " " << title << " |";
  md << "\n|---|---|";
  for (std::size_t i = 0; i < cols.size(); ++i) md << "---:|";
  md << "\n";
  json rows = json::array();

  for (const auto& path : inputs) {
    std::ifstream in(path);
    if (!in) throw ParseError(ParseError::Kind::kIo, "cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError(ParseError::Kind::kMalformedHeader, path + " is empty");
    const auto header = split_csv(line);
    auto col = [&](const std::string& name) {
      const auto it = std::find(header.begin(), header.end(), name);
      if (it == header.end()) throw ParseError(ParseError::Kind::kMalformedHeader, path + " lacks column " + name);
      return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t inf_col = col("inference");
    // Last row per decoding wins (the final epoch for validation logs).
    std::map<std::string, std::vector<std::string>> last;
    std::vector<std::string> order;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto cells = split_csv(line);
      if (cells.size() != header.size()) throw ParseError(ParseError::Kind::kTruncatedPayload, "short row in " + path);
      if (!last.count(cells[inf_col])) order.push_back(cells[inf_col]);
      last[cells[inf_col]] = std::move(cells);
    }
    const std::string run = fs::path(path).parent_path().filename().string();
    for (const auto& variant : order) {
      const auto& cells = last[variant];
      md << "| " << run << " | " << variant << " |";
      json r = {{"run", run}, {"variant", variant}, {"source", path}};
      for (const auto& [k, title] : cols) {
        const double v = std::stod(cells[col(k)]);
        char buf[32];
        std::snprintf(buf, sizeof buf, k.rfind("delta", 0) == 0 ? "%.1f%%" : "%.4f",
                      k.rfind("delta", 0) == 0 ? 100.0 * v : v);
        md << " " << buf << " |";
        r[k] = v;
      }
      md << "\n";
      rows.push_back(r);
    }
  }
  fs::create_directories(c.out);
  write_file(fs::path(c.out) / "report.md", md.str());
  write_file(fs::path(c.out) / "report.json", rows.dump(2) + "\n");
  std::fputs(md.str().c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context-aggregated monocular depth estimation"};
  app.require_subcommand(1);

  Common gen_c, train_c, eval_c, infer_c, report_c;
  auto* gen = app.add_subcommand("gen", "Write a synthetic dataset and manifest");
  add_common(gen, gen_c);

  bool quiet = false;
  auto* tr = app.add_subcommand("train", "Train a network");
  add_common(tr, train_c);
  tr->add_flag("--quiet", quiet, "No progress output");

  EvalArgs eval_a;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(ev, eval_c);
  ev->add_option("--checkpoint", eval_a.checkpoint, "Checkpoint file")->required();
  ev->add_option("--split", eval_a.split, "Data split")->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--visualize", eval_a.visualize, "Write depth and attention maps for the first N samples");

  InferArgs infer_a;
  auto* inf = app.add_subcommand("infer", "Predict depth for one PPM image");
  add_common(inf, infer_c);
  inf->add_option("--checkpoint", infer_a.checkpoint, "Checkpoint file")->required();
  inf->add_option("--image", infer_a.image, "Input PPM")->required();

  std::string scope = "all";
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gc->add_option("scope", scope, "Op name or 'all'");

  std::vector<std::string> inputs;
  auto* rep = app.add_subcommand("report", "Aggregate metric CSVs into a Markdown table");
  add_common(rep, report_c);
  rep->add_option("inputs", inputs, "metrics.csv / val_log.csv files")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_gen(gen_c);
    if (*tr) return cmd_train(train_c, quiet);
    if (*ev) return cmd_eval(eval_c, eval_a);
    if (*inf) return cmd_infer(infer_c, infer_a);
    if (*gc) return cmd_gradcheck(scope);
    if (*rep) return cmd_report(report_c, inputs);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
