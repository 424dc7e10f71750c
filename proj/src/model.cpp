#include "ctxdepth/model.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include "ctxdepth/config.hpp"
#include "ctxdepth/error.hpp"
#include "ctxdepth/random.hpp"

namespace ctxdepth {

std::size_t NetworkConfig::output_stride() const {
  std::size_t s = 1;
  for (const auto& st : stages) s *= st.stride * (st.pool ? 2 : 1);
  return s;
}

std::size_t NetworkConfig::head_channels() const { return head == LossKind::kOrdinal ? 2 * bins : bins; }

void NetworkConfig::validate() const {
  if (stages.empty()) throw ParameterError("network needs at least one encoder stage");
  for (const auto& s : stages) {
    if (s.channels == 0 || s.stride == 0 || s.dilation == 0) throw ParameterError("encoder stage fields must be positive");
  }
  if (output_stride() != 8) {
    throw ParameterError("encoder output stride must be 8, got " + std::to_string(output_stride()));
  }
  if (height == 0 || width == 0 || height % 8 != 0 || width % 8 != 0) {
    throw ParameterError("input size " + std::to_string(height) + "x" + std::to_string(width) +
                         " is not divisible by the output stride 8");
  }
  if (bins < 2) throw ParameterError("network needs at least 2 depth bins");
  if (key_channels == 0 || key_channels >= stages.back().channels || value_channels == 0) {
    throw ParameterError("attention widths must satisfy 0 < C_K < C_in and C_V > 0");
  }
}

Network::Network(NetworkConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  std::size_t in = 3;
  for (std::size_t i = 0; i < config_.stages.size(); ++i) {
    const auto& spec = config_.stages[i];
    const std::string prefix = "encoder." + std::to_string(i);
    Stage st;
    st.spec = spec;
    st.weight = conv_weight(prefix + ".weight", spec.channels, in, 3, rng);
    st.gamma = constant_param(prefix + ".bn.gamma", spec.channels, 1.0);
    st.beta = constant_param(prefix + ".bn.beta", spec.channels, 0.0);
    stages_.push_back(std::move(st));
    in = spec.channels;
  }
  cam_ = make_attention_params(in, config_.key_channels, config_.value_channels, rng.next(), config_.value_bn_relu);
  const std::size_t cat = config_.value_channels + in;
  head_weight_ = conv_weight("head.weight", config_.head_channels(), cat, 1, rng);
  head_weight_.decoder = true;
  head_bias_ = constant_param("head.bias", config_.head_channels(), 0.0);
  head_bias_.decoder = true;
}

Network::Output Network::forward(Tape& tape, const Tensor& rgb, Mode mode) {
  Tensor input = rgb;
  if (input.rank() == 3) input.reshape({1, input.dim(0), input.dim(1), input.dim(2)});
  if (input.rank() != 4 || input.dim(1) != 3) throw DimensionError("forward: expected B x 3 x H x W, got " + shape_str(rgb.shape()));
  if (input.dim(2) != config_.height || input.dim(3) != config_.width) {
    throw DimensionError("forward: input " + shape_str(rgb.shape()) + " does not match configured " +
                         std::to_string(config_.height) + "x" + std::to_string(config_.width));
  }
  const std::size_t batch = input.dim(0);

  Var x = tape.constant(std::move(input));
  for (auto& st : stages_) {
    x = conv2d(x, tape.param(st.weight), {st.spec.stride, st.spec.dilation});
    x = relu(batch_norm(x, tape.param(st.gamma), tape.param(st.beta), st.bn, mode));
    if (st.spec.pool) x = avg_pool2(x);
  }

  const auto cam = cam_forward(x, cam_, mode, config_.image_pooling);
  Var y = conv2d(cam.features, tape.param(head_weight_));
  y = add_channel_bias(y, tape.param(head_bias_));

  const auto& s = y.shape();  // B x C x h x w
  const std::size_t c = s[1], h = s[2], w = s[3];
  // B x C x N -> B x N x C -> (B*N) x C
  Var rows = transpose(reshape(y, {batch, c, h * w}));
  rows = reshape(rows, {batch * h * w, c});
  return {rows, cam.attention, batch, h, w};
}

std::vector<Parameter*> Network::parameters() {
  std::vector<Parameter*> ps;
  for (auto& st : stages_) {
    ps.push_back(&st.weight);
    ps.push_back(&st.gamma);
    ps.push_back(&st.beta);
  }
  for (auto* p : cam_.parameters()) ps.push_back(p);
  ps.push_back(&head_weight_);
  ps.push_back(&head_bias_);
  return ps;
}

std::vector<std::pair<std::string, BatchNormState*>> Network::norm_states() {
  std::vector<std::pair<std::string, BatchNormState*>> out;
  for (std::size_t i = 0; i < stages_.size(); ++i) out.emplace_back("encoder." + std::to_string(i) + ".bn", &stages_[i].bn);
  out.emplace_back("cam.embed.bn", &cam_.embed_bn);
  if (cam_.value_bn_relu) out.emplace_back("cam.value.bn", &cam_.value_bn);
  return out;
}

std::size_t Network::parameter_count() const {
  auto& self = const_cast<Network&>(*this);
  std::size_t n = 0;
  for (auto* p : self.parameters()) n += p->value.size();
  return n;
}

// --- checkpoints ------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'A', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  const auto n = read_u32(is);
  if (n > (1u << 26)) throw LoadError("checkpoint string length out of range");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw LoadError("truncated checkpoint string");
  return s;
}

struct CheckpointContents {
  nlohmann::json header;
  std::map<std::string, Tensor> records;
};

CheckpointContents read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open checkpoint " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || !std::equal(magic, magic + 4, kCheckpointMagic)) throw LoadError(path + ": not a checkpoint");
  try {
    if (read_u32(is) != kCheckpointVersion) throw LoadError(path + ": unsupported checkpoint version");
    CheckpointContents c;
    c.header = nlohmann::json::parse(read_string(is));
    const auto count = read_u32(is);
    for (std::uint32_t i = 0; i < count; ++i) {
      auto name = read_string(is);
      c.records.emplace(std::move(name), read_tensor(is));
    }
    return c;
  } catch (const ParseError& e) {
    throw LoadError(path + ": " + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path + ": bad header: " + e.what());
  }
}

}  // namespace

void Network::save(const std::string& path, const std::string& extra_json) const {
  auto& self = const_cast<Network&>(*this);
  std::vector<std::pair<std::string, const Tensor*>> records;
  for (auto* p : self.parameters()) records.emplace_back(p->name, &p->value);
  nlohmann::json populated = nlohmann::json::object();
  for (auto& [name, st] : self.norm_states()) {
    populated[name] = st->populated;
    if (st->populated) {
      records.emplace_back(name + ".running_mean", &st->running_mean);
      records.emplace_back(name + ".running_var", &st->running_var);
    }
  }
  nlohmann::json header = {{"network", config_}, {"norm_populated", populated},
                           {"extra", nlohmann::json::parse(extra_json)}};

  std::ofstream os(path, std::ios::binary);
  if (!os) throw ParseError(ParseError::Kind::kIo, "cannot open " + path + " for writing");
  os.write(kCheckpointMagic, 4);
  write_u32(os, kCheckpointVersion);
  write_string(os, header.dump());
  write_u32(os, static_cast<std::uint32_t>(records.size()));
  for (const auto& [name, t] : records) {
    write_string(os, name);
    write_tensor(os, *t);
  }
}

void Network::load_weights(const std::string& path) {
  auto c = read_checkpoint(path);
  auto take = [&](const std::string& name, Tensor& dst) {
    auto it = c.records.find(name);
    if (it == c.records.end()) throw LoadError(path + ": missing record " + name);
    if (it->second.shape() != dst.shape()) {
      throw LoadError(path + ": record " + name + " has shape " + shape_str(it->second.shape()) + ", network expects " +
                      shape_str(dst.shape()));
    }
    dst = it->second;
  };
  for (auto* p : parameters()) {
    take(p->name, p->value);
    p->zero_grad();
  }
  const auto& populated = c.header.value("norm_populated", nlohmann::json::object());
  for (auto& [name, st] : norm_states()) {
    st->populated = populated.value(name, false);
    if (!st->populated) continue;
    const std::size_t ch = c.records.count(name + ".running_mean") ? c.records.at(name + ".running_mean").size() : 0;
    st->running_mean = Tensor({std::max<std::size_t>(ch, 1)});
    st->running_var = Tensor({std::max<std::size_t>(ch, 1)});
    take(name + ".running_mean", st->running_mean);
    take(name + ".running_var", st->running_var);
  }
}

Network Network::load(const std::string& path) {
  auto c = read_checkpoint(path);
  NetworkConfig cfg;
  try {
    cfg = c.header.at("network").get<NetworkConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path + ": bad network header: " + e.what());
  }
  Network net(cfg, 0);
  net.load_weights(path);
  return net;
}

std::string Network::read_extra(const std::string& path) {
  return read_checkpoint(path).header.value("extra", nlohmann::json::object()).dump();
}

std::pair<std::vector<double>, Mask> downsample_log_depth(std::span<const double> depth, const Mask& valid,
                                                          std::size_t height, std::size_t width, std::size_t factor) {
  if (depth.size() != height * width || (!valid.empty() && valid.size() != depth.size())) {
    throw DimensionError("downsample_log_depth: size mismatch");
  }
  if (factor == 0 || height % factor || width % factor) throw ParameterError("downsample_log_depth: indivisible size");
  const std::size_t gh = height / factor, gw = width / factor;
  std::vector<double> out(gh * gw, 0.0);
  Mask out_valid(gh * gw, 0);
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx) {
      double s = 0.0;
      std::size_t n = 0;
      for (std::size_t y = gy * factor; y < (gy + 1) * factor; ++y)
        for (std::size_t x = gx * factor; x < (gx + 1) * factor; ++x) {
          const std::size_t i = y * width + x;
          if (!valid.empty() && !valid[i]) continue;
          s += std::log(depth[i]);
          ++n;
        }
      if (n) {
        out[gy * gw + gx] = std::exp(s / static_cast<double>(n));
        out_valid[gy * gw + gx] = 1;
      }
    }
  return {std::move(out), std::move(out_valid)};
}

}  // namespace ctxdepth
