#include "ctxdepth/tensor.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <ostream>
#include <sstream>

#include "ctxdepth/error.hpp"

namespace ctxdepth {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have rank >= 1");
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) +
                         " values");
  }
}

Tensor Tensor::reshaped(Shape shape) const {
  Tensor out = *this;
  out.reshape(std::move(shape));
  return out;
}

void Tensor::reshape(Shape shape) {
  check_shape(shape);
  if (shape_numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  shape_ = std::move(shape);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::ostream& operator<<(std::ostream& os, const Tensor& t) {
  os << "Tensor" << shape_str(t.shape()) << " {";
  const std::size_t n = std::min<std::size_t>(t.size(), 16);
  for (std::size_t i = 0; i < n; ++i) os << (i ? ", " : "") << t[i];
  if (t.size() > n) os << ", ...";
  return os << '}';
}

// --- binary container -------------------------------------------------------

namespace {

constexpr std::array<char, 4> kTensorMagic = {'A', 'C', 'T', 'N'};

void require(std::istream& is, const char* what) {
  if (!is) throw ParseError(ParseError::Kind::kTruncatedPayload, std::string("truncated tensor stream: ") + what);
}

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  os.write(b.data(), b.size());
}

std::uint32_t read_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  is.read(reinterpret_cast<char*>(b.data()), b.size());
  require(is, "u32");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

void write_f64(std::ostream& os, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xFFu);
  os.write(b.data(), b.size());
}

double read_f64(std::istream& is) {
  std::array<unsigned char, 8> b{};
  is.read(reinterpret_cast<char*>(b.data()), b.size());
  require(is, "f64");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kTensorMagic.data(), kTensorMagic.size());
  write_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) write_u32(os, static_cast<std::uint32_t>(d));
  for (double v : t.data()) write_f64(os, v);
}

Tensor read_tensor(std::istream& is) {
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kTensorMagic) {
    throw ParseError(ParseError::Kind::kMalformedHeader, "tensor record does not start with ACTN magic");
  }
  const auto rank = read_u32(is);
  if (rank == 0 || rank > 8) {
    throw ParseError(ParseError::Kind::kMalformedHeader, "tensor rank out of range: " + std::to_string(rank));
  }
  Shape shape(rank);
  for (auto& d : shape) {
    d = read_u32(is);
    if (d == 0) throw ParseError(ParseError::Kind::kMalformedHeader, "zero tensor dimension");
  }
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = read_f64(is);
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ParseError(ParseError::Kind::kIo, "cannot open " + path + " for writing");
  write_tensor(os, t);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError(ParseError::Kind::kIo, "cannot open " + path);
  return read_tensor(is);
}

}  // namespace ctxdepth
