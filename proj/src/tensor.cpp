// SPDX-License-Identifier: Apache-2.0
#include "stfcn/tensor.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "stfcn/errors.hpp"

namespace stfcn {

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

std::size_t shape_volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_volume(shape_), fill) {
  for (auto extent : shape_) {
    if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape_));
  }
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_volume(shape_)) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_str(shape_));
  }
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_volume(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor Tensor::slice0(std::size_t index) const {
  if (rank() == 0 || index >= shape_[0]) throw DimensionError("slice0 index out of range for " + shape_str(shape_));
  Shape s = shape_;
  s[0] = 1;
  const std::size_t stride = data_.size() / shape_[0];
  const auto first = data_.begin() + static_cast<std::ptrdiff_t>(index * stride);
  return Tensor(std::move(s), std::vector<double>(first, first + static_cast<std::ptrdiff_t>(stride)));
}

void Tensor::assign0(std::size_t index, const Tensor& part) {
  const std::size_t stride = data_.size() / shape_[0];
  if (index >= shape_[0] || part.size() != stride) {
    throw DimensionError("assign0: " + shape_str(part.shape()) + " into " + shape_str(shape_));
  }
  std::copy(part.data_.begin(), part.data_.end(), data_.begin() + static_cast<std::ptrdiff_t>(index * stride));
}

Parameter::Parameter(Tensor initial)
    : value(std::move(initial)), grad(value.shape()), momentum(value.shape()) {}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

namespace {
std::atomic<bool> g_finite_checks{true};
}

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled); }
bool finite_checks_enabled() { return g_finite_checks.load(); }

void check_finite(const Tensor& t, const char* op) {
  if (!finite_checks_enabled()) return;
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value");
  }
}

Tensor affine(const Tensor& x, const Tensor& W, const Tensor& b) {
  if (x.rank() != 1 || W.rank() != 2 || b.rank() != 1 || W.dim(1) != x.dim(0) || W.dim(0) != b.dim(0)) {
    throw DimensionError("affine: W " + shape_str(W.shape()) + " incompatible with x " + shape_str(x.shape()) +
                         " and b " + shape_str(b.shape()));
  }
  const std::size_t n_out = W.dim(0);
  const std::size_t n_in = W.dim(1);
  Tensor out({n_out});
  for (std::size_t i = 0; i < n_out; ++i) {
    double acc = b[i];
    const double* row = W.raw() + i * n_in;
    for (std::size_t j = 0; j < n_in; ++j) acc += row[j] * x[j];
    out[i] = acc;
  }
  check_finite(out, "affine");
  return out;
}

Tensor affine_backward(const Tensor& dout, const Tensor& x, const Tensor& W, Tensor& dW, Tensor& db) {
  if (dout.rank() != 1 || dout.dim(0) != W.dim(0)) {
    throw DimensionError("affine_backward: dout " + shape_str(dout.shape()) + " vs W " + shape_str(W.shape()));
  }
  require_same_shape(dW, W, "affine_backward dW");
  const std::size_t n_out = W.dim(0);
  const std::size_t n_in = W.dim(1);
  Tensor dx({n_in});
  for (std::size_t i = 0; i < n_out; ++i) {
    const double g = dout[i];
    db[i] += g;
    const double* row = W.raw() + i * n_in;
    double* drow = dW.raw() + i * n_in;
    for (std::size_t j = 0; j < n_in; ++j) {
      drow[j] += g * x[j];
      dx[j] += g * row[j];
    }
  }
  check_finite(dx, "affine_backward");
  return dx;
}

namespace {
template <typename F>
Tensor map(const Tensor& x, F f, const char* op) {
  check_finite(x, op);
  Tensor out = x;
  for (double& v : out.data()) v = f(v);
  return out;
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, F f, const char* op) {
  require_same_shape(a, b, op);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  check_finite(out, op);
  return out;
}
}  // namespace

Tensor sigmoid_map(const Tensor& x) {
  return map(x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, "sigmoid");
}

Tensor tanh_map(const Tensor& x) {
  return map(x, [](double v) { return std::tanh(v); }, "tanh");
}

Tensor sigmoid_backward(const Tensor& dout, const Tensor& out) {
  return zip(dout, out, [](double g, double y) { return g * y * (1.0 - y); }, "sigmoid_backward");
}

Tensor tanh_backward(const Tensor& dout, const Tensor& out) {
  return zip(dout, out, [](double g, double y) { return g * (1.0 - y * y); }, "tanh_backward");
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  return zip(a, b, [](double u, double v) { return u * v; }, "hadamard");
}

std::pair<Tensor, Tensor> hadamard_backward(const Tensor& dout, const Tensor& a, const Tensor& b) {
  require_same_shape(dout, a, "hadamard_backward");
  return {hadamard(dout, b), hadamard(dout, a)};
}

Tensor add(const Tensor& a, const Tensor& b) {
  return zip(a, b, [](double u, double v) { return u + v; }, "add");
}

void add_inplace(Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add_inplace");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

// ---- serialization ----------------------------------------------------------

namespace {
constexpr std::array<char, 4> kMagic{'S', 'T', 'T', 'N'};

template <typename T>
void put_le(std::ostream& os, T value) {
  auto bits = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
  os.write(reinterpret_cast<const char*>(bits.data()), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  std::array<unsigned char, sizeof(T)> bits{};
  is.read(reinterpret_cast<char*>(bits.data()), sizeof(T));
  if (!is) throw DataError("tensor stream truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
  return std::bit_cast<T>(bits);
}
}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (auto extent : t.shape()) put_le<std::uint64_t>(os, extent);
  for (double v : t.data()) put_le<double>(os, v);
}

Tensor read_tensor(std::istream& is) {
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw DataError("bad tensor magic (expected STTN)");
  const auto rank = get_le<std::uint32_t>(is);
  if (rank > 16) throw DataError("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& extent : shape) {
    extent = get_le<std::uint64_t>(is);
    if (extent == 0) throw DataError("zero tensor extent");
  }
  std::vector<double> data(shape_volume(shape));
  for (double& v : data) v = get_le<double>(is);
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("missing file " + path.string());
  return read_tensor(is);
}

}  // namespace stfcn
