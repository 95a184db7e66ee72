// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace stfcn {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_volume(const Shape& shape);

/// Dense row-major tensor of doubles. Image data uses (batch, channels,
/// height, width) order.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* raw() noexcept { return data_.data(); }
  const double* raw() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  const double& operator[](std::size_t i) const noexcept { return data_[i]; }

  /// 4-D accessor (n, c, h, w).
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  Tensor reshaped(Shape shape) const;
  void fill(double value);
  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

  /// Copy of item `index` along axis 0, with a leading extent of 1 kept.
  Tensor slice0(std::size_t index) const;
  /// Writes `part` (leading extent 1) into item `index` along axis 0.
  void assign0(std::size_t index, const Tensor& part);

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Trainable tensor with its accumulated gradient and momentum buffer.
struct Parameter {
  Tensor value;
  Tensor grad;
  Tensor momentum;

  Parameter() = default;
  explicit Parameter(Tensor initial);

  void zero_grad() { grad.fill(0.0); }
  std::size_t size() const noexcept { return value.size(); }
};

void require_same_shape(const Tensor& a, const Tensor& b, const char* op);

/// Finite-value guard used after every primitive. Enabled by default.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();
void check_finite(const Tensor& t, const char* op);

// ---- primitive operations --------------------------------------------------

/// out = W x + b for x[n_in], W[n_out x n_in], b[n_out].
Tensor affine(const Tensor& x, const Tensor& W, const Tensor& b);
/// Returns dx; accumulates into dW and db.
Tensor affine_backward(const Tensor& dout, const Tensor& x, const Tensor& W, Tensor& dW, Tensor& db);

Tensor sigmoid_map(const Tensor& x);
Tensor tanh_map(const Tensor& x);
/// Backward passes take the forward output, which is what both derivatives need.
Tensor sigmoid_backward(const Tensor& dout, const Tensor& out);
Tensor tanh_backward(const Tensor& dout, const Tensor& out);

Tensor hadamard(const Tensor& a, const Tensor& b);
std::pair<Tensor, Tensor> hadamard_backward(const Tensor& dout, const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
/// a += b
void add_inplace(Tensor& a, const Tensor& b);
double dot(const Tensor& a, const Tensor& b);
double max_abs(const Tensor& t);

// ---- serialization ("STTN": u32 rank, rank x u64 extents, f64 payload, LE) --

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace stfcn
