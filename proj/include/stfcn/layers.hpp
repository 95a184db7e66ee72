// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "stfcn/label_map.hpp"
#include "stfcn/rng.hpp"
#include "stfcn/tensor.hpp"

namespace stfcn {

/// Square-kernel 2-D convolution geometry. Weights are [out, in, k, k].
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t dilation = 1;

  /// floor((n + 2 pad - dilation (kernel - 1) - 1) / stride) + 1; throws
  /// ConfigError when that is < 1.
  std::size_t output_extent(std::size_t n) const;
  void validate() const;
};

/// Transposed convolution that up-samples by an integer factor. Kernel size,
/// stride and padding are derived from the factor so that an n-pixel input
/// maps to exactly factor * n pixels. Weights are [in, out, kernel, kernel].
struct DeconvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t factor = 1;

  std::size_t kernel() const { return 2 * factor - factor % 2; }
  std::size_t stride() const { return factor; }
  std::size_t pad() const { return factor / 2; }  // ceil((factor - 1) / 2)
  std::size_t output_extent(std::size_t n) const { return (n - 1) * stride() + kernel() - 2 * pad(); }
  void validate() const;
};

// ---- functional forms --------------------------------------------------------

/// Cross-correlation (no kernel flip). bias may be empty.
Tensor conv2d(const Tensor& input, const ConvSpec& spec, const Tensor& weight, const Tensor& bias);
/// Returns d(input) (empty when want_dinput is false); accumulates into
/// dweight and, when non-null, dbias.
Tensor conv2d_backward(const Tensor& dout, const Tensor& input, const ConvSpec& spec, const Tensor& weight,
                       Tensor& dweight, Tensor* dbias, bool want_dinput = true);

/// The linear adjoint of conv2d with kernel/stride/pad taken from `spec`.
Tensor deconv2d(const Tensor& input, const DeconvSpec& spec, const Tensor& weight);
Tensor deconv2d_backward(const Tensor& dout, const Tensor& input, const DeconvSpec& spec, const Tensor& weight,
                         Tensor* dweight);

/// Bilinear up-sampling kernel for factor k, [channels, channels, s, s],
/// zero off the channel diagonal.
Tensor bilinear_kernel(std::size_t k, std::size_t channels);

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& dout, const Tensor& input);

/// 2x2 max pooling, stride 2. Extents must be even. `argmax` receives the flat
/// input index chosen for every output element (first maximum wins).
Tensor max_pool2(const Tensor& x, std::vector<std::size_t>& argmax);
Tensor max_pool2_backward(const Tensor& dout, const Shape& input_shape, std::span<const std::size_t> argmax);

Tensor elementwise_fuse(const Tensor& a, const Tensor& b);
/// Both inputs receive dout unchanged.
std::pair<Tensor, Tensor> elementwise_fuse_backward(const Tensor& dout);

struct LossResult {
  double loss = 0.0;
  Tensor grad;  ///< d loss / d logits
  std::size_t counted = 0;
};

/// Mean pixel cross-entropy of softmax(logits) over non-ignored pixels.
/// logits are [B, n_cl, H, W]; one LabelMap per batch item.
LossResult softmax_ce(const Tensor& logits, std::span<const LabelMap> labels, int ignore_label = kDefaultIgnoreLabel);
/// The per-pixel terms of softmax_ce (counted pixels only, row-major per item),
/// evaluated in extended precision. Finite-difference checks difference these
/// against a reference so that the rounding of a loss near 1 does not swamp
/// gradients of order 1e-9.
std::vector<long double> softmax_ce_terms(const Tensor& logits, std::span<const LabelMap> labels,
                                          int ignore_label = kDefaultIgnoreLabel);

// ---- stateful layers (cache the forward input for backward) ------------------

class Conv2dLayer {
 public:
  Conv2dLayer() = default;
  /// Weights and biases uniform in +-1/sqrt(fan_in).
  Conv2dLayer(const ConvSpec& spec, Rng& rng);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dout, bool want_dinput = true);

  const ConvSpec& spec() const noexcept { return spec_; }
  Parameter weight;
  Parameter bias;

 private:
  ConvSpec spec_;
  Tensor input_;
};

class Deconv2dLayer {
 public:
  Deconv2dLayer() = default;
  /// Initialized with bilinear_kernel (requires in == out channels).
  explicit Deconv2dLayer(const DeconvSpec& spec, bool learned = true);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dout);

  const DeconvSpec& spec() const noexcept { return spec_; }
  bool learned() const noexcept { return learned_; }
  Parameter weight;

 private:
  DeconvSpec spec_;
  bool learned_ = true;
  Tensor input_;
};

class ReluLayer {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dout);

 private:
  Tensor input_;
};

class MaxPoolLayer {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dout);

 private:
  Shape input_shape_;
  std::vector<std::size_t> argmax_;
};

}  // namespace stfcn
