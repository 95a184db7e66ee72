// SPDX-License-Identifier: Apache-2.0
#include "stfcn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "stfcn/errors.hpp"

namespace stfcn {

namespace {

// Output indices o in [0, out_n) whose input tap o*stride - pad + offset lands
// inside [0, in_n). Returns an empty range as lo > hi.
struct Range {
  std::ptrdiff_t lo;
  std::ptrdiff_t hi;  // inclusive
};

Range valid_outputs(std::ptrdiff_t out_n, std::ptrdiff_t in_n, std::ptrdiff_t stride, std::ptrdiff_t shift) {
  // input index = o * stride + shift
  auto ceil_div = [](std::ptrdiff_t a, std::ptrdiff_t b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); };
  auto floor_div = [](std::ptrdiff_t a, std::ptrdiff_t b) { return a >= 0 ? a / b : -((-a + b - 1) / b); };
  std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, ceil_div(-shift, stride));
  std::ptrdiff_t hi = std::min<std::ptrdiff_t>(out_n - 1, floor_div(in_n - 1 - shift, stride));
  return {lo, hi};
}

void require_4d(const Tensor& t, const char* op) {
  if (t.rank() != 4) throw DimensionError(std::string(op) + ": expected a 4-D tensor, got " + shape_str(t.shape()));
}

}  // namespace

// ---- specs -------------------------------------------------------------------

std::size_t ConvSpec::output_extent(std::size_t n) const {
  const auto span = static_cast<std::ptrdiff_t>(dilation * (kernel - 1) + 1);
  const auto padded = static_cast<std::ptrdiff_t>(n + 2 * pad);
  if (padded < span) {
    throw ConfigError("conv output extent < 1 for input " + std::to_string(n) + " (kernel " + std::to_string(kernel) +
                      ", pad " + std::to_string(pad) + ", dilation " + std::to_string(dilation) + ")");
  }
  return static_cast<std::size_t>((padded - span) / static_cast<std::ptrdiff_t>(stride)) + 1;
}

void ConvSpec::validate() const {
  if (in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 || dilation == 0) {
    throw ConfigError("conv spec: channels, kernel, stride and dilation must be positive");
  }
}

void DeconvSpec::validate() const {
  if (in_channels == 0 || out_channels == 0 || factor == 0) {
    throw ConfigError("deconv spec: channels and factor must be positive");
  }
}

// ---- convolution -------------------------------------------------------------

Tensor conv2d(const Tensor& input, const ConvSpec& spec, const Tensor& weight, const Tensor& bias) {
  spec.validate();
  require_4d(input, "conv2d");
  if (input.dim(1) != spec.in_channels) {
    throw DimensionError("conv2d: input has " + std::to_string(input.dim(1)) + " channels, spec expects " +
                         std::to_string(spec.in_channels));
  }
  const Shape wshape{spec.out_channels, spec.in_channels, spec.kernel, spec.kernel};
  if (weight.shape() != wshape) {
    throw DimensionError("conv2d: weight " + shape_str(weight.shape()) + " expected " + shape_str(wshape));
  }
  if (!bias.empty() && bias.shape() != Shape{spec.out_channels}) {
    throw DimensionError("conv2d: bias " + shape_str(bias.shape()));
  }
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t OH = spec.output_extent(H), OW = spec.output_extent(W);
  const std::size_t K = spec.kernel, S = spec.stride;
  const auto P = static_cast<std::ptrdiff_t>(spec.pad);
  const auto D = static_cast<std::ptrdiff_t>(spec.dilation);

  Tensor out({B, spec.out_channels, OH, OW});
  for (std::size_t n = 0; n < B; ++n) {
    for (std::size_t oc = 0; oc < spec.out_channels; ++oc) {
      double* o = &out.at(n, oc, 0, 0);
      if (!bias.empty()) std::fill(o, o + OH * OW, bias[oc]);
      for (std::size_t ic = 0; ic < C; ++ic) {
        const double* in = &input.at(n, ic, 0, 0);
        for (std::size_t kh = 0; kh < K; ++kh) {
          const auto shift_h = static_cast<std::ptrdiff_t>(kh) * D - P;
          const Range rh = valid_outputs(static_cast<std::ptrdiff_t>(OH), static_cast<std::ptrdiff_t>(H),
                                         static_cast<std::ptrdiff_t>(S), shift_h);
          for (std::size_t kw = 0; kw < K; ++kw) {
            const double w = weight.at(oc, ic, kh, kw);
            const auto shift_w = static_cast<std::ptrdiff_t>(kw) * D - P;
            const Range rw = valid_outputs(static_cast<std::ptrdiff_t>(OW), static_cast<std::ptrdiff_t>(W),
                                           static_cast<std::ptrdiff_t>(S), shift_w);
            for (std::ptrdiff_t oh = rh.lo; oh <= rh.hi; ++oh) {
              const double* in_row = in + (oh * static_cast<std::ptrdiff_t>(S) + shift_h) * static_cast<std::ptrdiff_t>(W);
              double* out_row = o + oh * static_cast<std::ptrdiff_t>(OW);
              if (S == 1) {
                for (std::ptrdiff_t ow = rw.lo; ow <= rw.hi; ++ow) out_row[ow] += w * in_row[ow + shift_w];
              } else {
                for (std::ptrdiff_t ow = rw.lo; ow <= rw.hi; ++ow)
                  out_row[ow] += w * in_row[ow * static_cast<std::ptrdiff_t>(S) + shift_w];
              }
            }
          }
        }
      }
    }
  }
  check_finite(out, "conv2d");
  return out;
}

Tensor conv2d_backward(const Tensor& dout, const Tensor& input, const ConvSpec& spec, const Tensor& weight,
                       Tensor& dweight, Tensor* dbias, bool want_dinput) {
  require_4d(input, "conv2d_backward");
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t OH = spec.output_extent(H), OW = spec.output_extent(W);
  const Shape oshape{B, spec.out_channels, OH, OW};
  if (dout.shape() != oshape) {
    throw DimensionError("conv2d_backward: dout " + shape_str(dout.shape()) + " expected " + shape_str(oshape));
  }
  require_same_shape(dweight, weight, "conv2d_backward dweight");
  const std::size_t K = spec.kernel, S = spec.stride;
  const auto P = static_cast<std::ptrdiff_t>(spec.pad);
  const auto D = static_cast<std::ptrdiff_t>(spec.dilation);

  Tensor dinput = want_dinput ? Tensor(input.shape()) : Tensor();
  for (std::size_t n = 0; n < B; ++n) {
    for (std::size_t oc = 0; oc < spec.out_channels; ++oc) {
      const double* g = &dout.at(n, oc, 0, 0);
      if (dbias) {
        double s = 0.0;
        for (std::size_t i = 0; i < OH * OW; ++i) s += g[i];
        (*dbias)[oc] += s;
      }
      for (std::size_t ic = 0; ic < C; ++ic) {
        const double* in = &input.at(n, ic, 0, 0);
        double* din = want_dinput ? &dinput.at(n, ic, 0, 0) : nullptr;
        for (std::size_t kh = 0; kh < K; ++kh) {
          const auto shift_h = static_cast<std::ptrdiff_t>(kh) * D - P;
          const Range rh = valid_outputs(static_cast<std::ptrdiff_t>(OH), static_cast<std::ptrdiff_t>(H),
                                         static_cast<std::ptrdiff_t>(S), shift_h);
          for (std::size_t kw = 0; kw < K; ++kw) {
            const double w = weight.at(oc, ic, kh, kw);
            const auto shift_w = static_cast<std::ptrdiff_t>(kw) * D - P;
            const Range rw = valid_outputs(static_cast<std::ptrdiff_t>(OW), static_cast<std::ptrdiff_t>(W),
                                           static_cast<std::ptrdiff_t>(S), shift_w);
            double dw = 0.0;
            for (std::ptrdiff_t oh = rh.lo; oh <= rh.hi; ++oh) {
              const std::ptrdiff_t row = (oh * static_cast<std::ptrdiff_t>(S) + shift_h) * static_cast<std::ptrdiff_t>(W);
              const double* in_row = in + row;
              double* din_row = din ? din + row : nullptr;
              const double* g_row = g + oh * static_cast<std::ptrdiff_t>(OW);
              if (din == nullptr) {
                for (std::ptrdiff_t ow = rw.lo; ow <= rw.hi; ++ow)
                  dw += g_row[ow] * in_row[ow * static_cast<std::ptrdiff_t>(S) + shift_w];
                continue;
              }
              for (std::ptrdiff_t ow = rw.lo; ow <= rw.hi; ++ow) {
                const std::ptrdiff_t iw = ow * static_cast<std::ptrdiff_t>(S) + shift_w;
                dw += g_row[ow] * in_row[iw];
                din_row[iw] += w * g_row[ow];
              }
            }
            dweight.at(oc, ic, kh, kw) += dw;
          }
        }
      }
    }
  }
  if (want_dinput) check_finite(dinput, "conv2d_backward");
  check_finite(dweight, "conv2d_backward dweight");
  return dinput;
}

// ---- transposed convolution ---------------------------------------------------

namespace {

ConvSpec adjoint_conv(const DeconvSpec& spec) {
  ConvSpec c;
  c.in_channels = spec.out_channels;
  c.out_channels = spec.in_channels;
  c.kernel = spec.kernel();
  c.stride = spec.stride();
  c.pad = spec.pad();
  c.dilation = 1;
  return c;
}

void check_deconv(const Tensor& input, const DeconvSpec& spec, const Tensor& weight, const char* op) {
  spec.validate();
  require_4d(input, op);
  if (input.dim(1) != spec.in_channels) {
    throw DimensionError(std::string(op) + ": input has " + std::to_string(input.dim(1)) + " channels, spec expects " +
                         std::to_string(spec.in_channels));
  }
  const Shape wshape{spec.in_channels, spec.out_channels, spec.kernel(), spec.kernel()};
  if (weight.shape() != wshape) {
    throw DimensionError(std::string(op) + ": weight " + shape_str(weight.shape()) + " expected " + shape_str(wshape));
  }
}

}  // namespace

Tensor deconv2d(const Tensor& input, const DeconvSpec& spec, const Tensor& weight) {
  check_deconv(input, spec, weight, "deconv2d");
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t OH = spec.output_extent(H), OW = spec.output_extent(W);
  const std::size_t K = spec.kernel();
  const auto S = static_cast<std::ptrdiff_t>(spec.stride());
  const auto P = static_cast<std::ptrdiff_t>(spec.pad());

  Tensor out({B, spec.out_channels, OH, OW});
  for (std::size_t n = 0; n < B; ++n) {
    for (std::size_t ic = 0; ic < C; ++ic) {
      const double* in = &input.at(n, ic, 0, 0);
      for (std::size_t oc = 0; oc < spec.out_channels; ++oc) {
        double* o = &out.at(n, oc, 0, 0);
        for (std::size_t kh = 0; kh < K; ++kh) {
          // output row = h * S - P + kh; h ranges over input rows that land inside the output
          const auto shift_h = static_cast<std::ptrdiff_t>(kh) - P;
          const Range rh = valid_outputs(static_cast<std::ptrdiff_t>(H), static_cast<std::ptrdiff_t>(OH), S, shift_h);
          for (std::size_t kw = 0; kw < K; ++kw) {
            const double w = weight.at(ic, oc, kh, kw);
            if (w == 0.0) continue;
            const auto shift_w = static_cast<std::ptrdiff_t>(kw) - P;
            const Range rw = valid_outputs(static_cast<std::ptrdiff_t>(W), static_cast<std::ptrdiff_t>(OW), S, shift_w);
            for (std::ptrdiff_t h = rh.lo; h <= rh.hi; ++h) {
              const double* in_row = in + h * static_cast<std::ptrdiff_t>(W);
              double* out_row = o + (h * S + shift_h) * static_cast<std::ptrdiff_t>(OW);
              for (std::ptrdiff_t x = rw.lo; x <= rw.hi; ++x) out_row[x * S + shift_w] += w * in_row[x];
            }
          }
        }
      }
    }
  }
  check_finite(out, "deconv2d");
  return out;
}

Tensor deconv2d_backward(const Tensor& dout, const Tensor& input, const DeconvSpec& spec, const Tensor& weight,
                         Tensor* dweight) {
  check_deconv(input, spec, weight, "deconv2d_backward");
  const Shape oshape{input.dim(0), spec.out_channels, spec.output_extent(input.dim(2)),
                     spec.output_extent(input.dim(3))};
  if (dout.shape() != oshape) {
    throw DimensionError("deconv2d_backward: dout " + shape_str(dout.shape()) + " expected " + shape_str(oshape));
  }
  // d input is the forward convolution of dout; d weight pairs input with dout
  // exactly as conv2d_backward pairs dout with its input.
  const ConvSpec conv = adjoint_conv(spec);
  Tensor dinput = conv2d(dout, conv, weight, Tensor());
  if (dweight) {
    require_same_shape(*dweight, weight, "deconv2d_backward dweight");
    conv2d_backward(input, dout, conv, weight, *dweight, nullptr, false);
  }
  return dinput;
}

Tensor bilinear_kernel(std::size_t k, std::size_t channels) {
  if (k == 0 || channels == 0) throw ConfigError("bilinear_kernel: factor and channels must be positive");
  const std::size_t s = 2 * k - k % 2;
  const std::size_t f = (s + 1) / 2;
  const double c = static_cast<double>(2 * f - 1 - f % 2) / static_cast<double>(2 * f);
  Tensor w({channels, channels, s, s});
  for (std::size_t ch = 0; ch < channels; ++ch) {
    for (std::size_t i = 0; i < s; ++i) {
      for (std::size_t j = 0; j < s; ++j) {
        const double wi = 1.0 - std::abs(static_cast<double>(i) / static_cast<double>(f) - c);
        const double wj = 1.0 - std::abs(static_cast<double>(j) / static_cast<double>(f) - c);
        w.at(ch, ch, i, j) = wi * wj;
      }
    }
  }
  return w;
}

// ---- pointwise and pooling -------------------------------------------------------

Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  check_finite(out, "relu");
  return out;
}

Tensor relu_backward(const Tensor& dout, const Tensor& input) {
  require_same_shape(dout, input, "relu_backward");
  Tensor dx(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) dx[i] = input[i] > 0.0 ? dout[i] : 0.0;
  return dx;
}

Tensor max_pool2(const Tensor& x, std::vector<std::size_t>& argmax) {
  require_4d(x, "max_pool2");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 || W % 2) throw DimensionError("max_pool2: extents must be even, got " + shape_str(x.shape()));
  Tensor out({B, C, H / 2, W / 2});
  argmax.assign(out.size(), 0);
  std::size_t o = 0;
  for (std::size_t p = 0; p < B * C; ++p) {
    const std::size_t base = p * H * W;
    for (std::size_t y = 0; y < H; y += 2) {
      for (std::size_t xx = 0; xx < W; xx += 2, ++o) {
        std::size_t best = base + y * W + xx;
        for (std::size_t cand : {base + y * W + xx + 1, base + (y + 1) * W + xx, base + (y + 1) * W + xx + 1}) {
          if (x[cand] > x[best]) best = cand;
        }
        argmax[o] = best;
        out[o] = x[best];
      }
    }
  }
  return out;
}

Tensor max_pool2_backward(const Tensor& dout, const Shape& input_shape, std::span<const std::size_t> argmax) {
  if (argmax.size() != dout.size()) throw DimensionError("max_pool2_backward: argmax/dout size mismatch");
  Tensor dx(input_shape);
  for (std::size_t i = 0; i < dout.size(); ++i) dx[argmax[i]] += dout[i];
  return dx;
}

Tensor elementwise_fuse(const Tensor& a, const Tensor& b) { return add(a, b); }

std::pair<Tensor, Tensor> elementwise_fuse_backward(const Tensor& dout) { return {dout, dout}; }

// ---- loss -------------------------------------------------------------------

LossResult softmax_ce(const Tensor& logits, std::span<const LabelMap> labels, int ignore_label) {
  require_4d(logits, "softmax_ce");
  const std::size_t B = logits.dim(0), NC = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  if (labels.size() != B) {
    throw DimensionError("softmax_ce: " + std::to_string(labels.size()) + " label maps for batch of " +
                         std::to_string(B));
  }
  LossResult r;
  r.grad = Tensor(logits.shape());
  std::vector<double> prob(NC);
  double total = 0.0;
  for (std::size_t n = 0; n < B; ++n) {
    const LabelMap& lm = labels[n];
    if (lm.height != H || lm.width != W) {
      throw DimensionError("softmax_ce: label map " + std::to_string(lm.height) + "x" + std::to_string(lm.width) +
                           " vs logits " + shape_str(logits.shape()));
    }
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        const int label = lm.at(y, x);
        if (label == ignore_label) continue;
        if (label < 0 || static_cast<std::size_t>(label) >= NC) {
          throw DataError("softmax_ce: label " + std::to_string(label) + " outside [0, " + std::to_string(NC) + ")");
        }
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < NC; ++c) mx = std::max(mx, logits.at(n, c, y, x));
        double z = 0.0;
        for (std::size_t c = 0; c < NC; ++c) {
          prob[c] = std::exp(logits.at(n, c, y, x) - mx);
          z += prob[c];
        }
        total += std::log(z) - (logits.at(n, static_cast<std::size_t>(label), y, x) - mx);
        for (std::size_t c = 0; c < NC; ++c) r.grad.at(n, c, y, x) = prob[c] / z;
        r.grad.at(n, static_cast<std::size_t>(label), y, x) -= 1.0;
        ++r.counted;
      }
    }
  }
  if (r.counted > 0) {
    const double inv = 1.0 / static_cast<double>(r.counted);
    r.loss = total * inv;
    for (double& g : r.grad.data()) g *= inv;
  }
  if (finite_checks_enabled() && !std::isfinite(r.loss)) throw NumericError("softmax_ce: non-finite loss");
  return r;
}

std::vector<long double> softmax_ce_terms(const Tensor& logits, std::span<const LabelMap> labels, int ignore_label) {
  require_4d(logits, "softmax_ce_terms");
  const std::size_t B = logits.dim(0), NC = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  if (labels.size() != B) throw DimensionError("softmax_ce_terms: label count does not match the batch");
  std::vector<long double> terms;
  for (std::size_t n = 0; n < B; ++n) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        const int label = labels[n].at(y, x);
        if (label == ignore_label) continue;
        long double mx = logits.at(n, 0, y, x);
        for (std::size_t c = 1; c < NC; ++c) mx = std::max<long double>(mx, logits.at(n, c, y, x));
        long double z = 0.0L;
        for (std::size_t c = 0; c < NC; ++c) z += std::exp(static_cast<long double>(logits.at(n, c, y, x)) - mx);
        terms.push_back(std::log(z) - (logits.at(n, static_cast<std::size_t>(label), y, x) - mx));
      }
    }
  }
  return terms;
}

// ---- stateful layers ------------------------------------------------------------

Conv2dLayer::Conv2dLayer(const ConvSpec& spec, Rng& rng) : spec_(spec) {
  spec.validate();
  const double bound = 1.0 / std::sqrt(static_cast<double>(spec.in_channels * spec.kernel * spec.kernel));
  Tensor w({spec.out_channels, spec.in_channels, spec.kernel, spec.kernel});
  for (double& v : w.data()) v = rng.uniform(-bound, bound);
  Tensor b({spec.out_channels});
  for (double& v : b.data()) v = rng.uniform(-bound, bound);
  weight = Parameter(std::move(w));
  bias = Parameter(std::move(b));
}

Tensor Conv2dLayer::forward(const Tensor& x) {
  input_ = x;
  return conv2d(x, spec_, weight.value, bias.value);
}

Tensor Conv2dLayer::backward(const Tensor& dout, bool want_dinput) {
  if (input_.empty()) throw StateError("Conv2dLayer::backward before forward");
  return conv2d_backward(dout, input_, spec_, weight.value, weight.grad, &bias.grad, want_dinput);
}

Deconv2dLayer::Deconv2dLayer(const DeconvSpec& spec, bool learned) : spec_(spec), learned_(learned) {
  spec.validate();
  if (spec.in_channels != spec.out_channels) {
    throw ConfigError("bilinear-initialized deconvolution needs equal in/out channels");
  }
  weight = Parameter(bilinear_kernel(spec.factor, spec.in_channels));
}

Tensor Deconv2dLayer::forward(const Tensor& x) {
  input_ = x;
  return deconv2d(x, spec_, weight.value);
}

Tensor Deconv2dLayer::backward(const Tensor& dout) {
  if (input_.empty()) throw StateError("Deconv2dLayer::backward before forward");
  return deconv2d_backward(dout, input_, spec_, weight.value, learned_ ? &weight.grad : nullptr);
}

Tensor ReluLayer::forward(const Tensor& x) {
  input_ = x;
  return relu(x);
}

Tensor ReluLayer::backward(const Tensor& dout) {
  if (input_.empty()) throw StateError("ReluLayer::backward before forward");
  return relu_backward(dout, input_);
}

Tensor MaxPoolLayer::forward(const Tensor& x) {
  input_shape_ = x.shape();
  return max_pool2(x, argmax_);
}

Tensor MaxPoolLayer::backward(const Tensor& dout) {
  if (input_shape_.empty()) throw StateError("MaxPoolLayer::backward before forward");
  return max_pool2_backward(dout, input_shape_, argmax_);
}

}  // namespace stfcn
