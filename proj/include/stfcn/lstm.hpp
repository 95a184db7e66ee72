// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <string_view>

#include "stfcn/rng.hpp"
#include "stfcn/tensor.hpp"

namespace stfcn {

/// Gate weights of one LSTM cell (no peepholes). Input-to-hidden matrices are
/// [N x m], hidden-to-hidden [N x N], biases [N].
struct LSTMWeights {
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;

  Parameter W_xi, W_xf, W_xo, W_xc;
  Parameter W_hi, W_hf, W_ho, W_hc;
  Parameter b_i, b_f, b_o, b_c;

  LSTMWeights() = default;
  /// All-zero weights.
  LSTMWeights(std::size_t input, std::size_t hidden);

  /// Uniform in +-1/sqrt(fan_in) for the matrices, zero biases except the
  /// forget gate, which starts at +1.
  static LSTMWeights random(std::size_t input, std::size_t hidden, Rng& rng);

  static constexpr std::array<std::string_view, 12> kFieldNames{
      "W_xi", "W_xf", "W_xo", "W_xc", "W_hi", "W_hf", "W_ho", "W_hc", "b_i", "b_f", "b_o", "b_c"};

  /// The twelve parameters in serialization order.
  std::array<Parameter*, 12> params();
  std::array<const Parameter*, 12> params() const;

  void zero_grad();
  std::size_t parameter_count() const;
};

struct LSTMState {
  Tensor h;
  Tensor c;
  std::size_t t = 0;

  static LSTMState zeros(std::size_t hidden) { return {Tensor({hidden}), Tensor({hidden}), 0}; }
};

/// Everything lstm_step_backward needs from the forward step.
struct LSTMStepCache {
  Tensor x, h_prev, c_prev;
  Tensor i, f, o, g;
  Tensor tanh_c;
};

struct LSTMStepResult {
  LSTMState next;
  LSTMStepCache cache;
};

struct LSTMStepGrads {
  Tensor dx;
  Tensor dh_prev;
  Tensor dc_prev;
};

/// i, f, o = sigmoid(W_x. x + W_h. h_prev + b_.), g = tanh(...),
/// c = f . c_prev + i . g, h = o . tanh(c).
LSTMStepResult lstm_step(const Tensor& x, const LSTMState& prev, const LSTMWeights& w);

/// Reverse of lstm_step. dh is the cotangent of the emitted h (from the layer
/// above plus the next step), dc_next the cotangent flowing back from c_{t+1}.
/// Weight gradients accumulate into w.
LSTMStepGrads lstm_step_backward(const Tensor& dh, const Tensor& dc_next, const LSTMStepCache& cache, LSTMWeights& w);

void write_lstm_weights(std::ostream& os, const LSTMWeights& w);
LSTMWeights read_lstm_weights(std::istream& is);

}  // namespace stfcn
