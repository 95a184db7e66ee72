// SPDX-License-Identifier: Apache-2.0
#include "stfcn/lstm.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <string>

#include "stfcn/errors.hpp"

namespace stfcn {

LSTMWeights::LSTMWeights(std::size_t input, std::size_t hidden) : input_size(input), hidden_size(hidden) {
  if (input == 0 || hidden == 0) throw ConfigError("LSTM input and hidden sizes must be positive");
  for (auto* p : {&W_xi, &W_xf, &W_xo, &W_xc}) *p = Parameter(Tensor({hidden, input}));
  for (auto* p : {&W_hi, &W_hf, &W_ho, &W_hc}) *p = Parameter(Tensor({hidden, hidden}));
  for (auto* p : {&b_i, &b_f, &b_o, &b_c}) *p = Parameter(Tensor({hidden}));
}

LSTMWeights LSTMWeights::random(std::size_t input, std::size_t hidden, Rng& rng) {
  LSTMWeights w(input, hidden);
  const double bx = 1.0 / std::sqrt(static_cast<double>(input));
  const double bh = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (auto* p : {&w.W_xi, &w.W_xf, &w.W_xo, &w.W_xc})
    for (double& v : p->value.data()) v = rng.uniform(-bx, bx);
  for (auto* p : {&w.W_hi, &w.W_hf, &w.W_ho, &w.W_hc})
    for (double& v : p->value.data()) v = rng.uniform(-bh, bh);
  w.b_f.value.fill(1.0);
  return w;
}

std::array<Parameter*, 12> LSTMWeights::params() {
  return {&W_xi, &W_xf, &W_xo, &W_xc, &W_hi, &W_hf, &W_ho, &W_hc, &b_i, &b_f, &b_o, &b_c};
}

std::array<const Parameter*, 12> LSTMWeights::params() const {
  return {&W_xi, &W_xf, &W_xo, &W_xc, &W_hi, &W_hf, &W_ho, &W_hc, &b_i, &b_f, &b_o, &b_c};
}

void LSTMWeights::zero_grad() {
  for (auto* p : params()) p->zero_grad();
}

std::size_t LSTMWeights::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : params()) n += p->size();
  return n;
}

namespace {

Tensor gate_preactivation(const Tensor& x, const Tensor& h_prev, const Parameter& Wx, const Parameter& Wh,
                          const Parameter& b) {
  // W_x x + b, then + W_h h_prev (the recurrent term carries no second bias)
  Tensor zero_bias(b.value.shape());
  return add(affine(x, Wx.value, b.value), affine(h_prev, Wh.value, zero_bias));
}

void gate_backward(const Tensor& dpre, const LSTMStepCache& cache, Parameter& Wx, Parameter& Wh, Parameter& b,
                   Tensor& dx, Tensor& dh_prev) {
  Tensor scratch_bias(b.value.shape());
  add_inplace(dx, affine_backward(dpre, cache.x, Wx.value, Wx.grad, b.grad));
  add_inplace(dh_prev, affine_backward(dpre, cache.h_prev, Wh.value, Wh.grad, scratch_bias));
}

}  // namespace

LSTMStepResult lstm_step(const Tensor& x, const LSTMState& prev, const LSTMWeights& w) {
  if (x.shape() != Shape{w.input_size}) {
    throw DimensionError("lstm_step: input " + shape_str(x.shape()) + " but cell expects [" +
                         std::to_string(w.input_size) + "]");
  }
  if (prev.h.shape() != Shape{w.hidden_size} || prev.c.shape() != Shape{w.hidden_size}) {
    throw DimensionError("lstm_step: state " + shape_str(prev.h.shape()) + "/" + shape_str(prev.c.shape()) +
                         " but cell has " + std::to_string(w.hidden_size) + " units");
  }
  check_finite(prev.c, "lstm_step c_prev");

  LSTMStepResult r;
  LSTMStepCache& k = r.cache;
  k.x = x;
  k.h_prev = prev.h;
  k.c_prev = prev.c;
  k.i = sigmoid_map(gate_preactivation(x, prev.h, w.W_xi, w.W_hi, w.b_i));
  k.f = sigmoid_map(gate_preactivation(x, prev.h, w.W_xf, w.W_hf, w.b_f));
  k.o = sigmoid_map(gate_preactivation(x, prev.h, w.W_xo, w.W_ho, w.b_o));
  k.g = tanh_map(gate_preactivation(x, prev.h, w.W_xc, w.W_hc, w.b_c));

  Tensor c = add(hadamard(k.f, prev.c), hadamard(k.i, k.g));
  k.tanh_c = tanh_map(c);
  r.next.h = hadamard(k.o, k.tanh_c);
  r.next.c = std::move(c);
  r.next.t = prev.t + 1;
  return r;
}

LSTMStepGrads lstm_step_backward(const Tensor& dh, const Tensor& dc_next, const LSTMStepCache& cache, LSTMWeights& w) {
  const Shape hs{w.hidden_size};
  if (dh.shape() != hs || dc_next.shape() != hs) {
    throw DimensionError("lstm_step_backward: cotangents " + shape_str(dh.shape()) + "/" +
                         shape_str(dc_next.shape()) + " expected " + shape_str(hs));
  }
  if (cache.i.empty()) throw StateError("lstm_step_backward: empty forward cache");

  // h = o . tanh(c)
  auto [do_, dtanh_c] = hadamard_backward(dh, cache.o, cache.tanh_c);
  Tensor dc = add(dc_next, tanh_backward(dtanh_c, cache.tanh_c));
  // c = f . c_prev + i . g
  auto [df, dc_prev] = hadamard_backward(dc, cache.f, cache.c_prev);
  auto [di, dg] = hadamard_backward(dc, cache.i, cache.g);

  LSTMStepGrads out{Tensor({w.input_size}), Tensor({w.hidden_size}), std::move(dc_prev)};
  gate_backward(sigmoid_backward(di, cache.i), cache, w.W_xi, w.W_hi, w.b_i, out.dx, out.dh_prev);
  gate_backward(sigmoid_backward(df, cache.f), cache, w.W_xf, w.W_hf, w.b_f, out.dx, out.dh_prev);
  gate_backward(sigmoid_backward(do_, cache.o), cache, w.W_xo, w.W_ho, w.b_o, out.dx, out.dh_prev);
  gate_backward(tanh_backward(dg, cache.g), cache, w.W_xc, w.W_hc, w.b_c, out.dx, out.dh_prev);
  return out;
}

void write_lstm_weights(std::ostream& os, const LSTMWeights& w) {
  for (const auto* p : w.params()) write_tensor(os, p->value);
}

LSTMWeights read_lstm_weights(std::istream& is) {
  Tensor first = read_tensor(is);
  if (first.rank() != 2) throw DataError("LSTM weights: W_xi must be a matrix");
  LSTMWeights w(first.dim(1), first.dim(0));
  auto params = w.params();
  params[0]->value = std::move(first);
  for (std::size_t k = 1; k < params.size(); ++k) {
    Tensor t = read_tensor(is);
    if (!t.same_shape(params[k]->value)) {
      throw DataError("LSTM weights: field " + std::string(LSTMWeights::kFieldNames[k]) + " has shape " +
                      shape_str(t.shape()) + ", expected " + shape_str(params[k]->value.shape()));
    }
    params[k]->value = std::move(t);
  }
  return w;
}

}  // namespace stfcn
