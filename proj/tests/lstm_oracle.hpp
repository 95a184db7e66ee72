// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "stfcn/lstm.hpp"

namespace testutil {

// Scalar-by-scalar transcription of the LSTM gate equations, written
// independently of the tensor primitives (biases added last, one loop per term).
struct ScalarStep {
  std::vector<double> i, f, o, g, c, h;
};

inline double scalar_sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

inline ScalarStep scalar_lstm(const std::vector<double>& x, const std::vector<double>& hp, const std::vector<double>& cp,
                              const stfcn::LSTMWeights& w) {
  const std::size_t m = w.input_size, N = w.hidden_size;
  auto gate = [&](const stfcn::Parameter& Wx, const stfcn::Parameter& Wh, const stfcn::Parameter& b, std::size_t n) {
    double sx = 0.0, sh = 0.0;
    for (std::size_t j = 0; j < m; ++j) sx += Wx.value[n * m + j] * x[j];
    for (std::size_t j = 0; j < N; ++j) sh += Wh.value[n * N + j] * hp[j];
    return sx + sh + b.value[n];
  };
  ScalarStep s;
  for (std::size_t n = 0; n < N; ++n) {
    s.i.push_back(scalar_sigmoid(gate(w.W_xi, w.W_hi, w.b_i, n)));
    s.f.push_back(scalar_sigmoid(gate(w.W_xf, w.W_hf, w.b_f, n)));
    s.o.push_back(scalar_sigmoid(gate(w.W_xo, w.W_ho, w.b_o, n)));
    s.g.push_back(std::tanh(gate(w.W_xc, w.W_hc, w.b_c, n)));
    s.c.push_back(s.f[n] * cp[n] + s.i[n] * s.g[n]);
    s.h.push_back(s.o[n] * std::tanh(s.c[n]));
  }
  return s;
}

inline stfcn::LSTMWeights uniform_weights(std::size_t m, std::size_t N, stfcn::Rng& rng, double scale = 1.0) {
  stfcn::LSTMWeights w(m, N);
  for (stfcn::Parameter* p : w.params())
    for (double& v : p->value.data()) v = rng.uniform(-scale, scale);
  return w;
}

}  // namespace testutil
