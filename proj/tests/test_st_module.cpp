// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>
#include <sstream>

#include "stfcn/errors.hpp"
#include "stfcn/st_module.hpp"
#include "lstm_oracle.hpp"
#include "test_util.hpp"

using namespace stfcn;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

GridLSTM random_grid(WeightMode mode, std::size_t H, std::size_t W, std::size_t m, std::size_t N, std::size_t T,
                     Rng& rng) {
  GridLSTM g(mode, H, W, m, N, T);
  for (auto& w : g.weights()) w = testutil::uniform_weights(m, N, rng);
  return g;
}

// Output vector at (t, row, col).
std::vector<double> cell(const Tensor& out, std::size_t t, std::size_t r, std::size_t c) {
  std::vector<double> v;
  for (std::size_t n = 0; n < out.dim(1); ++n) v.push_back(out.at(t, n, r, c));
  return v;
}

}  // namespace

TEST_CASE("construction and weight-set counts") {
  Rng rng(1);
  const GridLSTM per = GridLSTM::random(WeightMode::per_location, 3, 4, 5, 2, 3, rng);
  CHECK(per.weights().size() == 12);
  const GridLSTM shared = GridLSTM::random(WeightMode::shared, 3, 4, 5, 2, 3, rng);
  CHECK(shared.weights().size() == 1);
  CHECK(per.parameter_count() == 12 * shared.parameter_count());
  CHECK(weight_mode_from_string("shared") == WeightMode::shared);
  CHECK(to_string(WeightMode::per_location) == "per_location");
  CHECK_THROWS_AS(weight_mode_from_string("tied"), ConfigError);
  CHECK_THROWS_AS(GridLSTM(WeightMode::shared, 0, 1, 1, 1, 1), ConfigError);
}

TEST_CASE("every location matches an independent scalar LSTM") {
  Rng rng(2);
  const std::size_t H = 2, W = 2, m = 2, N = 2, T = 3;
  GridLSTM g = random_grid(WeightMode::per_location, H, W, m, N, T, rng);
  const Tensor seq = random_tensor({T, m, H, W}, rng);
  const Tensor out = g.forward(seq);
  REQUIRE(out.shape() == Shape{T, N, H, W});
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) {
      std::vector<double> h(N, 0.0), cs(N, 0.0);
      for (std::size_t t = 0; t < T; ++t) {
        std::vector<double> x;
        for (std::size_t k = 0; k < m; ++k) x.push_back(seq.at(t, k, r, c));
        const auto s = testutil::scalar_lstm(x, h, cs, g.weights_at(r, c));
        h = s.h;
        cs = s.c;
        for (std::size_t n = 0; n < N; ++n) CHECK(std::abs(out.at(t, n, r, c) - h[n]) <= 1e-12);
      }
      CHECK(max_abs_diff(g.state_at(r, c).h, Tensor({N}, h)) <= 1e-12);
    }
  CHECK(g.time_index() == 3);
}

TEST_CASE("zero recurrence makes steps independent") {
  Rng rng(3);
  GridLSTM g = random_grid(WeightMode::per_location, 2, 3, 3, 2, 3, rng);
  for (auto& w : g.weights()) {
    for (Parameter* p : {&w.W_hi, &w.W_hf, &w.W_ho, &w.W_hc}) p->value.fill(0.0);
    w.b_f.value.fill(-60.0);  // forget gate closed: nothing carried in c
  }
  const Tensor a = random_tensor({1, 3, 2, 3}, rng), b = random_tensor({1, 3, 2, 3}, rng),
               c = random_tensor({1, 3, 2, 3}, rng);
  auto stack = [](const Tensor& x, const Tensor& y, const Tensor& z) {
    Tensor s({3, 3, 2, 3});
    s.assign0(0, x);
    s.assign0(1, y);
    s.assign0(2, z);
    return s;
  };
  g.reset();
  const Tensor o1 = g.forward(stack(a, b, c));
  g.reset();
  const Tensor o2 = g.forward(stack(b, a, c));
  CHECK(max_abs_diff(o1.slice0(2), o2.slice0(2)) <= 1e-12);

  // T = 1 from zero state: a per-location gated feed-forward map
  g.reset();
  const Tensor single = g.forward(a);
  const auto& w = g.weights_at(1, 2);
  std::vector<double> x{a.at(0, 0, 1, 2), a.at(0, 1, 1, 2), a.at(0, 2, 1, 2)};
  const auto s = testutil::scalar_lstm(x, {0, 0}, {0, 0}, w);
  for (std::size_t n = 0; n < 2; ++n) {
    const double i = s.i[n], gg = s.g[n], o = s.o[n];
    CHECK(std::abs(single.at(0, n, 1, 2) - o * std::tanh(i * gg)) <= 1e-12);
  }
}

TEST_CASE("shared weights and constant input give identical locations") {
  Rng rng(4);
  GridLSTM g = random_grid(WeightMode::shared, 3, 3, 2, 4, 3, rng);
  Tensor seq({3, 2, 3, 3});
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t k = 0; k < 2; ++k)
      for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 3; ++c) seq.at(t, k, r, c) = 0.3 * (t + 1) - 0.2 * k;
  const Tensor out = g.forward(seq);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 3; ++c) CHECK(cell(out, t, r, c) == cell(out, t, 0, 0));
}

TEST_CASE("shared weights are equivariant to spatial permutations") {
  Rng rng(5);
  GridLSTM g = random_grid(WeightMode::shared, 2, 3, 2, 3, 3, rng);
  const Tensor seq = random_tensor({3, 2, 2, 3}, rng);
  // transpose-like shuffle of the six locations
  const std::size_t perm[6] = {4, 0, 5, 2, 1, 3};
  Tensor shuffled(seq.shape());
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t k = 0; k < 2; ++k)
      for (std::size_t l = 0; l < 6; ++l) shuffled.at(t, k, perm[l] / 3, perm[l] % 3) = seq.at(t, k, l / 3, l % 3);
  const Tensor a = g.forward(seq);
  g.reset();
  const Tensor b = g.forward(shuffled);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t l = 0; l < 6; ++l) CHECK(cell(a, t, l / 3, l % 3) == cell(b, t, perm[l] / 3, perm[l] % 3));
}

TEST_CASE("each location sees only its own input") {
  for (WeightMode mode : {WeightMode::per_location, WeightMode::shared}) {
    Rng rng(6);
    GridLSTM g = random_grid(mode, 3, 3, 2, 2, 3, rng);
    const Tensor seq = random_tensor({3, 2, 3, 3}, rng);
    const Tensor full = g.forward(seq);
    Tensor isolated(seq.shape());
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t k = 0; k < 2; ++k) isolated.at(t, k, 1, 2) = seq.at(t, k, 1, 2);
    g.reset();
    const Tensor alone = g.forward(isolated);
    for (std::size_t t = 0; t < 3; ++t) CHECK(cell(full, t, 1, 2) == cell(alone, t, 1, 2));
  }
}

TEST_CASE("per-location weights act locally") {
  Rng rng(7);
  GridLSTM g = random_grid(WeightMode::per_location, 2, 2, 2, 3, 3, rng);
  const Tensor seq = random_tensor({3, 2, 2, 2}, rng);
  const Tensor before = g.forward(seq);
  g.weights_at(0, 0).W_xc.value[0] += 0.5;
  g.reset();
  const Tensor after = g.forward(seq);
  for (std::size_t t = 0; t < 3; ++t) {
    CHECK(cell(before, t, 0, 0) != cell(after, t, 0, 0));
    CHECK(cell(before, t, 0, 1) == cell(after, t, 0, 1));
    CHECK(cell(before, t, 1, 0) == cell(after, t, 1, 0));
    CHECK(cell(before, t, 1, 1) == cell(after, t, 1, 1));
  }
}

TEST_CASE("reset semantics") {
  Rng rng(8);
  const Tensor seq = random_tensor({3, 2, 2, 2}, rng);
  SUBCASE("zero weights give zero output") {
    GridLSTM z(WeightMode::per_location, 2, 2, 2, 3, 3);
    CHECK(max_abs(z.forward(seq)) == 0.0);
  }
  SUBCASE("identical windows separated by reset") {
    GridLSTM g = random_grid(WeightMode::per_location, 2, 2, 2, 3, 3, rng);
    const Tensor a = g.forward(seq);
    g.reset();
    CHECK(g.time_index() == 0);
    CHECK(max_abs(g.state_at(1, 1).c) == 0.0);
    CHECK(g.forward(seq) == a);
  }
  SUBCASE("carrying state changes the second window") {
    GridLSTM g = random_grid(WeightMode::per_location, 2, 2, 2, 3, 3, rng);
    g.strict = false;
    const Tensor a = g.forward(seq);
    const Tensor b = g.forward(seq);
    CHECK(max_abs_diff(a, b) > 1e-6);
  }
}

TEST_CASE("errors") {
  Rng rng(9);
  GridLSTM g = random_grid(WeightMode::shared, 2, 2, 2, 3, 3, rng);
  CHECK_THROWS_AS(g.backward(Tensor({3, 3, 2, 2})), StateError);
  CHECK_THROWS_AS(g.forward(Tensor({4, 2, 2, 2})), SequenceError);
  g.forward(Tensor({2, 2, 2, 2}));
  CHECK_THROWS_AS(g.forward(Tensor({2, 2, 2, 2})), SequenceError);  // 4 steps since reset
  g.reset();
  CHECK_THROWS_AS(g.forward(Tensor({3, 5, 2, 2})), ConfigError);
  CHECK_THROWS_AS(g.forward(Tensor({3, 2, 3, 2})), DimensionError);
}

TEST_CASE("BPTT over the window passes finite differences") {
  Rng rng(10);
  GridLSTM g = random_grid(WeightMode::per_location, 1, 1, 2, 3, 3, rng);
  Tensor seq = random_tensor({3, 2, 1, 1}, rng);
  const Tensor R = random_tensor({3, 3, 1, 1}, rng);
  auto loss = [&] {
    g.reset();
    return dot(g.forward(seq), R);
  };
  for (auto& w : g.weights()) w.zero_grad();
  loss();
  const Tensor dseq = g.backward(R);
  CHECK(max_abs_diff(dseq, testutil::numeric_grad(loss, seq)) < 1e-9);
  auto& w = g.weights_at(0, 0);
  auto params = w.params();
  std::vector<Tensor> analytic;
  for (Parameter* p : params) analytic.push_back(p->grad);
  for (std::size_t k = 0; k < params.size(); ++k) {
    CHECK_MESSAGE(max_abs_diff(analytic[k], testutil::numeric_grad(loss, params[k]->value)) < 1e-9,
                  LSTMWeights::kFieldNames[k]);
  }
}

TEST_CASE("shared-mode gradients sum over locations") {
  Rng rng(11);
  GridLSTM g = random_grid(WeightMode::shared, 2, 2, 2, 2, 2, rng);
  const Tensor seq = random_tensor({2, 2, 2, 2}, rng);
  const Tensor R = random_tensor({2, 2, 2, 2}, rng);
  auto loss = [&] {
    g.reset();
    return dot(g.forward(seq), R);
  };
  g.weights()[0].zero_grad();
  loss();
  g.backward(R);
  const Tensor analytic = g.weights()[0].W_hi.grad;
  CHECK(max_abs_diff(analytic, testutil::numeric_grad(loss, g.weights()[0].W_hi.value)) < 1e-9);
}

TEST_CASE("no gradient crosses a window boundary") {
  Rng rng(12);
  GridLSTM g = random_grid(WeightMode::per_location, 2, 1, 2, 2, 3, rng);
  g.strict = false;
  const Tensor first = random_tensor({3, 2, 2, 1}, rng), second = random_tensor({3, 2, 2, 1}, rng);
  const Tensor R = random_tensor({3, 2, 2, 1}, rng);
  g.forward(first);
  const GridLSTM after_first = g;  // the carried state, held constant
  g.forward(second);
  for (auto& w : g.weights()) w.zero_grad();
  const Tensor dsecond = g.backward(R);
  CHECK(dsecond.shape() == second.shape());
  // truncated objective: the second window from a frozen starting state
  GridLSTM probe = after_first;
  auto loss = [&] {
    GridLSTM run = probe;
    return dot(run.forward(second), R);
  };
  for (std::size_t loc = 0; loc < 2; ++loc) {
    const Tensor analytic = g.weights()[loc].W_xf.grad;
    CHECK(max_abs_diff(analytic, testutil::numeric_grad(loss, probe.weights()[loc].W_xf.value)) < 1e-9);
  }
  // a second backward reuses the same caches and the first window never appears
  CHECK(g.backward(R) == dsecond);
}

TEST_CASE("feature-grid sequences") {
  Rng rng(13);
  GridLSTM g = random_grid(WeightMode::per_location, 2, 2, 3, 2, 3, rng);
  const Tensor seq = random_tensor({2, 3, 2, 2}, rng);
  const Tensor expect = g.forward(seq);
  g.reset();
  std::vector<FeatureGrid> grids{{seq.slice0(0).reshaped({3, 2, 2}), 0}, {seq.slice0(1).reshaped({3, 2, 2}), 1}};
  const auto out = g.forward(grids);
  REQUIRE(out.size() == 2);
  CHECK(out[1].maps() == 2);
  CHECK(out[1].t == 1);
  CHECK(out[1].values == expect.slice0(1).reshaped({2, 2, 2}));
}

TEST_CASE("grid checkpoint round trip and header") {
  Rng rng(14);
  const GridLSTM g = GridLSTM::random(WeightMode::per_location, 2, 3, 4, 5, 3, rng);
  std::stringstream ss;
  write_grid(ss, g);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 4) == "STGL");
  std::uint32_t mode;
  std::uint64_t dims[5];
  std::memcpy(&mode, bytes.data() + 4, 4);
  std::memcpy(dims, bytes.data() + 8, sizeof dims);
  CHECK(mode == 0);
  CHECK(dims[0] == 3);  // W'
  CHECK(dims[1] == 2);  // H'
  CHECK(dims[2] == 4);
  CHECK(dims[3] == 5);
  CHECK(dims[4] == 3);
  GridLSTM back = read_grid(ss);
  CHECK(back.mode() == WeightMode::per_location);
  CHECK(back.height() == 2);
  CHECK(back.width() == 3);
  for (std::size_t l = 0; l < 6; ++l) CHECK(back.weights()[l].W_hc.value == g.weights()[l].W_hc.value);
  std::stringstream bad("STGX");
  CHECK_THROWS_AS(read_grid(bad), DataError);
}
