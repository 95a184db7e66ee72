// SPDX-License-Identifier: Apache-2.0
#include "stfcn/st_module.hpp"

#include <array>
#include <istream>
#include <ostream>

#include "stfcn/errors.hpp"

namespace stfcn {

std::string to_string(WeightMode mode) { return mode == WeightMode::shared ? "shared" : "per_location"; }

WeightMode weight_mode_from_string(const std::string& name) {
  if (name == "shared") return WeightMode::shared;
  if (name == "per_location") return WeightMode::per_location;
  throw ConfigError("unknown ST weight mode '" + name + "' (expected per_location or shared)");
}

GridLSTM::GridLSTM(WeightMode mode, std::size_t height, std::size_t width, std::size_t input_maps,
                   std::size_t hidden, std::size_t window)
    : mode_(mode), height_(height), width_(width), input_maps_(input_maps), hidden_(hidden), window_(window) {
  if (height == 0 || width == 0 || input_maps == 0 || hidden == 0 || window == 0) {
    throw ConfigError("GridLSTM: grid extents, maps, hidden size and window must be positive");
  }
  const std::size_t blocks = mode == WeightMode::shared ? 1 : height * width;
  weights_.assign(blocks, LSTMWeights(input_maps, hidden));
  reset();
}

GridLSTM GridLSTM::random(WeightMode mode, std::size_t height, std::size_t width, std::size_t input_maps,
                          std::size_t hidden, std::size_t window, Rng& rng) {
  GridLSTM g(mode, height, width, input_maps, hidden, window);
  for (auto& w : g.weights_) w = LSTMWeights::random(input_maps, hidden, rng);
  return g;
}

void GridLSTM::reset() {
  states_.assign(height_ * width_, LSTMState::zeros(hidden_));
  time_ = 0;
}

LSTMWeights& GridLSTM::weights_at(std::size_t row, std::size_t col) {
  if (row >= height_ || col >= width_) throw DimensionError("GridLSTM: location out of range");
  return weights_[weight_index(row * width_ + col)];
}

std::size_t GridLSTM::parameter_count() const {
  std::size_t n = 0;
  for (const auto& w : weights_) n += w.parameter_count();
  return n;
}

Tensor GridLSTM::forward(const Tensor& seq) {
  if (seq.rank() != 4 || seq.dim(2) != height_ || seq.dim(3) != width_) {
    throw DimensionError("GridLSTM: input " + shape_str(seq.shape()) + " does not match a " +
                         std::to_string(height_) + "x" + std::to_string(width_) + " grid");
  }
  if (seq.dim(1) != input_maps_) {
    throw ConfigError("GridLSTM: input has " + std::to_string(seq.dim(1)) + " maps but cells expect " +
                      std::to_string(input_maps_));
  }
  const std::size_t T = seq.dim(0);
  if (strict && time_ + T > window_) {
    throw SequenceError("GridLSTM: " + std::to_string(time_ + T) + " steps since reset exceed window " +
                        std::to_string(window_));
  }
  const std::size_t cells = height_ * width_;
  Tensor out({T, hidden_, height_, width_});
  caches_.assign(T, std::vector<LSTMStepCache>(cells));
  Tensor x({input_maps_});
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t loc = 0; loc < cells; ++loc) {
      for (std::size_t k = 0; k < input_maps_; ++k) x[k] = seq[(t * input_maps_ + k) * cells + loc];
      LSTMStepResult step = lstm_step(x, states_[loc], weights_[weight_index(loc)]);
      for (std::size_t k = 0; k < hidden_; ++k) out[(t * hidden_ + k) * cells + loc] = step.next.h[k];
      states_[loc] = std::move(step.next);
      caches_[t][loc] = std::move(step.cache);
    }
  }
  time_ += T;
  return out;
}

Tensor GridLSTM::backward(const Tensor& dout) {
  if (caches_.empty()) throw StateError("GridLSTM::backward called without a preceding forward");
  const std::size_t T = caches_.size();
  const Shape expected{T, hidden_, height_, width_};
  if (dout.shape() != expected) {
    throw DimensionError("GridLSTM::backward: dout " + shape_str(dout.shape()) + " expected " + shape_str(expected));
  }
  const std::size_t cells = height_ * width_;
  Tensor dseq({T, input_maps_, height_, width_});
  Tensor dh({hidden_});
  for (std::size_t loc = 0; loc < cells; ++loc) {
    LSTMWeights& w = weights_[weight_index(loc)];
    // cotangents flowing from step t+1 into step t; zero beyond the window end
    Tensor dh_next({hidden_});
    Tensor dc_next({hidden_});
    for (std::size_t t = T; t-- > 0;) {
      for (std::size_t k = 0; k < hidden_; ++k) dh[k] = dout[(t * hidden_ + k) * cells + loc] + dh_next[k];
      LSTMStepGrads g = lstm_step_backward(dh, dc_next, caches_[t][loc], w);
      for (std::size_t k = 0; k < input_maps_; ++k) dseq[(t * input_maps_ + k) * cells + loc] = g.dx[k];
      dh_next = std::move(g.dh_prev);
      dc_next = std::move(g.dc_prev);
    }
    // dh_next / dc_next now refer to the state before the window: truncated.
  }
  return dseq;
}

std::vector<FeatureGrid> GridLSTM::forward(std::span<const FeatureGrid> grids) {
  if (grids.empty()) return {};
  const std::size_t m = grids.front().maps();
  Tensor seq({grids.size(), m, height_, width_});
  for (std::size_t t = 0; t < grids.size(); ++t) {
    if (grids[t].values.shape() != grids.front().values.shape()) {
      throw DimensionError("GridLSTM: feature grids in a sequence must share (W', H', m)");
    }
    seq.assign0(t, grids[t].values.reshaped({1, m, height_, width_}));
  }
  const std::size_t t0 = time_;
  Tensor out = forward(seq);
  std::vector<FeatureGrid> result(grids.size());
  for (std::size_t t = 0; t < grids.size(); ++t) {
    result[t].values = out.slice0(t).reshaped({hidden_, height_, width_});
    result[t].t = grids[t].t != 0 ? grids[t].t : t0 + t + 1;
  }
  return result;
}

// ---- checkpoint ---------------------------------------------------------------

namespace {
constexpr std::array<char, 4> kGridMagic{'S', 'T', 'G', 'L'};

void put_u64(std::ostream& os, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u32(std::ostream& os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
std::uint64_t get_uint(std::istream& is, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int ch = is.get();
    if (ch == std::char_traits<char>::eof()) throw DataError("grid checkpoint truncated");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(ch)) << (8 * i);
  }
  return v;
}
}  // namespace

void write_grid(std::ostream& os, const GridLSTM& grid) {
  os.write(kGridMagic.data(), kGridMagic.size());
  put_u32(os, grid.mode() == WeightMode::shared ? 1u : 0u);
  for (std::size_t v : {grid.width(), grid.height(), grid.input_maps(), grid.hidden(), grid.window()}) put_u64(os, v);
  for (const auto& w : grid.weights()) write_lstm_weights(os, w);
}

GridLSTM read_grid(std::istream& is) {
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kGridMagic) throw DataError("bad grid checkpoint magic (expected STGL)");
  const auto mode_code = get_uint(is, 4);
  if (mode_code > 1) throw DataError("grid checkpoint: unknown mode " + std::to_string(mode_code));
  const WeightMode mode = mode_code == 1 ? WeightMode::shared : WeightMode::per_location;
  const auto width = get_uint(is, 8), height = get_uint(is, 8), m = get_uint(is, 8), n = get_uint(is, 8),
             window = get_uint(is, 8);
  GridLSTM grid(mode, height, width, m, n, window);
  for (auto& w : grid.weights()) {
    LSTMWeights loaded = read_lstm_weights(is);
    if (loaded.input_size != m || loaded.hidden_size != n) throw DataError("grid checkpoint: block shape mismatch");
    w = std::move(loaded);
  }
  return grid;
}

}  // namespace stfcn
