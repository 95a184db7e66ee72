// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "stfcn/lstm.hpp"
#include "stfcn/tensor.hpp"

namespace stfcn {

/// Region descriptors of one frame: values are [maps, height, width].
struct FeatureGrid {
  Tensor values;
  std::size_t t = 0;

  std::size_t maps() const { return values.dim(0); }
  std::size_t height() const { return values.dim(1); }
  std::size_t width() const { return values.dim(2); }
};

enum class WeightMode { per_location, shared };

std::string to_string(WeightMode mode);
WeightMode weight_mode_from_string(const std::string& name);

/// One LSTM per cell of a height x width feature grid. Cells never exchange
/// state; each consumes the m-vector at its own location and emits its hidden
/// state h (N maps) as the spatio-temporal feature there.
///
/// A window is processed by forward() on a [T, m, H', W'] tensor, continuing
/// from the current state; call reset() between independent windows.
/// backward() runs truncated BPTT over the most recent forward() only.
class GridLSTM {
 public:
  GridLSTM() = default;
  /// Zero weights.
  GridLSTM(WeightMode mode, std::size_t height, std::size_t width, std::size_t input_maps, std::size_t hidden,
           std::size_t window);
  static GridLSTM random(WeightMode mode, std::size_t height, std::size_t width, std::size_t input_maps,
                         std::size_t hidden, std::size_t window, Rng& rng);

  void reset();

  /// seq: [T, m, H', W'] -> [T, N, H', W'].
  Tensor forward(const Tensor& seq);
  /// dout: [T, N, H', W'] -> d seq. Weight gradients accumulate.
  Tensor backward(const Tensor& dout);

  std::vector<FeatureGrid> forward(std::span<const FeatureGrid> grids);

  WeightMode mode() const noexcept { return mode_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t input_maps() const noexcept { return input_maps_; }
  std::size_t hidden() const noexcept { return hidden_; }
  std::size_t window() const noexcept { return window_; }
  /// Steps consumed since the last reset.
  std::size_t time_index() const noexcept { return time_; }

  /// Strict mode rejects consuming more than `window` steps between resets.
  bool strict = true;

  std::vector<LSTMWeights>& weights() noexcept { return weights_; }
  const std::vector<LSTMWeights>& weights() const noexcept { return weights_; }
  LSTMWeights& weights_at(std::size_t row, std::size_t col);
  const LSTMState& state_at(std::size_t row, std::size_t col) const { return states_[row * width_ + col]; }

  std::size_t parameter_count() const;

 private:
  std::size_t weight_index(std::size_t loc) const { return mode_ == WeightMode::shared ? 0 : loc; }

  WeightMode mode_ = WeightMode::per_location;
  std::size_t height_ = 0, width_ = 0, input_maps_ = 0, hidden_ = 0, window_ = 0;
  std::size_t time_ = 0;
  std::vector<LSTMWeights> weights_;
  std::vector<LSTMState> states_;
  // caches_[t][loc] for the last forward window
  std::vector<std::vector<LSTMStepCache>> caches_;
};

/// Checkpoint: "STGL", u32 mode, u64 W', H', m, N, T, then LSTM weight blocks in
/// row-major location order (one block in shared mode).
void write_grid(std::ostream& os, const GridLSTM& grid);
GridLSTM read_grid(std::istream& is);

}  // namespace stfcn
