// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "stfcn/data.hpp"
#include "stfcn/metrics.hpp"
#include "stfcn/network.hpp"

namespace stfcn {

enum class Supervision { last_frame, all_labeled };

std::string to_string(Supervision rule);
Supervision supervision_from_string(const std::string& name);

struct OptimConfig {
  double lr = 1e-5;
  double momentum = 0.9;
  std::size_t iterations = 1000;
  /// Windows per optimizer step; their losses are averaged.
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;
  Supervision supervision = Supervision::last_frame;
  /// Global gradient-norm cap; 0 disables clipping.
  double clip_norm = 0.0;
  /// Evaluate on the validation windows every this many iterations (0 = never).
  std::size_t eval_every = 0;
  std::size_t checkpoint_every = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const OptimConfig& c);
void from_json(const nlohmann::json& j, OptimConfig& c);

/// v <- mu v + grad ; value <- value - lr v ; grad <- 0. Non-trainable entries
/// are skipped. Throws NumericError naming the first parameter whose gradient
/// is not finite (before anything is updated).
void sgd_momentum_step(std::span<const NamedParameter> params, double lr, double momentum);

/// Scales every trainable gradient so the global L2 norm is at most max_norm.
/// Returns the norm before scaling.
double clip_grad_norm(std::span<const NamedParameter> params, double max_norm);

/// Forward + loss for one window; the gradient is d loss / d logits for the
/// full window (zero on unsupervised frames).
LossResult window_loss(Model& model, const Window& window, Supervision rule, int ignore_label = kDefaultIgnoreLabel);

/// Frames that are scored under `rule` (the last frame, or every labeled one).
std::vector<std::size_t> supervised_frames(const Window& window, Supervision rule);

/// Dataset-level confusion matrix over the supervised frames of every window.
/// Work is split across `threads` model copies; the result does not depend on
/// the thread count.
ConfusionMatrix evaluate(const Model& model, std::span<const Window> windows, Supervision rule,
                         std::size_t threads = 1, int ignore_label = kDefaultIgnoreLabel);

struct TrainLogRow {
  std::size_t iteration = 0;
  double loss = 0.0;
  std::optional<double> mean_iu;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;

  /// Columns iteration,loss,mean_iu (mean_iu empty on rows without evaluation).
  std::string to_csv() const;
};

struct TrainOptions {
  std::span<const Window> validation;
  std::optional<std::filesystem::path> checkpoint_dir;
  std::size_t threads = 1;
  int ignore_label = kDefaultIgnoreLabel;
  /// Called after each logged row (progress reporting).
  std::function<void(const TrainLogRow&)> on_row;
};

/// Windowed training with truncated BPTT: per window the ST state is reset,
/// the T frames are run forward, the loss of `optim.supervision` applied and
/// the full window backpropagated. Data order is a fresh shuffle per epoch
/// drawn from the "data_order" stream of optim.seed.
TrainLog train(Model& model, std::span<const Window> data, const OptimConfig& optim, const TrainOptions& options = {});

// ---- gradient checking ---------------------------------------------------------------

struct GradCheckBlock {
  std::string name;
  Parameter* param;
};

struct GradCheckBlockReport {
  std::string name;
  std::size_t sampled = 0;
  double max_rel_error = 0.0;
  double mean_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckBlockReport> blocks;
  double epsilon = 0.0;

  double max_rel_error() const;
  nlohmann::json to_json() const;
};

/// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

/// Central-difference check. `loss` evaluates the objective at the current
/// parameter values; `gradients` fills every block's grad (from zero) at the
/// current values. Up to `subsample` coordinates per block are drawn without
/// replacement; smaller blocks are checked exhaustively.
GradCheckReport grad_check(const std::function<double()>& loss, const std::function<void()>& gradients,
                           std::span<const GradCheckBlock> blocks, double epsilon, std::size_t subsample, Rng& rng);

/// Checks every trainable parameter block of `model` on one window.
GradCheckReport grad_check(Model& model, const Window& window, Supervision rule, double epsilon,
                           std::size_t subsample, std::uint64_t seed);

/// Checks the hand-written backward of every primitive op (affine, conv2d with
/// stride/pad/dilation, deconv2d, relu, max pooling, fusion, lstm_step,
/// softmax cross-entropy) on small random instances. Each op is scored through
/// a random linear projection of its output; blocks are named "<op>/<input>".
GradCheckReport op_grad_checks(std::uint64_t seed, double epsilon = 1e-5, std::size_t subsample = 200);

}  // namespace stfcn
