// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "stfcn/label_map.hpp"
#include "stfcn/layers.hpp"
#include "stfcn/st_module.hpp"

namespace stfcn {

enum class StMode { off, on_top, fusion };

std::string to_string(StMode mode);
StMode st_mode_from_string(const std::string& name);

struct ModelConfig {
  std::size_t input_channels = 3;  ///< 3 = RGB, 4 = RGB-D
  std::size_t n_cl = 3;
  std::size_t height = 64;
  std::size_t width = 64;
  /// One 3x3 conv + ReLU block per entry; the last entry is m.
  std::vector<std::size_t> encoder_channels{8, 16, 16, 16};
  /// Grid is (H/d) x (W/d); 2x max pooling follows the first log2(d) blocks.
  std::size_t downsample = 8;
  StMode st_mode = StMode::on_top;
  WeightMode weight_mode = WeightMode::per_location;
  std::size_t hidden = 30;
  std::size_t window = 3;
  bool deconv_learned = true;
  /// Reject windows longer than `window` when the ST module is active.
  bool strict = true;
  /// Keep LSTM state across forward_window calls instead of resetting.
  bool carry_state = false;
  std::uint64_t seed = 0;

  std::size_t feature_maps() const { return encoder_channels.back(); }
  std::size_t grid_height() const { return height / downsample; }
  std::size_t grid_width() const { return width / downsample; }

  /// Throws ConfigError naming the violated invariant.
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct NamedParameter {
  std::string name;
  Parameter* param;
  bool trainable;
};

/// Desk-scale STFCN. Topologies:
///   off    : encoder -> 1x1 classifier -> deconv(d)
///   on_top : encoder -> GridLSTM (m -> N) -> 1x1 classifier -> deconv(d)
///   fusion : encoder -> A ; A -> strided conv -> GridLSTM -> 1x1 conv (N -> m)
///            -> deconv(2) -> B ; (A + B) -> dilated conv + ReLU -> 1x1
///            classifier -> deconv(d)
///
/// forward_window() treats axis 0 of its input as time.
class Model {
 public:
  Model() = default;
  explicit Model(const ModelConfig& config);

  const ModelConfig& config() const noexcept { return config_; }

  /// frames [T, C, H, W] -> logits [T, n_cl, H, W]. Resets the ST state first
  /// unless carry_state is set.
  Tensor forward_window(const Tensor& frames);
  /// Backpropagates d loss / d logits of the most recent forward_window.
  /// Returns d loss / d frames when want_input_grad is set, else an empty tensor.
  Tensor backward_window(const Tensor& dlogits, bool want_input_grad = false);

  /// Parameters in a fixed order (encoder, branch, grid, head).
  std::vector<NamedParameter> parameters();
  std::size_t parameter_count();
  void zero_grad();

  bool has_grid() const noexcept { return grid_.has_value(); }
  GridLSTM& grid() { return grid_.value(); }
  void reset_state();

  // layer access for tests and checkpoints
  std::vector<Conv2dLayer>& encoder() { return encoder_; }
  Conv2dLayer& classifier() { return classifier_; }
  Deconv2dLayer& upsample() { return upsample_; }
  Conv2dLayer& branch_down() { return branch_down_; }
  Conv2dLayer& branch_project() { return branch_project_; }
  Deconv2dLayer& branch_up() { return branch_up_; }
  Conv2dLayer& context() { return context_; }

 private:
  Tensor encode(const Tensor& frames);
  Tensor encode_backward(const Tensor& dfeat, bool want_input_grad);

  ModelConfig config_;
  std::vector<Conv2dLayer> encoder_;
  std::vector<ReluLayer> encoder_relu_;
  std::vector<std::optional<MaxPoolLayer>> encoder_pool_;
  std::optional<GridLSTM> grid_;
  // fusion branch
  Conv2dLayer branch_down_;
  Conv2dLayer branch_project_;
  Deconv2dLayer branch_up_;
  Conv2dLayer context_;
  ReluLayer context_relu_;
  // head
  Conv2dLayer classifier_;
  Deconv2dLayer upsample_;
  bool has_forward_ = false;
};

Model build(const ModelConfig& config);
/// Requires st_mode == fusion.
Model build_fusion(const ModelConfig& config);

/// Pixelwise argmax; the lowest class index wins ties. One map per item of axis 0.
std::vector<LabelMap> predict(const Tensor& logits);

/// Directory checkpoint: manifest.json (config + ordered parameter names),
/// one STTN file per non-grid parameter, grid.stgl for the GridLSTM.
void save_checkpoint(Model& model, const std::filesystem::path& dir);
Model load_checkpoint(const std::filesystem::path& dir);

}  // namespace stfcn
