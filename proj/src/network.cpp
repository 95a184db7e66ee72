// SPDX-License-Identifier: Apache-2.0
#include "stfcn/network.hpp"

#include <bit>
#include <fstream>
#include <set>

#include "stfcn/errors.hpp"

namespace stfcn {

std::string to_string(StMode mode) {
  switch (mode) {
    case StMode::off:
      return "off";
    case StMode::on_top:
      return "on_top";
    case StMode::fusion:
      return "fusion";
  }
  return "off";
}

StMode st_mode_from_string(const std::string& name) {
  if (name == "off") return StMode::off;
  if (name == "on_top") return StMode::on_top;
  if (name == "fusion") return StMode::fusion;
  throw ConfigError("unknown st_mode '" + name + "' (expected off, on_top or fusion)");
}

namespace {
std::size_t pool_count(std::size_t downsample) { return static_cast<std::size_t>(std::countr_zero(downsample)); }
}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid model config: " + what); };
  if (input_channels == 0) fail("input_channels must be positive");
  if (n_cl < 2) fail("n_cl must be at least 2");
  if (encoder_channels.empty()) fail("encoder_channels must not be empty");
  for (auto c : encoder_channels)
    if (c == 0) fail("encoder_channels entries must be positive");
  if (downsample == 0 || !std::has_single_bit(downsample)) fail("downsample d must be a power of two");
  if (pool_count(downsample) > encoder_channels.size()) fail("downsample d needs more encoder blocks than given");
  if (downsample < 4) fail("downsample d must be >= 4 so the feature grid is at most W/4 x H/4");
  if (height == 0 || width == 0 || height % downsample || width % downsample) fail("d must divide H and W");
  if (hidden == 0) fail("hidden must be positive");
  if (window == 0) fail("window must be positive");
  if (st_mode == StMode::fusion && (grid_height() % 2 || grid_width() % 2)) {
    fail("fusion mode needs an even feature grid (branch down-samples by 2)");
  }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"input_channels", c.input_channels},
                     {"n_cl", c.n_cl},
                     {"height", c.height},
                     {"width", c.width},
                     {"encoder_channels", c.encoder_channels},
                     {"downsample", c.downsample},
                     {"st_mode", to_string(c.st_mode)},
                     {"weight_mode", to_string(c.weight_mode)},
                     {"hidden", c.hidden},
                     {"window", c.window},
                     {"deconv_learned", c.deconv_learned},
                     {"strict", c.strict},
                     {"carry_state", c.carry_state},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  static const std::set<std::string> known{"input_channels", "n_cl",        "height",         "width",
                                           "encoder_channels", "downsample", "st_mode",        "weight_mode",
                                           "hidden",           "window",     "deconv_learned", "strict",
                                           "carry_state",      "seed"};
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown model config key '" + key + "'");
  }
  try {
    c.input_channels = j.value("input_channels", c.input_channels);
    c.n_cl = j.value("n_cl", c.n_cl);
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.encoder_channels = j.value("encoder_channels", c.encoder_channels);
    c.downsample = j.value("downsample", c.downsample);
    if (j.contains("st_mode")) c.st_mode = st_mode_from_string(j.at("st_mode").get<std::string>());
    if (j.contains("weight_mode")) c.weight_mode = weight_mode_from_string(j.at("weight_mode").get<std::string>());
    c.hidden = j.value("hidden", c.hidden);
    c.window = j.value("window", c.window);
    c.deconv_learned = j.value("deconv_learned", c.deconv_learned);
    c.strict = j.value("strict", c.strict);
    c.carry_state = j.value("carry_state", c.carry_state);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

// ---- model --------------------------------------------------------------------

Model::Model(const ModelConfig& config) : config_(config) {
  config_.validate();
  const auto seed = config_.seed;
  const std::size_t pools = pool_count(config_.downsample);
  const std::size_t m = config_.feature_maps();

  std::size_t in = config_.input_channels;
  for (std::size_t b = 0; b < config_.encoder_channels.size(); ++b) {
    Rng rng(seed, "init/enc" + std::to_string(b + 1));
    encoder_.emplace_back(ConvSpec{in, config_.encoder_channels[b], 3, 1, 1, 1}, rng);
    encoder_relu_.emplace_back();
    encoder_pool_.emplace_back(b < pools ? std::optional<MaxPoolLayer>(MaxPoolLayer{}) : std::nullopt);
    in = config_.encoder_channels[b];
  }

  std::size_t head_in = m;
  if (config_.st_mode == StMode::on_top) {
    Rng rng(seed, "init/grid");
    grid_ = GridLSTM::random(config_.weight_mode, config_.grid_height(), config_.grid_width(), m, config_.hidden,
                             config_.window, rng);
    head_in = config_.hidden;
  } else if (config_.st_mode == StMode::fusion) {
    Rng down_rng(seed, "init/down");
    branch_down_ = Conv2dLayer(ConvSpec{m, m, 3, 2, 1, 1}, down_rng);
    Rng grid_rng(seed, "init/grid");
    grid_ = GridLSTM::random(config_.weight_mode, config_.grid_height() / 2, config_.grid_width() / 2, m,
                             config_.hidden, config_.window, grid_rng);
    Rng proj_rng(seed, "init/proj");
    branch_project_ = Conv2dLayer(ConvSpec{config_.hidden, m, 1, 1, 0, 1}, proj_rng);
    branch_up_ = Deconv2dLayer(DeconvSpec{m, m, 2}, config_.deconv_learned);
    Rng ctx_rng(seed, "init/context");
    context_ = Conv2dLayer(ConvSpec{m, m, 3, 1, 2, 2}, ctx_rng);
  }
  if (grid_) grid_->strict = config_.strict;

  Rng cls_rng(seed, "init/cls");
  classifier_ = Conv2dLayer(ConvSpec{head_in, config_.n_cl, 1, 1, 0, 1}, cls_rng);
  upsample_ = Deconv2dLayer(DeconvSpec{config_.n_cl, config_.n_cl, config_.downsample}, config_.deconv_learned);
}

Model build(const ModelConfig& config) { return Model(config); }

Model build_fusion(const ModelConfig& config) {
  if (config.st_mode != StMode::fusion) throw ConfigError("build_fusion requires st_mode = fusion");
  return Model(config);
}

void Model::reset_state() {
  if (grid_) grid_->reset();
}

Tensor Model::encode(const Tensor& frames) {
  Tensor x = frames;
  for (std::size_t b = 0; b < encoder_.size(); ++b) {
    x = encoder_relu_[b].forward(encoder_[b].forward(x));
    if (encoder_pool_[b]) x = encoder_pool_[b]->forward(x);
  }
  return x;
}

Tensor Model::encode_backward(const Tensor& dfeat, bool want_input_grad) {
  Tensor g = dfeat;
  for (std::size_t b = encoder_.size(); b-- > 0;) {
    if (encoder_pool_[b]) g = encoder_pool_[b]->backward(g);
    g = encoder_relu_[b].backward(g);
    g = encoder_[b].backward(g, b > 0 || want_input_grad);
  }
  return want_input_grad ? g : Tensor();
}

Tensor Model::forward_window(const Tensor& frames) {
  const Shape expected_tail{config_.input_channels, config_.height, config_.width};
  if (frames.rank() != 4 || Shape(frames.shape().begin() + 1, frames.shape().end()) != expected_tail) {
    throw DimensionError("forward_window: frames " + shape_str(frames.shape()) + " expected [T]x" +
                         shape_str(expected_tail));
  }
  if (grid_ && config_.strict && frames.dim(0) != config_.window && !config_.carry_state) {
    throw SequenceError("forward_window: window of " + std::to_string(frames.dim(0)) + " frames, model expects " +
                        std::to_string(config_.window));
  }
  if (grid_ && !config_.carry_state) grid_->reset();

  Tensor features = encode(frames);
  Tensor head;
  switch (config_.st_mode) {
    case StMode::off:
      head = std::move(features);
      break;
    case StMode::on_top:
      head = grid_->forward(features);
      break;
    case StMode::fusion: {
      Tensor branch = branch_down_.forward(features);
      branch = grid_->forward(branch);
      branch = branch_up_.forward(branch_project_.forward(branch));
      head = context_relu_.forward(context_.forward(elementwise_fuse(features, branch)));
      break;
    }
  }
  has_forward_ = true;
  return upsample_.forward(classifier_.forward(head));
}

Tensor Model::backward_window(const Tensor& dlogits, bool want_input_grad) {
  if (!has_forward_) throw StateError("backward_window called without forward_window");
  Tensor dhead = classifier_.backward(upsample_.backward(dlogits));
  Tensor dfeat;
  switch (config_.st_mode) {
    case StMode::off:
      dfeat = std::move(dhead);
      break;
    case StMode::on_top:
      dfeat = grid_->backward(dhead);
      break;
    case StMode::fusion: {
      Tensor dfused = context_.backward(context_relu_.backward(dhead));
      auto [dspatial, dbranch] = elementwise_fuse_backward(dfused);
      Tensor g = branch_project_.backward(branch_up_.backward(dbranch));
      g = branch_down_.backward(grid_->backward(g));
      dfeat = add(dspatial, g);
      break;
    }
  }
  return encode_backward(dfeat, want_input_grad);
}

std::vector<NamedParameter> Model::parameters() {
  std::vector<NamedParameter> out;
  for (std::size_t b = 0; b < encoder_.size(); ++b) {
    const std::string prefix = "enc" + std::to_string(b + 1);
    out.push_back({prefix + ".weight", &encoder_[b].weight, true});
    out.push_back({prefix + ".bias", &encoder_[b].bias, true});
  }
  if (config_.st_mode == StMode::fusion) {
    out.push_back({"down.weight", &branch_down_.weight, true});
    out.push_back({"down.bias", &branch_down_.bias, true});
  }
  if (grid_) {
    auto& blocks = grid_->weights();
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      std::string prefix = "st.";
      if (grid_->mode() == WeightMode::per_location) {
        prefix += "r" + std::to_string(k / grid_->width()) + "c" + std::to_string(k % grid_->width()) + ".";
      }
      auto params = blocks[k].params();
      for (std::size_t f = 0; f < params.size(); ++f) {
        out.push_back({prefix + std::string(LSTMWeights::kFieldNames[f]), params[f], true});
      }
    }
  }
  if (config_.st_mode == StMode::fusion) {
    out.push_back({"proj.weight", &branch_project_.weight, true});
    out.push_back({"proj.bias", &branch_project_.bias, true});
    out.push_back({"fuse_up.weight", &branch_up_.weight, config_.deconv_learned});
    out.push_back({"context.weight", &context_.weight, true});
    out.push_back({"context.bias", &context_.bias, true});
  }
  out.push_back({"cls.weight", &classifier_.weight, true});
  out.push_back({"cls.bias", &classifier_.bias, true});
  out.push_back({"up.weight", &upsample_.weight, config_.deconv_learned});
  return out;
}

std::size_t Model::parameter_count() {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.param->size();
  return n;
}

void Model::zero_grad() {
  for (auto& p : parameters()) p.param->zero_grad();
}

std::vector<LabelMap> predict(const Tensor& logits) {
  if (logits.rank() != 4) throw DimensionError("predict: logits must be 4-D, got " + shape_str(logits.shape()));
  const std::size_t B = logits.dim(0), NC = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  std::vector<LabelMap> maps;
  maps.reserve(B);
  for (std::size_t n = 0; n < B; ++n) {
    LabelMap lm(H, W);
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < NC; ++c) {
          if (logits.at(n, c, y, x) > logits.at(n, best, y, x)) best = c;
        }
        lm.at(y, x) = static_cast<int>(best);
      }
    }
    maps.push_back(std::move(lm));
  }
  return maps;
}

// ---- checkpoints ------------------------------------------------------------------

namespace {
constexpr const char* kCheckpointFormat = "stfcn-checkpoint/1";
constexpr const char* kGridFile = "grid.stgl";

bool is_grid_param(const std::string& name) { return name.rfind("st.", 0) == 0; }
}  // namespace

void save_checkpoint(Model& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = kCheckpointFormat;
  manifest["config"] = model.config();
  auto entries = nlohmann::json::array();
  for (const auto& p : model.parameters()) {
    if (is_grid_param(p.name)) {
      entries.push_back({{"name", p.name}, {"file", kGridFile}});
      continue;
    }
    const std::string file = p.name + ".sttn";
    save_tensor(dir / file, p.param->value);
    entries.push_back({{"name", p.name}, {"file", file}});
  }
  manifest["parameters"] = entries;
  manifest["grid"] = model.has_grid() ? nlohmann::json(kGridFile) : nlohmann::json(nullptr);
  if (model.has_grid()) {
    std::ofstream os(dir / kGridFile, std::ios::binary);
    if (!os) throw DataError("cannot write " + (dir / kGridFile).string());
    write_grid(os, model.grid());
  }
  std::ofstream os(dir / "manifest.json");
  if (!os) throw DataError("cannot write " + (dir / "manifest.json").string());
  os << manifest.dump(2) << '\n';
}

Model load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw DataError("missing checkpoint manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != kCheckpointFormat) throw DataError("unsupported checkpoint format");
  Model model(manifest.at("config").get<ModelConfig>());
  auto params = model.parameters();
  const auto& entries = manifest.at("parameters");
  if (entries.size() != params.size()) {
    throw DataError("checkpoint lists " + std::to_string(entries.size()) + " parameters, model has " +
                    std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const std::string name = entries[k].at("name").get<std::string>();
    if (name != params[k].name) throw DataError("checkpoint parameter order mismatch at '" + name + "'");
    if (is_grid_param(name)) continue;
    Tensor t = load_tensor(dir / entries[k].at("file").get<std::string>());
    if (!t.same_shape(params[k].param->value)) {
      throw DataError("checkpoint parameter '" + name + "' has shape " + shape_str(t.shape()));
    }
    params[k].param->value = std::move(t);
  }
  if (model.has_grid()) {
    std::ifstream gs(dir / kGridFile, std::ios::binary);
    if (!gs) throw DataError("missing " + (dir / kGridFile).string());
    GridLSTM loaded = read_grid(gs);
    GridLSTM& g = model.grid();
    if (loaded.mode() != g.mode() || loaded.height() != g.height() || loaded.width() != g.width() ||
        loaded.input_maps() != g.input_maps() || loaded.hidden() != g.hidden()) {
      throw DataError("grid checkpoint does not match the model config");
    }
    for (std::size_t k = 0; k < g.weights().size(); ++k) {
      auto dst = g.weights()[k].params();
      auto src = loaded.weights()[k].params();
      for (std::size_t f = 0; f < dst.size(); ++f) dst[f]->value = src[f]->value;
    }
  }
  return model;
}

}  // namespace stfcn
