// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "stfcn/label_map.hpp"
#include "stfcn/tensor.hpp"

namespace stfcn {

// ---- image files -------------------------------------------------------------

/// Binary PPM (P6, 8-bit). `rgb` is [3, H, W] in [0, 1]; values are rounded to
/// the nearest 1/255.
void write_ppm(const std::filesystem::path& path, const Tensor& rgb);
Tensor read_ppm(const std::filesystem::path& path);

/// Binary PGM (P5, 8-bit) holding class indices.
void write_label_pgm(const std::filesystem::path& path, const LabelMap& labels);
LabelMap read_label_pgm(const std::filesystem::path& path);

/// 16-bit PGM depth map. Loading returns [1, H, W] divided by the header maxval.
void write_depth_pgm(const std::filesystem::path& path, std::span<const std::uint16_t> depth, std::size_t height,
                     std::size_t width, std::uint16_t maxval = 65535);
Tensor read_depth_pgm(const std::filesystem::path& path);

// ---- sequences -----------------------------------------------------------------

struct FrameRecord {
  long n = 0;
  std::string img;
  std::optional<std::string> label;
  std::optional<std::string> depth;
};

/// One video sequence. Paths are relative to the manifest's directory.
struct SequenceManifest {
  std::string id;
  std::size_t n_cl = 0;
  std::size_t stride_k = 1;
  std::vector<FrameRecord> frames;

  /// Frame numbers strictly increasing; labeled frames at multiples of k.
  void validate() const;
};

void to_json(nlohmann::json& j, const SequenceManifest& m);
void from_json(const nlohmann::json& j, SequenceManifest& m);
SequenceManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const SequenceManifest& m);

struct Sequence {
  SequenceManifest manifest;
  std::vector<Tensor> frames;  ///< [C, H, W]; depth, when present, is channel 4
  std::vector<std::optional<LabelMap>> labels;
};

Sequence load_sequence(const std::filesystem::path& manifest_path);
/// Every `<dir>/*/manifest.json`, ordered by sequence id.
std::vector<Sequence> load_split(const std::filesystem::path& dir);

enum class WindowRule { labeled_only, dense };

std::string to_string(WindowRule rule);
WindowRule window_rule_from_string(const std::string& name);

struct Window {
  std::string sequence_id;
  std::vector<long> frame_numbers;
  Tensor frames;                ///< [T, C, H, W]
  std::vector<LabelMap> labels;  ///< one per frame; unlabeled frames are all ignore_label
  std::vector<bool> labeled;
};

/// labeled_only: T consecutive labeled frames. dense: T consecutive frames
/// ending at a labeled frame. Sequences too short for one window are skipped
/// and reported through `warnings`.
std::vector<Window> windows(std::span<const Sequence> sequences, std::size_t T, WindowRule rule,
                            int ignore_label = kDefaultIgnoreLabel, std::vector<std::string>* warnings = nullptr);

// ---- synthetic motion-disambiguation data ------------------------------------------

/// Moving rectangles and discs over a static textured background. Every
/// motion-coded pair has two classes whose objects are drawn from the same
/// appearance distribution and differ only in the direction of horizontal
/// motion (first member rightward, second leftward). Motion wraps around the
/// frame so positions are uniform in every frame for both members.
struct SynthSpec {
  std::uint64_t seed = 1;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t frames = 8;
  std::size_t train_sequences = 40;
  std::size_t val_sequences = 8;
  std::size_t test_sequences = 20;
  std::size_t n_cl = 3;
  std::size_t pairs = 1;
  /// Pair instances per sequence; each contributes one object of each member class.
  std::size_t instances = 1;
  std::size_t min_size = 14;
  std::size_t max_size = 22;
  long speed = 3;
  int background_class = 0;

  void validate() const;
  /// (rightward class, leftward class) for every pair.
  std::vector<std::pair<int, int>> motion_pairs() const;
  std::vector<std::size_t> motion_classes() const;
};

void to_json(nlohmann::json& j, const SynthSpec& s);
void from_json(const nlohmann::json& j, SynthSpec& s);

/// One drawable object. Appearance never depends on `label`.
struct SynthObject {
  int label = 0;
  int pair_instance = 0;
  bool disc = false;
  std::size_t size = 0;
  double color[3] = {0, 0, 0};
  long x0 = 0;
  long y0 = 0;
  long velocity = 0;
};

struct SynthScene {
  std::size_t height = 0, width = 0;
  Tensor background;  ///< [3, H, W]
  std::vector<SynthObject> objects;  ///< in paint order (later objects on top)
};

struct RenderedFrame {
  Tensor image;  ///< [3, H, W], quantized to 1/255
  LabelMap labels;
};

SynthScene synth_scene(const SynthSpec& spec, std::uint64_t sequence_seed);
/// Horizontal positions are x0 + velocity * f, wrapped.
RenderedFrame render_frame(const SynthScene& scene, std::size_t f, int background_class);
/// Pixels covered by one object at frame f (row-major mask).
std::vector<bool> object_mask(const SynthScene& scene, const SynthObject& obj, std::size_t f);

struct BayesBound {
  double accuracy = 0.0;  ///< on motion-coded pixels
  std::uint64_t motion_pixels = 0;
};

/// Best single-frame classifier for the motion-coded pixels of `scene`'s
/// frames: enumerates every assignment of classes within each pair instance,
/// re-renders it, keeps those reproducing the observed frame, and predicts the
/// posterior-argmax class per pixel (lowest class on ties).
void accumulate_bayes(const SynthScene& scene, std::size_t frames, const SynthSpec& spec, std::uint64_t& hits,
                      std::uint64_t& total);

/// Writes <dir>/{train,val,test}/seq_NNNN/, synth_spec.json and bayes_bound.json.
/// Returns the test-split Bayes bound.
BayesBound synth_generate(const SynthSpec& spec, const std::filesystem::path& dir);

}  // namespace stfcn
