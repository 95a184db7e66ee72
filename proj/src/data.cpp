// SPDX-License-Identifier: Apache-2.0
#include "stfcn/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

#include "stfcn/errors.hpp"
#include "stfcn/rng.hpp"

namespace fs = std::filesystem;

namespace stfcn {

// ---- PNM ------------------------------------------------------------------------

namespace {

struct PnmHeader {
  std::string magic;
  std::size_t width = 0, height = 0;
  unsigned maxval = 0;
};

std::size_t read_header_int(std::istream& is, const fs::path& path) {
  int ch = is.peek();
  while (ch != EOF) {
    if (ch == '#') {
      std::string comment;
      std::getline(is, comment);
    } else if (std::isspace(ch)) {
      is.get();
    } else {
      break;
    }
    ch = is.peek();
  }
  std::size_t v = 0;
  if (!(is >> v)) throw DataError("malformed header in " + path.string());
  return v;
}

PnmHeader read_pnm_header(std::istream& is, const fs::path& path) {
  PnmHeader h;
  char magic[2] = {0, 0};
  is.read(magic, 2);
  if (!is) throw DataError("malformed header in " + path.string());
  h.magic.assign(magic, 2);
  h.width = read_header_int(is, path);
  h.height = read_header_int(is, path);
  h.maxval = static_cast<unsigned>(read_header_int(is, path));
  if (!std::isspace(is.get())) throw DataError("malformed header in " + path.string());
  if (h.width == 0 || h.height == 0 || h.maxval == 0 || h.maxval > 65535) {
    throw DataError("malformed header in " + path.string());
  }
  return h;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("missing file " + path.string());
  return is;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  return os;
}

std::vector<unsigned char> read_payload(std::istream& is, std::size_t bytes, const fs::path& path) {
  std::vector<unsigned char> buf(bytes);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(is.gcount()) != bytes) throw DataError("truncated image data in " + path.string());
  return buf;
}

unsigned char quantize(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<unsigned char>(std::lround(c * 255.0));
}

}  // namespace

void write_ppm(const fs::path& path, const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) throw DimensionError("write_ppm: expected [3,H,W], got " + shape_str(rgb.shape()));
  const std::size_t H = rgb.dim(1), W = rgb.dim(2);
  auto os = open_out(path);
  os << "P6\n" << W << ' ' << H << "\n255\n";
  std::vector<unsigned char> buf(3 * H * W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c) buf[(y * W + x) * 3 + c] = quantize(rgb[(c * H + y) * W + x]);
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

Tensor read_ppm(const fs::path& path) {
  auto is = open_in(path);
  const PnmHeader h = read_pnm_header(is, path);
  if (h.magic != "P6" || h.maxval != 255) throw DataError("expected 8-bit binary PPM (P6): " + path.string());
  const auto buf = read_payload(is, 3 * h.width * h.height, path);
  Tensor t({3, h.height, h.width});
  for (std::size_t y = 0; y < h.height; ++y)
    for (std::size_t x = 0; x < h.width; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        t[(c * h.height + y) * h.width + x] = static_cast<double>(buf[(y * h.width + x) * 3 + c]) / 255.0;
  return t;
}

void write_label_pgm(const fs::path& path, const LabelMap& labels) {
  auto os = open_out(path);
  os << "P5\n" << labels.width << ' ' << labels.height << "\n255\n";
  std::vector<unsigned char> buf(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int v = labels.labels[i];
    if (v < 0 || v > 255) throw DataError("label " + std::to_string(v) + " does not fit an 8-bit PGM");
    buf[i] = static_cast<unsigned char>(v);
  }
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

LabelMap read_label_pgm(const fs::path& path) {
  auto is = open_in(path);
  const PnmHeader h = read_pnm_header(is, path);
  if (h.magic != "P5" || h.maxval > 255) throw DataError("expected 8-bit binary PGM (P5): " + path.string());
  const auto buf = read_payload(is, h.width * h.height, path);
  LabelMap lm(h.height, h.width);
  for (std::size_t i = 0; i < buf.size(); ++i) lm.labels[i] = buf[i];
  return lm;
}

void write_depth_pgm(const fs::path& path, std::span<const std::uint16_t> depth, std::size_t height, std::size_t width,
                     std::uint16_t maxval) {
  if (depth.size() != height * width) throw DimensionError("write_depth_pgm: size mismatch");
  auto os = open_out(path);
  os << "P5\n" << width << ' ' << height << '\n' << maxval << '\n';
  for (std::uint16_t v : depth) {
    os.put(static_cast<char>(v >> 8));
    os.put(static_cast<char>(v & 0xff));
  }
}

Tensor read_depth_pgm(const fs::path& path) {
  auto is = open_in(path);
  const PnmHeader h = read_pnm_header(is, path);
  if (h.magic != "P5") throw DataError("expected binary PGM (P5): " + path.string());
  const std::size_t bpp = h.maxval > 255 ? 2 : 1;
  const auto buf = read_payload(is, bpp * h.width * h.height, path);
  Tensor t({1, h.height, h.width});
  for (std::size_t i = 0; i < h.width * h.height; ++i) {
    const unsigned v = bpp == 2 ? (static_cast<unsigned>(buf[2 * i]) << 8) | buf[2 * i + 1] : buf[i];
    t[i] = static_cast<double>(v) / static_cast<double>(h.maxval);
  }
  return t;
}

// ---- manifests --------------------------------------------------------------------

void SequenceManifest::validate() const {
  if (stride_k == 0) throw DataError("manifest " + id + ": stride_k must be positive");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (i > 0 && frames[i].n <= frames[i - 1].n) {
      throw DataError("manifest " + id + ": frame numbers must be strictly increasing (" +
                      std::to_string(frames[i - 1].n) + " then " + std::to_string(frames[i].n) + ")");
    }
    if (frames[i].label && frames[i].n % static_cast<long>(stride_k) != 0) {
      throw DataError("manifest " + id + ": labeled frame " + std::to_string(frames[i].n) +
                      " is not a multiple of stride_k " + std::to_string(stride_k));
    }
  }
}

void to_json(nlohmann::json& j, const SequenceManifest& m) {
  auto frames = nlohmann::json::array();
  for (const auto& f : m.frames) {
    frames.push_back({{"n", f.n},
                      {"img", f.img},
                      {"label", f.label ? nlohmann::json(*f.label) : nlohmann::json(nullptr)},
                      {"depth", f.depth ? nlohmann::json(*f.depth) : nlohmann::json(nullptr)}});
  }
  j = {{"id", m.id}, {"n_cl", m.n_cl}, {"stride_k", m.stride_k}, {"frames", frames}};
}

void from_json(const nlohmann::json& j, SequenceManifest& m) {
  try {
    m.id = j.at("id").get<std::string>();
    m.n_cl = j.at("n_cl").get<std::size_t>();
    m.stride_k = j.at("stride_k").get<std::size_t>();
    m.frames.clear();
    for (const auto& f : j.at("frames")) {
      FrameRecord r;
      r.n = f.at("n").get<long>();
      r.img = f.at("img").get<std::string>();
      if (f.contains("label") && !f.at("label").is_null()) r.label = f.at("label").get<std::string>();
      if (f.contains("depth") && !f.at("depth").is_null()) r.depth = f.at("depth").get<std::string>();
      m.frames.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
}

SequenceManifest read_manifest(const fs::path& path) {
  auto is = open_in(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest " + path.string() + ": " + e.what());
  }
  SequenceManifest m = j.get<SequenceManifest>();
  m.validate();
  return m;
}

void write_manifest(const fs::path& path, const SequenceManifest& m) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << nlohmann::json(m).dump(2) << '\n';
}

Sequence load_sequence(const fs::path& manifest_path) {
  Sequence seq;
  seq.manifest = read_manifest(manifest_path);
  const fs::path base = manifest_path.parent_path();
  for (const auto& rec : seq.manifest.frames) {
    Tensor rgb = read_ppm(base / rec.img);
    const std::size_t H = rgb.dim(1), W = rgb.dim(2);
    if (rec.depth) {
      Tensor depth = read_depth_pgm(base / *rec.depth);
      if (depth.dim(1) != H || depth.dim(2) != W) {
        throw DataError("depth map " + *rec.depth + " does not match frame dimensions");
      }
      Tensor rgbd({4, H, W});
      std::copy(rgb.data().begin(), rgb.data().end(), rgbd.data().begin());
      std::copy(depth.data().begin(), depth.data().end(), rgbd.data().begin() + static_cast<std::ptrdiff_t>(3 * H * W));
      rgb = std::move(rgbd);
    }
    std::optional<LabelMap> label;
    if (rec.label) {
      label = read_label_pgm(base / *rec.label);
      if (label->height != H || label->width != W) {
        throw DataError("label map " + *rec.label + " is " + std::to_string(label->height) + "x" +
                        std::to_string(label->width) + " but frame is " + std::to_string(H) + "x" + std::to_string(W));
      }
    }
    seq.frames.push_back(std::move(rgb));
    seq.labels.push_back(std::move(label));
  }
  return seq;
}

std::vector<Sequence> load_split(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("missing dataset directory " + dir.string());
  std::vector<fs::path> manifests;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory() && fs::exists(entry.path() / "manifest.json")) manifests.push_back(entry.path() / "manifest.json");
  }
  std::vector<Sequence> out;
  for (const auto& m : manifests) out.push_back(load_sequence(m));
  std::sort(out.begin(), out.end(), [](const Sequence& a, const Sequence& b) { return a.manifest.id < b.manifest.id; });
  return out;
}

// ---- windows ------------------------------------------------------------------------

std::string to_string(WindowRule rule) { return rule == WindowRule::dense ? "dense" : "labeled_only"; }

WindowRule window_rule_from_string(const std::string& name) {
  if (name == "labeled_only") return WindowRule::labeled_only;
  if (name == "dense") return WindowRule::dense;
  throw ConfigError("unknown window rule '" + name + "' (expected labeled_only or dense)");
}

std::vector<Window> windows(std::span<const Sequence> sequences, std::size_t T, WindowRule rule, int ignore_label,
                            std::vector<std::string>* warnings) {
  if (T == 0) throw ConfigError("window length T must be at least 1");
  std::vector<Window> out;
  for (const Sequence& seq : sequences) {
    std::vector<std::size_t> labeled_idx;
    for (std::size_t i = 0; i < seq.frames.size(); ++i)
      if (seq.labels[i]) labeled_idx.push_back(i);

    std::vector<std::vector<std::size_t>> picks;
    if (rule == WindowRule::labeled_only) {
      for (std::size_t e = T - 1; e < labeled_idx.size(); ++e) {
        picks.emplace_back(labeled_idx.begin() + static_cast<std::ptrdiff_t>(e + 1 - T),
                           labeled_idx.begin() + static_cast<std::ptrdiff_t>(e + 1));
      }
    } else {
      for (std::size_t end : labeled_idx) {
        if (end + 1 < T) continue;
        std::vector<std::size_t> p(T);
        for (std::size_t k = 0; k < T; ++k) p[k] = end + 1 - T + k;
        picks.push_back(std::move(p));
      }
    }
    if (picks.empty()) {
      if (warnings) {
        warnings->push_back("sequence " + seq.manifest.id + " is too short for a window of " + std::to_string(T) +
                            " frames; skipped");
      }
      continue;
    }
    const Tensor& first = seq.frames.front();
    const std::size_t C = first.dim(0), H = first.dim(1), W = first.dim(2);
    for (const auto& p : picks) {
      Window w;
      w.sequence_id = seq.manifest.id;
      w.frames = Tensor({T, C, H, W});
      for (std::size_t k = 0; k < T; ++k) {
        const std::size_t i = p[k];
        w.frame_numbers.push_back(seq.manifest.frames[i].n);
        w.frames.assign0(k, seq.frames[i].reshaped({1, C, H, W}));
        w.labeled.push_back(seq.labels[i].has_value());
        w.labels.push_back(seq.labels[i] ? *seq.labels[i] : LabelMap(H, W, ignore_label));
      }
      out.push_back(std::move(w));
    }
  }
  return out;
}

// ---- synthetic generator ------------------------------------------------------------

void SynthSpec::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid synth spec: " + what); };
  if (height == 0 || width == 0 || frames == 0) fail("height, width and frames must be positive");
  if (pairs == 0 || instances == 0) fail("pairs and instances must be positive");
  if (n_cl != 1 + 2 * pairs) fail("n_cl must equal 1 + 2 * pairs");
  if (background_class < 0 || static_cast<std::size_t>(background_class) >= n_cl) fail("background_class out of range");
  if (min_size == 0 || min_size > max_size) fail("shape size range must satisfy 0 < min_size <= max_size");
  if (max_size > height || max_size > width) fail("shapes cannot fit in the frame");
  if (n_cl > 255) fail("at most 255 classes fit an 8-bit label map");
}

std::vector<std::pair<int, int>> SynthSpec::motion_pairs() const {
  std::vector<int> others;
  for (int c = 0; c < static_cast<int>(n_cl); ++c)
    if (c != background_class) others.push_back(c);
  std::vector<std::pair<int, int>> out;
  for (std::size_t p = 0; p + 1 < others.size(); p += 2) out.emplace_back(others[p], others[p + 1]);
  return out;
}

std::vector<std::size_t> SynthSpec::motion_classes() const {
  std::vector<std::size_t> out;
  for (auto [a, b] : motion_pairs()) {
    out.push_back(static_cast<std::size_t>(a));
    out.push_back(static_cast<std::size_t>(b));
  }
  return out;
}

void to_json(nlohmann::json& j, const SynthSpec& s) {
  j = {{"seed", s.seed},
       {"height", s.height},
       {"width", s.width},
       {"frames", s.frames},
       {"train_sequences", s.train_sequences},
       {"val_sequences", s.val_sequences},
       {"test_sequences", s.test_sequences},
       {"n_cl", s.n_cl},
       {"pairs", s.pairs},
       {"instances", s.instances},
       {"min_size", s.min_size},
       {"max_size", s.max_size},
       {"speed", s.speed},
       {"background_class", s.background_class}};
}

void from_json(const nlohmann::json& j, SynthSpec& s) {
  static const std::set<std::string> known{"seed",     "height",   "width",           "frames",          "train_sequences",
                                           "val_sequences", "test_sequences", "n_cl", "pairs",        "instances",
                                           "min_size", "max_size", "speed",           "background_class"};
  if (!j.is_object()) throw ConfigError("synth spec must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw ConfigError("unknown synth spec key '" + key + "'");
  try {
    s.seed = j.value("seed", s.seed);
    s.height = j.value("height", s.height);
    s.width = j.value("width", s.width);
    s.frames = j.value("frames", s.frames);
    s.train_sequences = j.value("train_sequences", s.train_sequences);
    s.val_sequences = j.value("val_sequences", s.val_sequences);
    s.test_sequences = j.value("test_sequences", s.test_sequences);
    s.pairs = j.value("pairs", s.pairs);
    s.n_cl = j.value("n_cl", 1 + 2 * s.pairs);
    s.instances = j.value("instances", s.instances);
    s.min_size = j.value("min_size", s.min_size);
    s.max_size = j.value("max_size", s.max_size);
    s.speed = j.value("speed", s.speed);
    s.background_class = j.value("background_class", s.background_class);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synth spec: ") + e.what());
  }
}

SynthScene synth_scene(const SynthSpec& spec, std::uint64_t sequence_seed) {
  spec.validate();
  Rng rng(sequence_seed);
  SynthScene scene;
  scene.height = spec.height;
  scene.width = spec.width;
  const std::size_t H = spec.height, W = spec.width;

  scene.background = Tensor({3, H, W});
  for (std::size_t c = 0; c < 3; ++c) {
    const double base = rng.uniform(0.2, 0.5);
    for (std::size_t i = 0; i < H * W; ++i) {
      const double v = base + 0.08 * rng.normal();
      scene.background[c * H * W + i] = static_cast<double>(quantize(v)) / 255.0;
    }
  }

  const auto pairs = spec.motion_pairs();
  for (std::size_t inst = 0; inst < spec.instances; ++inst) {
    const std::size_t p = rng.below(pairs.size());
    const auto size = static_cast<std::size_t>(rng.range(static_cast<long>(spec.min_size), static_cast<long>(spec.max_size)));
    const bool disc = rng.below(2) == 1;
    for (int member = 0; member < 2; ++member) {
      SynthObject o;
      o.label = member == 0 ? pairs[p].first : pairs[p].second;
      o.pair_instance = static_cast<int>(inst);
      o.disc = disc;
      o.size = size;
      for (std::size_t c = 0; c < 3; ++c) {
        // pairs beyond the first are told apart by one dark channel
        const bool dark = p > 0 && c == (p - 1) % 3;
        o.color[c] = dark ? rng.uniform(0.0, 0.2) : rng.uniform(0.55, 1.0);
        o.color[c] = static_cast<double>(quantize(o.color[c])) / 255.0;
      }
      o.x0 = rng.range(0, static_cast<long>(W) - 1);
      o.y0 = rng.range(0, static_cast<long>(H - size));
      o.velocity = member == 0 ? spec.speed : -spec.speed;
      scene.objects.push_back(o);
    }
  }
  // random paint order
  for (std::size_t i = scene.objects.size(); i > 1; --i) std::swap(scene.objects[i - 1], scene.objects[rng.below(i)]);
  return scene;
}

std::vector<bool> object_mask(const SynthScene& scene, const SynthObject& obj, std::size_t f) {
  const auto W = static_cast<long>(scene.width);
  std::vector<bool> mask(scene.height * scene.width, false);
  long x = (obj.x0 + obj.velocity * static_cast<long>(f)) % W;
  if (x < 0) x += W;
  const double r = (static_cast<double>(obj.size) - 1.0) / 2.0;
  for (std::size_t yy = 0; yy < obj.size; ++yy) {
    for (std::size_t xx = 0; xx < obj.size; ++xx) {
      if (obj.disc) {
        const double dy = static_cast<double>(yy) - r, dx = static_cast<double>(xx) - r;
        if (dy * dy + dx * dx > r * r) continue;
      }
      const auto py = static_cast<std::size_t>(obj.y0) + yy;
      const auto px = static_cast<std::size_t>((x + static_cast<long>(xx)) % W);
      mask[py * scene.width + px] = true;
    }
  }
  return mask;
}

RenderedFrame render_frame(const SynthScene& scene, std::size_t f, int background_class) {
  const std::size_t H = scene.height, W = scene.width;
  RenderedFrame out{scene.background, LabelMap(H, W, background_class)};
  for (const auto& obj : scene.objects) {
    const auto mask = object_mask(scene, obj, f);
    for (std::size_t i = 0; i < H * W; ++i) {
      if (!mask[i]) continue;
      for (std::size_t c = 0; c < 3; ++c) out.image[c * H * W + i] = obj.color[c];
      out.labels.labels[i] = obj.label;
    }
  }
  return out;
}

void accumulate_bayes(const SynthScene& scene, std::size_t frames, const SynthSpec& spec, std::uint64_t& hits,
                      std::uint64_t& total) {
  const auto motion = spec.motion_classes();
  const std::set<int> motion_set(motion.begin(), motion.end());
  const std::size_t instances = spec.instances;
  const std::size_t hypotheses = std::size_t{1} << instances;
  const std::size_t pixels = scene.height * scene.width;

  for (std::size_t f = 0; f < frames; ++f) {
    const RenderedFrame observed = render_frame(scene, f, spec.background_class);
    std::vector<std::map<int, double>> posterior(pixels);
    for (std::size_t h = 0; h < hypotheses; ++h) {
      SynthScene alt = scene;
      for (auto& obj : alt.objects) {
        if (!((h >> obj.pair_instance) & 1U)) continue;
        // swap the member class within the pair; appearance and the observed
        // position at frame f are kept
        for (auto [a, b] : spec.motion_pairs()) {
          if (obj.label == a) {
            obj.label = b;
            break;
          }
          if (obj.label == b) {
            obj.label = a;
            break;
          }
        }
      }
      // freeze positions at frame f so the hypothesis explains this frame only
      for (auto& obj : alt.objects) {
        const auto W = static_cast<long>(scene.width);
        long x = (obj.x0 + obj.velocity * static_cast<long>(f)) % W;
        obj.x0 = x < 0 ? x + W : x;
        obj.velocity = 0;
      }
      const RenderedFrame r = render_frame(alt, 0, spec.background_class);
      if (!(r.image == observed.image)) continue;  // likelihood zero
      const double prior = 1.0 / static_cast<double>(hypotheses);
      for (std::size_t i = 0; i < pixels; ++i) posterior[i][r.labels.labels[i]] += prior;
    }
    for (std::size_t i = 0; i < pixels; ++i) {
      const int truth = observed.labels.labels[i];
      if (!motion_set.contains(truth)) continue;
      int best = -1;
      double best_p = -1.0;
      for (const auto& [label, p] : posterior[i]) {  // ascending label order: lowest wins ties
        if (p > best_p) {
          best_p = p;
          best = label;
        }
      }
      ++total;
      if (best == truth) ++hits;
    }
  }
}

BayesBound synth_generate(const SynthSpec& spec, const fs::path& dir) {
  spec.validate();
  fs::create_directories(dir);
  nlohmann::json bound_json;
  BayesBound test_bound;
  const std::pair<const char*, std::size_t> splits[] = {
      {"train", spec.train_sequences}, {"val", spec.val_sequences}, {"test", spec.test_sequences}};
  for (const auto& [split, count] : splits) {
    std::uint64_t hits = 0, total = 0;
    for (std::size_t s = 0; s < count; ++s) {
      char name[32];
      std::snprintf(name, sizeof name, "seq_%04zu", s);
      const fs::path seq_dir = dir / split / name;
      fs::create_directories(seq_dir);
      const SynthScene scene = synth_scene(spec, stream_seed(spec.seed, std::string(split) + "/" + name));
      SequenceManifest m;
      m.id = std::string(split) + "/" + name;
      m.n_cl = spec.n_cl;
      m.stride_k = 1;
      for (std::size_t f = 0; f < spec.frames; ++f) {
        const RenderedFrame r = render_frame(scene, f, spec.background_class);
        char img[32], lab[32];
        std::snprintf(img, sizeof img, "%04zu.ppm", f);
        std::snprintf(lab, sizeof lab, "%04zu.pgm", f);
        write_ppm(seq_dir / img, r.image);
        write_label_pgm(seq_dir / lab, r.labels);
        m.frames.push_back({static_cast<long>(f), img, std::string(lab), std::nullopt});
      }
      write_manifest(seq_dir / "manifest.json", m);
      accumulate_bayes(scene, spec.frames, spec, hits, total);
    }
    const double acc = total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
    bound_json["splits"][split] = {{"accuracy", acc}, {"motion_pixels", total}};
    if (std::string(split) == "test") test_bound = {acc, total};
  }
  bound_json["motion_classes"] = spec.motion_classes();
  bound_json["bayes_accuracy"] = test_bound.accuracy;
  std::ofstream bs(dir / "bayes_bound.json");
  bs << bound_json.dump(2) << '\n';
  std::ofstream ss(dir / "synth_spec.json");
  ss << nlohmann::json(spec).dump(2) << '\n';
  return test_bound;
}

}  // namespace stfcn
