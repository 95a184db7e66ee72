// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero if any
// criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "stfcn/cli.hpp"
#include "stfcn/errors.hpp"
#include "stfcn/lstm.hpp"
#include "stfcn/metrics.hpp"
#include "stfcn/st_module.hpp"
#include "lstm_oracle.hpp"

using namespace stfcn;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Tensor rand_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("missing " + p.string());
  return nlohmann::json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct Outcome {
  bool pass = true;
  std::string detail;
};

// ---- 1. gradients ----------------------------------------------------------------

Outcome gradient_integrity(const fs::path& configs, const fs::path& work) {
  RunConfig cfg = load_run_config(configs / "gradcheck_minimal.json");
  cfg.out = work / "gradcheck";
  cfg.threads = 1;
  cfg.apply_seed();
  const auto t0 = Clock::now();
  cmd_gradcheck(cfg);
  const double secs = seconds_since(t0);

  const auto j = read_json(cfg.out / "gradcheck.json");
  const double model_err = j.at("max_rel_error").get<double>();
  const double op_err = j.at("ops").at("max_rel_error").get<double>();
  // every block is sampled at 200 coordinates, or exhaustively when smaller
  bool coverage = true;
  Model probe(cfg.model);
  std::size_t blocks = 0;
  for (const auto& np : probe.parameters()) {
    if (!np.trainable) continue;
    const auto& b = j.at("blocks").at(blocks++);
    const std::size_t want = std::min<std::size_t>(200, np.param->size());
    if (b.at("name") != np.name || b.at("sampled").get<std::size_t>() != want) coverage = false;
  }
  coverage = coverage && blocks == j.at("blocks").size();

  Outcome o;
  o.pass = model_err < 1e-4 && op_err < 1e-6 && secs < 120.0 && coverage;
  o.detail = "model max rel " + fmt(model_err) + " (<1e-4) over " + std::to_string(blocks) +
             " blocks; ops max rel " + fmt(op_err) + " (<1e-6); " + fmt(secs) + " s (<120)" +
             (coverage ? "" : "; block coverage wrong");
  return o;
}

// ---- 2. LSTM equations -----------------------------------------------------------

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

Outcome lstm_fidelity() {
  Rng rng(2024, "acceptance/lstm");
  double worst = 0.0;
  bool exact = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t m = 1 + rng.below(5), N = 1 + rng.below(5);
    const LSTMWeights w = testutil::uniform_weights(m, N, rng);
    const Tensor x = rand_tensor({m}, rng);
    const LSTMState prev{rand_tensor({N}, rng), rand_tensor({N}, rng), 0};
    const auto r = lstm_step(x, prev, w);
    const std::vector<double> xv(x.data().begin(), x.data().end());
    const std::vector<double> hv(prev.h.data().begin(), prev.h.data().end());
    const std::vector<double> cv(prev.c.data().begin(), prev.c.data().end());
    const auto s = testutil::scalar_lstm(xv, hv, cv, w);
    for (std::size_t n = 0; n < N; ++n) {
      worst = std::max({worst, std::abs(s.h[n] - r.next.h[n]), std::abs(s.c[n] - r.next.c[n]),
                        std::abs(s.i[n] - r.cache.i[n]), std::abs(s.f[n] - r.cache.f[n]),
                        std::abs(s.o[n] - r.cache.o[n]), std::abs(s.g[n] - r.cache.g[n])});
    }
    // one-line form h = o * tanh(f * c_prev + i * g) with every gate written
    // in place, accumulated in the composed order
    auto pre = [&](const Parameter& Wx, const Parameter& Wh, const Parameter& b, std::size_t n) {
      double a = b.value[n];
      for (std::size_t j = 0; j < m; ++j) a += Wx.value[n * m + j] * x[j];
      double rec = 0.0;
      for (std::size_t j = 0; j < N; ++j) rec += Wh.value[n * N + j] * prev.h[j];
      return a + rec;
    };
    for (std::size_t n = 0; n < N; ++n) {
      const double h = sigmoid(pre(w.W_xo, w.W_ho, w.b_o, n)) *
                       std::tanh(sigmoid(pre(w.W_xf, w.W_hf, w.b_f, n)) * prev.c[n] +
                                 sigmoid(pre(w.W_xi, w.W_hi, w.b_i, n)) * std::tanh(pre(w.W_xc, w.W_hc, w.b_c, n)));
      if (h != r.next.h[n]) exact = false;
    }
  }
  return {worst <= 1e-12 && exact, "1000 instances, max |diff| vs scalar oracle " + fmt(worst) +
                                       " (<=1e-12); one-line form " + (exact ? "bit-identical" : "DIFFERS")};
}

// ---- 3. metrics --------------------------------------------------------------------

Outcome metric_fidelity() {
  Rng rng(2024, "acceptance/metrics");
  const int n_cl = 5;
  double worst = 0.0;
  bool counts_ok = true;
  for (int trial = 0; trial < 100; ++trial) {
    LabelMap gt(8, 8), pred(8, 8);
    for (int& v : gt.labels) v = static_cast<int>(rng.below(n_cl));
    for (std::size_t i = 0; i < pred.size(); ++i)
      pred.labels[i] = rng.uniform() < 0.5 ? gt.labels[i] : static_cast<int>(rng.below(n_cl));
    ConfusionMatrix cm(n_cl);
    cm.accumulate(pred, gt);

    // brute force from the raw maps
    double iu = 0.0, acc = 0.0;
    int iu_n = 0, acc_n = 0;
    long correct = 0;
    for (int c = 0; c < n_cl; ++c) {
      long inter = 0, uni = 0, in_gt = 0, in_pred = 0;
      for (std::size_t i = 0; i < gt.size(); ++i) {
        const bool g = gt.labels[i] == c, p = pred.labels[i] == c;
        inter += g && p;
        uni += g || p;
        in_gt += g;
        in_pred += p;
      }
      correct += inter;
      if (cm.at(c, c) != static_cast<std::uint64_t>(inter) || cm.row_sum(c) != static_cast<std::uint64_t>(in_gt) ||
          cm.col_sum(c) != static_cast<std::uint64_t>(in_pred))
        counts_ok = false;
      if (uni > 0) {
        iu += static_cast<double>(inter) / static_cast<double>(uni);
        ++iu_n;
      }
      if (in_gt > 0) {
        acc += static_cast<double>(inter) / static_cast<double>(in_gt);
        ++acc_n;
      }
    }
    worst = std::max({worst, std::abs(mean_iu(cm).value - iu / iu_n),
                      std::abs(pixel_accuracy(cm) - static_cast<double>(correct) / 64.0),
                      std::abs(mean_accuracy(cm) - acc / acc_n)});
  }
  ConfusionMatrix hand(2);
  hand.at(0, 0) = 3;
  hand.at(0, 1) = 1;
  hand.at(1, 0) = 2;
  hand.at(1, 1) = 4;
  const double hand_miou = mean_iu(hand).value;
  const bool pass = counts_ok && worst <= 1e-15 && std::abs(hand_miou - 0.535714) <= 1e-6;
  return {pass, "100 random 8x8 n_cl=5 cases: counts " + std::string(counts_ok ? "exact" : "WRONG") +
                    ", max metric diff " + fmt(worst) + " (<=1e-15); [[3,1],[2,4]] -> " + fmt(hand_miou)};
}

// ---- 4. deconvolution ----------------------------------------------------------------

// Bilinear interpolation at up-sampling factor k: output pixel o sits at input
// coordinate (o + 0.5) / k - 0.5.
double interpolate(const Tensor& img, double y, double x) {
  const long H = static_cast<long>(img.dim(2)), W = static_cast<long>(img.dim(3));
  const long y0 = static_cast<long>(std::floor(y)), x0 = static_cast<long>(std::floor(x));
  const double dy = y - static_cast<double>(y0), dx = x - static_cast<double>(x0);
  auto px = [&](long r, long c) {
    if (r < 0 || c < 0 || r >= H || c >= W) return 0.0;
    return img.at(0, 0, static_cast<std::size_t>(r), static_cast<std::size_t>(c));
  };
  return (1 - dy) * (1 - dx) * px(y0, x0) + (1 - dy) * dx * px(y0, x0 + 1) + dy * (1 - dx) * px(y0 + 1, x0) +
         dy * dx * px(y0 + 1, x0 + 1);
}

Outcome deconv_fidelity() {
  Rng rng(2024, "acceptance/deconv");
  const DeconvSpec spec{1, 1, 2};
  double interp_worst = 0.0;
  std::size_t interior = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = rand_tensor({1, 1, 4, 4}, rng);
    const Tensor y = deconv2d(x, spec, bilinear_kernel(2, 1));
    for (std::size_t r = 1; r + 1 < y.dim(2); ++r)
      for (std::size_t c = 1; c + 1 < y.dim(3); ++c) {
        const double oracle = interpolate(x, (r + 0.5) / 2 - 0.5, (c + 0.5) / 2 - 0.5);
        interp_worst = std::max(interp_worst, std::abs(oracle - y.at(0, 0, r, c)));
        ++interior;
      }
  }
  double adj_worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 1 + rng.below(4), Ci = 1 + rng.below(3), Co = 1 + rng.below(3), n = 2 + rng.below(5);
    const DeconvSpec ds{Ci, Co, k};
    const ConvSpec cs{Co, Ci, ds.kernel(), ds.stride(), ds.pad(), 1};
    const Tensor w = rand_tensor({Ci, Co, ds.kernel(), ds.kernel()}, rng);
    const Tensor big = rand_tensor({2, Co, k * n, k * n}, rng), small = rand_tensor({2, Ci, n, n}, rng);
    const double lhs = dot(conv2d(big, cs, w, Tensor()), small);
    const double rhs = dot(big, deconv2d(small, ds, w));
    adj_worst = std::max(adj_worst, std::abs(lhs - rhs) / std::max({std::abs(lhs), std::abs(rhs), 1e-300}));
  }
  return {interp_worst <= 1e-12 && adj_worst <= 1e-10,
          "bilinear k=2 vs interpolation oracle on " + std::to_string(interior) + " interior pixels: " +
              fmt(interp_worst) + " (<=1e-12); adjointness rel " + fmt(adj_worst) + " (<=1e-10)"};
}

// ---- 5 & 6. the A/B experiment ------------------------------------------------------------

struct AbSeries {
  std::vector<double> base_motion_acc, motion_miou_delta, delta;
  double bound = 0.0;
  double max_run_secs = 0.0;
  std::size_t train_windows = 0;
};

AbSeries run_ab_series(const fs::path& configs, const fs::path& work, const std::string& tag,
                       const std::string& synth_file) {
  const SynthSpec spec = read_json(configs / synth_file).get<SynthSpec>();
  const fs::path data = work / ("data_" + tag);
  fs::remove_all(data);
  AbSeries s;
  s.bound = synth_generate(spec, data).accuracy;
  s.train_windows = windows(load_split(data / "train"), 3, WindowRule::labeled_only).size();

  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    RunConfig cfg = load_run_config(configs / "ab.json");
    cfg.dataset = data;
    cfg.out = work / ("ab_" + tag + "_seed" + std::to_string(seed));
    cfg.seed = seed;
    cfg.threads = 1;
    cfg.apply_seed();
    const auto t0 = Clock::now();
    const AbResult r = cmd_ab(cfg);
    s.max_run_secs = std::max(s.max_run_secs, seconds_since(t0));
    s.base_motion_acc.push_back(r.baseline.motion_accuracy.value());
    s.motion_miou_delta.push_back(r.st.motion_miou.value() - r.baseline.motion_miou.value());
    s.delta.push_back(r.delta());
    std::cerr << "  [" << tag << " seed " << seed << "] baseline mIoU " << fmt(r.baseline.report.mean_iu)
              << ", ST mIoU " << fmt(r.st.report.mean_iu) << ", baseline motion acc "
              << fmt(*r.baseline.motion_accuracy) << ", motion mIoU delta " << fmt(s.motion_miou_delta.back())
              << " (" << fmt(seconds_since(t0)) << " s)\n";
  }
  return s;
}

std::string list(const std::vector<double>& v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + fmt(v[i]);
  return out + "]";
}

Outcome directional_claim(const AbSeries& s) {
  const double acc = median(s.base_motion_acc), gain = median(s.motion_miou_delta);
  const bool a = std::abs(acc - s.bound) <= 0.05;
  const bool b = gain >= 0.15;
  const bool budget = s.max_run_secs <= 1800.0 && s.train_windows >= 200;
  return {a && b && budget,
          "(a) median baseline motion-pixel acc " + fmt(acc) + " vs Bayes bound " + fmt(s.bound) + " (+-0.05) " +
              list(s.base_motion_acc) + "; (b) median motion-class mIoU gain " + fmt(gain) + " (>=0.15) " +
              list(s.motion_miou_delta) + "; " + std::to_string(s.train_windows) + " training windows, slowest run " +
              fmt(s.max_run_secs) + " s (<=1800)"};
}

Outcome negative_control(const AbSeries& s) {
  const double d = median(s.delta);
  return {std::abs(d) < 0.03, "speed 0: |median(st_miou - baseline_miou)| = " + fmt(std::abs(d)) + " (<0.03) " +
                                  list(s.delta)};
}

// ---- 7. truncation, independence, locality ------------------------------------------------

Outcome invariants() {
  Rng rng(2024, "acceptance/invariants");
  ModelConfig c;
  c.height = c.width = 16;
  c.n_cl = 3;
  c.encoder_channels = {6, 8};
  c.downsample = 4;
  c.hidden = 4;
  c.window = 3;
  auto make_window = [&](std::size_t T) {
    Window w;
    w.frames = rand_tensor({T, 3, 16, 16}, rng, 0.0, 1.0);
    for (std::size_t t = 0; t < T; ++t) {
      LabelMap l(16, 16);
      for (int& v : l.labels) v = static_cast<int>(rng.below(3));
      w.labels.push_back(l);
      w.labeled.push_back(true);
      w.frame_numbers.push_back(static_cast<long>(t));
    }
    return w;
  };

  // (a) truncation: after a first window, the second window's loss and every
  // gradient it produces are bit-identical whatever the first window held
  const Window second = make_window(3);
  auto second_pass = [&](const Window& first) {
    Model m = build(c);
    m.zero_grad();
    window_loss(m, first, Supervision::all_labeled);
    m.zero_grad();
    const LossResult r = window_loss(m, second, Supervision::all_labeled);
    const Tensor dx = m.backward_window(r.grad, true);
    std::vector<double> flat{r.loss};
    for (const auto& p : m.parameters()) flat.insert(flat.end(), p.param->grad.data().begin(), p.param->grad.data().end());
    flat.insert(flat.end(), dx.data().begin(), dx.data().end());
    return flat;
  };
  const bool truncation = second_pass(make_window(3)) == second_pass(make_window(3));

  // the grid on its own: window-2 weight gradients after a reset equal those of a fresh grid
  GridLSTM g = GridLSTM::random(WeightMode::per_location, 3, 3, 4, 3, 3, rng);
  GridLSTM fresh = g;
  const Tensor w1 = rand_tensor({3, 4, 3, 3}, rng), w2 = rand_tensor({3, 4, 3, 3}, rng);
  const Tensor R = rand_tensor({3, 3, 3, 3}, rng);
  g.forward(w1);
  g.backward(R);
  for (auto& w : g.weights()) w.zero_grad();
  g.reset();
  g.forward(w2);
  const Tensor dg = g.backward(R);
  fresh.forward(w2);
  const Tensor df = fresh.backward(R);
  bool grid_trunc = dg == df;
  for (std::size_t k = 0; k < g.weights().size(); ++k) {
    const auto a = g.weights()[k].params();
    const auto b = fresh.weights()[k].params();
    for (std::size_t f = 0; f < a.size(); ++f) grid_trunc = grid_trunc && a[f]->grad == b[f]->grad;
  }

  // (b) ST off: frame t is invariant to the other frames
  ModelConfig off = c;
  off.st_mode = StMode::off;
  Model base = build(off);
  Tensor frames = rand_tensor({3, 3, 16, 16}, rng, 0.0, 1.0);
  const Tensor before = base.forward_window(frames);
  bool independent = true;
  for (std::size_t t = 0; t < 3; ++t) {
    Tensor changed = frames;
    for (std::size_t o = 0; o < 3; ++o)
      if (o != t) changed.assign0(o, rand_tensor({3, 16, 16}, rng, 0.0, 1.0));
    independent = independent && base.forward_window(changed).slice0(t) == before.slice0(t);
  }

  // (c) locality: zeroing every other grid location leaves a location's output unchanged
  bool local = true;
  for (WeightMode mode : {WeightMode::per_location, WeightMode::shared}) {
    GridLSTM grid = GridLSTM::random(mode, 3, 4, 5, 3, 3, rng);
    const Tensor seq = rand_tensor({3, 5, 3, 4}, rng);
    grid.reset();
    const Tensor full = grid.forward(seq);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t col = 0; col < 4; ++col) {
        Tensor isolated(seq.shape());
        for (std::size_t t = 0; t < 3; ++t)
          for (std::size_t k = 0; k < 5; ++k) isolated.at(t, k, r, col) = seq.at(t, k, r, col);
        grid.reset();
        const Tensor out = grid.forward(isolated);
        for (std::size_t t = 0; t < 3; ++t)
          for (std::size_t n = 0; n < 3; ++n) local = local && out.at(t, n, r, col) == full.at(t, n, r, col);
      }
  }
  const bool pass = truncation && grid_trunc && independent && local;
  auto word = [](bool b) { return b ? "exact" : "VIOLATED"; };
  return {pass, std::string("window-boundary truncation ") + word(truncation && grid_trunc) +
                    "; ST-off frame independence " + word(independent) + "; ST locality " + word(local)};
}

// ---- 8. reproducibility ------------------------------------------------------------------

Outcome reproducibility(const fs::path& configs, const fs::path& work) {
  SynthSpec spec = read_json(configs / "synth_motion.json").get<SynthSpec>();
  spec.train_sequences = 6;
  spec.val_sequences = 2;
  spec.test_sequences = 4;
  const fs::path data = work / "data_repro";
  fs::remove_all(data);
  synth_generate(spec, data);

  auto run_once = [&](const std::string& name) {
    RunConfig cfg = load_run_config(configs / "ab.json");
    cfg.dataset = data;
    cfg.out = work / name;
    cfg.seed = 11;
    cfg.threads = 1;
    cfg.optim.iterations = 150;
    cfg.optim.checkpoint_every = 50;
    cfg.apply_seed();
    fs::remove_all(cfg.out);
    cmd_train(cfg);
    cfg.checkpoint = cfg.out / "checkpoint";
    cfg.out = work / name / "eval";
    cmd_eval(cfg);
    return work / name;
  };
  const fs::path a = run_once("repro_a"), b = run_once("repro_b");
  std::size_t files = 0;
  bool same = true;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    if (rel.filename() == "effective_config.json") continue;  // records its own output path
    ++files;
    same = same && fs::exists(b / rel) && slurp(e.path()) == slurp(b / rel);
  }
  const bool metrics = fs::exists(a / "eval" / "metrics.json");
  return {same && metrics && files > 10,
          std::to_string(files) + " files (checkpoints, log, metrics) compared byte for byte: " +
              (same ? "identical" : "DIFFERENT")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  std::string workdir = "acceptance_work";
  std::string configs = STFCN_CONFIG_DIR;
  app.add_option("--workdir", workdir, "Scratch directory for datasets and runs");
  app.add_option("--configs", configs, "Directory holding the experiment configs");
  std::vector<int> only;
  app.add_option("--criteria", only, "Run only these criteria (default: all)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  const fs::path work(workdir);
  fs::create_directories(work);

  int failures = 0;
  nlohmann::json summary = nlohmann::json::object();
  auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
  auto report = [&](int id, const std::string& title, const std::function<Outcome()>& fn) {
    if (!wanted(id)) return;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << title << "): " << o.detail << std::endl;
    summary[std::to_string(id)] = {{"title", title}, {"pass", o.pass}, {"detail", o.detail}};
  };

  report(1, "gradient integrity", [&] { return gradient_integrity(configs, work); });
  report(2, "LSTM equation fidelity", lstm_fidelity);
  report(3, "metric fidelity", metric_fidelity);
  report(4, "deconvolution fidelity", deconv_fidelity);

  AbSeries motion, still;
  bool motion_ok = true, still_ok = true;
  std::string motion_err, still_err;
  if (wanted(5)) {
    try {
      motion = run_ab_series(configs, work, "motion", "synth_motion.json");
    } catch (const std::exception& e) {
      motion_ok = false;
      motion_err = e.what();
    }
  }
  report(5, "directional claim", [&] {
    if (!motion_ok) return Outcome{false, "error: " + motion_err};
    return directional_claim(motion);
  });
  if (wanted(6)) {
    try {
      still = run_ab_series(configs, work, "static", "synth_static.json");
    } catch (const std::exception& e) {
      still_ok = false;
      still_err = e.what();
    }
  }
  report(6, "negative control", [&] {
    if (!still_ok) return Outcome{false, "error: " + still_err};
    return negative_control(still);
  });
  report(7, "truncation and independence invariants", invariants);
  report(8, "reproducibility", [&] { return reproducibility(configs, work); });

  std::ofstream(work / "acceptance.json") << summary.dump(2) << '\n';
  std::cout << (failures ? std::to_string(failures) + " criteria FAILED" : "all criteria PASSED") << std::endl;
  return failures ? 1 : 0;
}
