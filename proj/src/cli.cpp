// SPDX-License-Identifier: Apache-2.0
#include "stfcn/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <set>

#include "CLI11.hpp"

#include "stfcn/errors.hpp"
#include "stfcn/metrics.hpp"
#include "stfcn/rng.hpp"

namespace fs = std::filesystem;

namespace stfcn {

void RunConfig::apply_seed() {
  model.seed = seed;
  optim.seed = seed;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"dataset", "checkpoint", "out",   "seed",  "threads",  "split",
                                           "window_rule", "model",  "optim", "gradcheck"};
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw ConfigError("unknown run config key '" + key + "'");
  RunConfig c;
  try {
    if (j.contains("dataset")) c.dataset = j.at("dataset").get<std::string>();
    if (j.contains("checkpoint")) c.checkpoint = j.at("checkpoint").get<std::string>();
    if (j.contains("out")) c.out = j.at("out").get<std::string>();
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);
    c.split = j.value("split", c.split);
    if (j.contains("window_rule")) c.window_rule = window_rule_from_string(j.at("window_rule").get<std::string>());
    if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
    if (j.contains("optim")) c.optim = j.at("optim").get<OptimConfig>();
    if (j.contains("gradcheck")) {
      const auto& g = j.at("gradcheck");
      c.gradcheck_epsilon = g.value("epsilon", c.gradcheck_epsilon);
      c.gradcheck_subsample = g.value("subsample", c.gradcheck_subsample);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  return c;
}

nlohmann::json to_json(const RunConfig& c, bool include_out) {
  nlohmann::json j{{"dataset", c.dataset.string()},
                   {"checkpoint", c.checkpoint.string()},
                   {"seed", c.seed},
                   {"threads", c.threads},
                   {"split", c.split},
                   {"window_rule", to_string(c.window_rule)},
                   {"model", c.model},
                   {"optim", c.optim},
                   {"gradcheck", {{"epsilon", c.gradcheck_epsilon}, {"subsample", c.gradcheck_subsample}}}};
  if (include_out) j["out"] = c.out.string();
  return j;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

std::optional<nlohmann::json> read_json_if_present(const fs::path& path) {
  if (!fs::exists(path)) return std::nullopt;
  std::ifstream is(path);
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed " + path.string() + ": " + e.what());
  }
}

std::vector<Window> load_windows(const RunConfig& cfg, const std::string& split, std::size_t T) {
  if (cfg.dataset.empty()) throw ConfigError("no dataset given (--dataset or \"dataset\")");
  const auto sequences = load_split(cfg.dataset / split);
  std::vector<std::string> warnings;
  auto out = windows(sequences, T, cfg.window_rule, kDefaultIgnoreLabel, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  return out;
}

std::vector<std::size_t> dataset_motion_classes(const fs::path& dataset) {
  if (auto j = read_json_if_present(dataset / "synth_spec.json")) return j->get<SynthSpec>().motion_classes();
  return {};
}

ArmResult arm_result(const ConfusionMatrix& cm, const std::vector<std::size_t>& motion) {
  ArmResult r;
  r.report = make_report(cm);
  if (!motion.empty()) {
    r.motion_miou = mean_iu(cm, motion).value;
    r.motion_accuracy = pixel_accuracy(cm, motion);
  }
  return r;
}

nlohmann::json arm_json(const ArmResult& a) {
  nlohmann::json j = to_json(a.report);
  j["motion_miou"] = a.motion_miou ? nlohmann::json(*a.motion_miou) : nlohmann::json(nullptr);
  j["motion_accuracy"] = a.motion_accuracy ? nlohmann::json(*a.motion_accuracy) : nlohmann::json(nullptr);
  return j;
}

void write_metrics(const fs::path& out, const MetricsReport& report) {
  write_json(out / "metrics.json", to_json(report));
  write_text(out / "metrics.csv", to_csv(report));
}

}  // namespace

nlohmann::json AbResult::to_json() const {
  auto per_class = nlohmann::json::array();
  for (std::size_t c = 0; c < st.report.per_class_iu.size(); ++c) {
    const double a = baseline.report.per_class_iu[c], b = st.report.per_class_iu[c];
    per_class.push_back(a < 0.0 || b < 0.0 ? nlohmann::json(nullptr) : nlohmann::json(b - a));
  }
  nlohmann::json j{{"baseline_miou", baseline.report.mean_iu},
                   {"st_miou", st.report.mean_iu},
                   {"delta", delta()},
                   {"per_class_delta", per_class},
                   {"motion_classes", motion_classes},
                   {"baseline", arm_json(baseline)},
                   {"st", arm_json(st)},
                   {"bayes_bound", bayes_bound ? nlohmann::json(*bayes_bound) : nlohmann::json(nullptr)}};
  if (baseline.motion_miou && st.motion_miou) j["motion_miou_delta"] = *st.motion_miou - *baseline.motion_miou;
  return j;
}

BayesBound cmd_synth(const SynthSpec& spec, const fs::path& out) { return synth_generate(spec, out); }

TrainLog cmd_train(const RunConfig& cfg) {
  cfg.model.validate();
  cfg.optim.validate();
  const auto train_windows = load_windows(cfg, "train", cfg.model.window);
  std::vector<Window> val_windows;
  if (fs::is_directory(cfg.dataset / "val")) val_windows = load_windows(cfg, "val", cfg.model.window);

  Model model(cfg.model);
  TrainOptions options;
  options.validation = val_windows;
  options.checkpoint_dir = cfg.out / "checkpoints";
  options.threads = cfg.threads;
  const TrainLog log = train(model, train_windows, cfg.optim, options);

  fs::create_directories(cfg.out);
  write_json(cfg.out / "effective_config.json", to_json(cfg));
  write_text(cfg.out / "log.csv", log.to_csv());
  save_checkpoint(model, cfg.out / "checkpoint");
  if (!val_windows.empty()) {
    write_metrics(cfg.out, make_report(evaluate(model, val_windows, cfg.optim.supervision, cfg.threads)));
  }
  return log;
}

MetricsReport cmd_eval(const RunConfig& cfg, const std::optional<fs::path>& predictions) {
  if (predictions) {
    if (cfg.dataset.empty()) throw ConfigError("no dataset given (--dataset or \"dataset\")");
    const auto sequences = load_split(cfg.dataset / cfg.split);
    if (sequences.empty()) throw DataError("split " + cfg.split + " has no sequences");
    ConfusionMatrix cm(sequences.front().manifest.n_cl);
    std::size_t scored = 0;
    for (const auto& seq : sequences) {
      for (std::size_t i = 0; i < seq.frames.size(); ++i) {
        if (!seq.labels[i]) continue;
        const fs::path p = *predictions / seq.manifest.id / (std::to_string(seq.manifest.frames[i].n) + ".pgm");
        if (!fs::exists(p)) continue;
        cm.accumulate(read_label_pgm(p), *seq.labels[i]);
        ++scored;
      }
    }
    if (scored == 0) throw DataError("no prediction files found under " + predictions->string());
    const MetricsReport report = make_report(cm);
    write_metrics(cfg.out, report);
    return report;
  }
  if (cfg.checkpoint.empty()) throw ConfigError("eval needs --checkpoint or --predictions");
  const Model model = load_checkpoint(cfg.checkpoint);
  const auto test = load_windows(cfg, cfg.split, model.config().window);
  const MetricsReport report = make_report(evaluate(model, test, cfg.optim.supervision, cfg.threads));
  write_metrics(cfg.out, report);
  return report;
}

GradCheckReport cmd_gradcheck(const RunConfig& cfg) {
  cfg.model.validate();
  Model model(cfg.model);
  Window window;
  if (!cfg.dataset.empty()) {
    const auto ws = load_windows(cfg, cfg.split, cfg.model.window);
    if (ws.empty()) throw DataError("no windows available for the gradient check");
    window = ws.front();
  } else {
    // a random window is enough to exercise every backward path
    Rng rng(cfg.seed, "gradcheck/data");
    const std::size_t T = cfg.model.window, H = cfg.model.height, W = cfg.model.width;
    window.frames = Tensor({T, cfg.model.input_channels, H, W});
    for (double& v : window.frames.data()) v = rng.uniform();
    for (std::size_t t = 0; t < T; ++t) {
      LabelMap lm(H, W);
      for (int& v : lm.labels) v = static_cast<int>(rng.below(cfg.model.n_cl));
      window.labels.push_back(std::move(lm));
      window.labeled.push_back(true);
      window.frame_numbers.push_back(static_cast<long>(t));
    }
  }
  GradCheckReport report =
      grad_check(model, window, cfg.optim.supervision, cfg.gradcheck_epsilon, cfg.gradcheck_subsample, cfg.seed);
  const GradCheckReport ops = op_grad_checks(cfg.seed, cfg.gradcheck_epsilon, cfg.gradcheck_subsample);
  nlohmann::json j = report.to_json();
  j["ops"] = ops.to_json();
  write_json(cfg.out / "gradcheck.json", j);
  for (const auto& b : ops.blocks) report.blocks.push_back(b);
  return report;
}

std::size_t cmd_predict(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw ConfigError("predict needs --checkpoint");
  Model model = load_checkpoint(cfg.checkpoint);
  const auto ws = load_windows(cfg, cfg.split, model.config().window);
  std::size_t written = 0;
  for (const auto& w : ws) {
    const auto preds = predict(model.forward_window(w.frames));
    for (std::size_t t : supervised_frames(w, cfg.optim.supervision)) {
      const fs::path dir = cfg.out / w.sequence_id;
      fs::create_directories(dir);
      write_label_pgm(dir / (std::to_string(w.frame_numbers[t]) + ".pgm"), preds[t]);
      ++written;
    }
  }
  return written;
}

AbResult cmd_ab(const RunConfig& cfg) {
  RunConfig st_cfg = cfg;
  if (st_cfg.model.st_mode == StMode::off) st_cfg.model.st_mode = StMode::on_top;
  RunConfig base_cfg = st_cfg;
  base_cfg.model.st_mode = StMode::off;
  st_cfg.model.validate();
  base_cfg.model.validate();
  st_cfg.optim.validate();

  const auto train_windows = load_windows(cfg, "train", st_cfg.model.window);
  const auto test_windows = load_windows(cfg, cfg.split, st_cfg.model.window);
  if (test_windows.empty()) throw DataError("split " + cfg.split + " has no windows");

  AbResult result;
  result.motion_classes = dataset_motion_classes(cfg.dataset);
  if (auto j = read_json_if_present(cfg.dataset / "bayes_bound.json")) {
    result.bayes_bound = j->at("bayes_accuracy").get<double>();
  }

  auto run_arm = [&](const RunConfig& arm, const std::string& name) {
    Model model(arm.model);
    const TrainLog log = train(model, train_windows, arm.optim);
    const fs::path dir = cfg.out / name;
    write_json(dir / "effective_config.json", to_json(arm, false));
    write_text(dir / "log.csv", log.to_csv());
    save_checkpoint(model, dir / "checkpoint");
    const ConfusionMatrix cm = evaluate(model, test_windows, arm.optim.supervision, arm.threads);
    ArmResult r = arm_result(cm, result.motion_classes);
    write_json(dir / "metrics.json", arm_json(r));
    return r;
  };
  result.baseline = run_arm(base_cfg, "baseline");
  result.st = run_arm(st_cfg, "st");
  write_json(cfg.out / "ab.json", result.to_json());
  return result;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const SequenceError*>(&e)) return 2;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const DimensionError*>(&e)) return 3;
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  if (dynamic_cast<const CLI::ParseError*>(&e)) return 2;
  return 1;
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Spatio-temporal FCN: synthesize data, train, evaluate, check gradients, predict, compare"};
  app.require_subcommand(1);

  struct Flags {
    std::string config, out, dataset, checkpoint, split, predictions, st_mode, weight_mode, supervision;
    std::uint64_t seed = 0;
    std::size_t threads = 1, iterations = 0, subsample = 0;
    double lr = 0.0;
    long speed = 0;
  } f;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", f.seed, "Root seed (overrides the config)");
    sub->add_option("--threads", f.threads, "Worker cap; 1 is the deterministic reference")->check(CLI::PositiveNumber);
    sub->add_option("--out", f.out, "Output directory");
  };
  auto run_opts = [&](CLI::App* sub) {
    common(sub);
    sub->add_option("--dataset", f.dataset, "Dataset directory with train/val/test splits");
    sub->add_option("--checkpoint", f.checkpoint, "Checkpoint directory");
    sub->add_option("--split", f.split, "Split to evaluate (default test)");
    sub->add_option("--iterations", f.iterations, "Training iterations");
    sub->add_option("--lr", f.lr, "Learning rate");
    sub->add_option("--st-mode", f.st_mode, "off | on_top | fusion");
    sub->add_option("--weight-mode", f.weight_mode, "per_location | shared");
    sub->add_option("--supervision", f.supervision, "last_frame | all_labeled");
  };

  auto* synth = app.add_subcommand("synth", "Generate the synthetic motion dataset");
  common(synth);
  synth->add_option("--speed", f.speed, "Override the motion speed (px/frame)");
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  run_opts(train_cmd);
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint or a directory of predicted label maps");
  run_opts(eval_cmd);
  eval_cmd->add_option("--predictions", f.predictions, "Directory of <sequence>/<frame_n>.pgm predictions");
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  run_opts(grad_cmd);
  grad_cmd->add_option("--subsample", f.subsample, "Coordinates sampled per parameter block");
  auto* pred_cmd = app.add_subcommand("predict", "Write predicted label maps");
  run_opts(pred_cmd);
  auto* ab_cmd = app.add_subcommand("ab", "Train and compare the model with and without the ST module");
  run_opts(ab_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    auto* sub = app.get_subcommands().front();
    auto given = [&](const char* name) {
      const CLI::Option* opt = sub->get_option_no_throw(name);
      return opt != nullptr && opt->count() > 0;
    };

    if (sub == synth) {
      SynthSpec spec;
      if (!f.config.empty()) {
        std::ifstream is(f.config);
        nlohmann::json j;
        try {
          j = nlohmann::json::parse(is);
        } catch (const nlohmann::json::exception& e) {
          throw ConfigError("config " + f.config + ": " + e.what());
        }
        spec = j.get<SynthSpec>();
      }
      if (given("--seed")) spec.seed = f.seed;
      if (given("--speed")) spec.speed = f.speed;
      const fs::path out = given("--out") ? fs::path(f.out) : fs::path("data");
      const BayesBound b = cmd_synth(spec, out);
      std::cout << nlohmann::json{{"out", out.string()}, {"bayes_accuracy", b.accuracy}, {"motion_pixels", b.motion_pixels}}
                << '\n';
      return 0;
    }

    RunConfig cfg = f.config.empty() ? RunConfig{} : load_run_config(f.config);
    if (given("--seed")) cfg.seed = f.seed;
    if (given("--threads")) cfg.threads = f.threads;
    if (given("--out")) cfg.out = f.out;
    if (given("--dataset")) cfg.dataset = f.dataset;
    if (given("--checkpoint")) cfg.checkpoint = f.checkpoint;
    if (given("--split")) cfg.split = f.split;
    if (given("--iterations")) cfg.optim.iterations = f.iterations;
    if (given("--lr")) cfg.optim.lr = f.lr;
    if (given("--st-mode")) cfg.model.st_mode = st_mode_from_string(f.st_mode);
    if (given("--weight-mode")) cfg.model.weight_mode = weight_mode_from_string(f.weight_mode);
    if (given("--supervision")) cfg.optim.supervision = supervision_from_string(f.supervision);
    if (given("--subsample")) cfg.gradcheck_subsample = f.subsample;
    cfg.apply_seed();

    if (sub == train_cmd) {
      const TrainLog log = cmd_train(cfg);
      std::cout << nlohmann::json{{"iterations", log.rows.size()},
                                  {"final_loss", log.rows.empty() ? 0.0 : log.rows.back().loss},
                                  {"checkpoint", (cfg.out / "checkpoint").string()}}
                << '\n';
    } else if (sub == eval_cmd) {
      const auto preds = given("--predictions") ? std::optional<fs::path>(f.predictions) : std::nullopt;
      std::cout << to_json(cmd_eval(cfg, preds)).dump() << '\n';
    } else if (sub == grad_cmd) {
      const GradCheckReport r = cmd_gradcheck(cfg);
      std::cout << nlohmann::json{{"max_rel_error", r.max_rel_error()}, {"blocks", r.blocks.size()}} << '\n';
    } else if (sub == pred_cmd) {
      std::cout << nlohmann::json{{"written", cmd_predict(cfg)}, {"out", cfg.out.string()}} << '\n';
    } else if (sub == ab_cmd) {
      const AbResult r = cmd_ab(cfg);
      std::cout << nlohmann::json{{"baseline_miou", r.baseline.report.mean_iu},
                                  {"st_miou", r.st.report.mean_iu},
                                  {"delta", r.delta()}}
                << '\n';
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
}

}  // namespace stfcn
