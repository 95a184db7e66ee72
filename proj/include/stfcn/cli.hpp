// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "stfcn/data.hpp"
#include "stfcn/network.hpp"
#include "stfcn/training.hpp"

namespace stfcn {

/// Everything a subcommand needs. Loaded from a JSON file and then overridden
/// by command-line flags (flags win). The root seed replaces model.seed and
/// optim.seed so that one number controls all randomness.
struct RunConfig {
  std::filesystem::path dataset;
  std::filesystem::path checkpoint;
  std::filesystem::path out = "out";
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string split = "test";
  WindowRule window_rule = WindowRule::labeled_only;
  ModelConfig model;
  OptimConfig optim;
  double gradcheck_epsilon = 1e-5;
  std::size_t gradcheck_subsample = 200;

  /// Propagates the root seed into model and optimizer.
  void apply_seed();
};

/// Keys: dataset, checkpoint, out, seed, threads, split, window_rule, model,
/// optim, gradcheck {epsilon, subsample}. Unknown keys are a ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
/// The effective configuration. `out` is left out when include_out is false so
/// that configs of runs writing to different directories can be diffed.
nlohmann::json to_json(const RunConfig& c, bool include_out = true);
RunConfig load_run_config(const std::filesystem::path& path);

struct ArmResult {
  MetricsReport report;
  std::optional<double> motion_miou;
  std::optional<double> motion_accuracy;
};

struct AbResult {
  ArmResult baseline;
  ArmResult st;
  std::optional<double> bayes_bound;
  std::vector<std::size_t> motion_classes;

  double delta() const { return st.report.mean_iu - baseline.report.mean_iu; }
  nlohmann::json to_json() const;
};

// Subcommands. Each writes into cfg.out and returns normally or throws a
// stfcn::Error subclass.
BayesBound cmd_synth(const SynthSpec& spec, const std::filesystem::path& out);
TrainLog cmd_train(const RunConfig& cfg);
MetricsReport cmd_eval(const RunConfig& cfg, const std::optional<std::filesystem::path>& predictions = std::nullopt);
GradCheckReport cmd_gradcheck(const RunConfig& cfg);
std::size_t cmd_predict(const RunConfig& cfg);
/// Trains and evaluates cfg.model with the ST module (cfg.model.st_mode, or
/// on_top when that is off) and without it, same seed and data order.
AbResult cmd_ab(const RunConfig& cfg);

/// Process exit code for an exception escaping a subcommand: 2 configuration,
/// 3 data, 4 numeric, 1 anything else.
int exit_code_for(const std::exception& e);

/// Full command-line entry point (argv[0] is the program name).
int run_cli(int argc, const char* const* argv);

}  // namespace stfcn
