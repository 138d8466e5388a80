#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "semiseg/config.hpp"
#include "semiseg/trainer.hpp"

// Command implementations behind the CLI, callable in-process by tests.
namespace semiseg::run {

using json = nlohmann::json;
namespace fs = std::filesystem;

// Relative paths are rooted at $SEMISEG_OUT_ROOT when it is set.
fs::path resolve_out(const fs::path& p);

void cmd_gen_data(const json& resolved, const fs::path& out_dir);

struct TrainOutcome {
  FitResult fit;
  fs::path run_dir;
};

TrainOutcome cmd_train(const json& resolved, const fs::path& run_dir, bool resume = false,
                       int stop_after_epochs = -1);

void cmd_eval(const fs::path& checkpoint, const fs::path& data_dir, double tol,
              const fs::path& out_dir, int num_classes);

struct AblateOptions {
  std::string preset;  // threshold | epsilon | aug | attack-steps
  bool dry_run = false;
  int parallel = 1;
  int seeds = 1;
  // restrict to these setting labels (empty = all); used by the acceptance
  // suite to run the subset of a sweep it asserts on
  std::vector<std::string> only;
};

struct AblateRun {
  std::string label;
  double sweep_value = 0.0;
  uint64_t seed = 0;
  double mean_dice = 0.0;
  double mean_nsd = 0.0;
  fs::path run_dir;
};

std::vector<AblateRun> cmd_ablate(const json& base_resolved, const AblateOptions& opts,
                                  const fs::path& out_dir);

void cmd_report(const fs::path& run_dir);

// Generates the train/eval dataset directories named in the config when they
// do not exist yet (train scenes from `seed`, eval scenes from a derived
// seed so the pools are disjoint).
void ensure_datasets(const json& resolved);

}  // namespace semiseg::run
