#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "semiseg/run.hpp"

namespace {

semiseg::run::json resolve_config(const std::string& config_path,
                                  const std::vector<std::string>& sets) {
  semiseg::run::json file;
  if (!config_path.empty()) file = semiseg::config::load_file(config_path);
  return semiseg::config::resolve(file, sets);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semi-supervised segmentation trainer (dual-branch consistency + "
               "adversarial strong augmentation)"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "JSON config file (defaults apply otherwise)");
  app.add_option("--set", sets, "override config values, e.g. --set trainer.epochs=10");

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset directory");
  std::string gen_out = "data/train";
  gen->add_option("--out", gen_out, "output dataset directory");

  auto* train = app.add_subcommand("train", "train a model");
  std::string train_out = "runs/run";
  bool resume = false;
  int stop_after = -1;
  train->add_option("--out", train_out, "run directory");
  train->add_flag("--resume", resume, "continue from the run directory's last checkpoint");
  train->add_option("--stop-after", stop_after,
                    "stop (checkpointing) after this many epochs this session");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a labelled dataset");
  std::string ckpt, eval_data, eval_out = "eval_out";
  double tol = 13.0;
  int eval_classes = 2;
  eval->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  eval->add_option("--data", eval_data, "labelled dataset directory")->required();
  eval->add_option("--tol", tol, "NSD tolerance in pixels");
  eval->add_option("--num-classes", eval_classes, "number of classes in the masks");
  eval->add_option("--out", eval_out, "output directory for the report");

  auto* ablate = app.add_subcommand("ablate", "run an ablation preset");
  semiseg::run::AblateOptions ab;
  std::string ablate_out = "runs/ablate";
  ablate->add_option("--preset", ab.preset, "threshold | epsilon | aug | attack-steps")
      ->required();
  ablate->add_flag("--dry-run", ab.dry_run, "print the planned run matrix and exit");
  ablate->add_option("--parallel", ab.parallel, "number of concurrent runs");
  ablate->add_option("--seeds", ab.seeds, "seeds per setting");
  ablate->add_option("--only", ab.only, "restrict to these setting labels");
  ablate->add_option("--out", ablate_out, "sweep output directory");

  auto* report = app.add_subcommand("report", "render plots and a summary for a run");
  std::string report_dir;
  report->add_option("--run", report_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      semiseg::run::cmd_gen_data(resolve_config(config_path, sets), gen_out);
    } else if (train->parsed()) {
      const auto outcome = semiseg::run::cmd_train(resolve_config(config_path, sets), train_out,
                                                   resume, stop_after);
      std::cout << "run dir: " << outcome.run_dir.string() << "\n";
      if (outcome.fit.best_epoch >= 0)
        std::cout << "best mean Dice " << outcome.fit.best_dice << " at epoch "
                  << outcome.fit.best_epoch << "\n";
    } else if (eval->parsed()) {
      semiseg::run::cmd_eval(ckpt, eval_data, tol, eval_out, eval_classes);
    } else if (ablate->parsed()) {
      semiseg::run::cmd_ablate(resolve_config(config_path, sets), ab, ablate_out);
    } else if (report->parsed()) {
      semiseg::run::cmd_report(report_dir);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
