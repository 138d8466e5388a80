#include "semiseg/run.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "semiseg/svg.hpp"

namespace semiseg::run {

fs::path resolve_out(const fs::path& p) {
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("SEMISEG_OUT_ROOT")) return fs::path(root) / p;
  return p;
}

namespace {

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out.good()) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

json eval_report_to_json(const EvalReport& r) {
  json per = json::array();
  for (size_t i = 0; i < r.per_image_dice.size(); ++i)
    per.push_back({{"dice", r.per_image_dice[i]}, {"nsd", r.per_image_nsd[i]}});
  return json{{"mean_dice", r.mean_dice},
              {"mean_nsd", r.mean_nsd},
              {"nsd_tolerance", r.nsd_tolerance},
              {"n_images", r.per_image_dice.size()},
              {"n_empty_gt", r.n_empty_gt},
              {"n_empty_pred", r.n_empty_pred},
              {"per_image", per}};
}

std::vector<LabelledItem<float>> load_labelled_dir(const fs::path& dir, int num_classes) {
  auto items = load_directory<float>(dir, num_classes);
  std::vector<LabelledItem<float>> out;
  out.reserve(items.size());
  for (auto& [img, mask] : items) {
    if (!mask)
      throw std::runtime_error("dataset " + dir.string() +
                               ": every item needs a mask for evaluation");
    out.emplace_back(std::move(img), std::move(*mask));
  }
  return out;
}

}  // namespace

void ensure_datasets(const json& resolved) {
  const SceneConfig scene = config::to_scene_config(resolved);
  const uint64_t seed = resolved.at("seed").get<uint64_t>();
  const fs::path train_dir = resolve_out(resolved.at("data").at("dir").get<std::string>());
  const fs::path eval_dir = resolve_out(resolved.at("data").at("eval_dir").get<std::string>());
  if (!fs::is_directory(train_dir)) {
    const int n = resolved.at("data").at("gen").at("count").get<int>();
    save_directory(train_dir, generate_pool<float>(n, seed, scene));
  }
  if (!fs::is_directory(eval_dir)) {
    const int n = resolved.at("data").at("gen").at("eval_count").get<int>();
    save_directory(eval_dir, generate_pool<float>(n, derive_seed(seed, 0xEA1), scene));
  }
}

void cmd_gen_data(const json& resolved, const fs::path& out_dir_in) {
  const fs::path out_dir = resolve_out(out_dir_in);
  const SceneConfig scene = config::to_scene_config(resolved);
  const int n = resolved.at("data").at("gen").at("count").get<int>();
  const uint64_t seed = resolved.at("seed").get<uint64_t>();
  const auto pool = generate_pool<float>(n, seed, scene);  // throws on n <= 0
  save_directory(out_dir, pool);
  write_json_file(out_dir / "gen_config.json", resolved);
}

TrainOutcome cmd_train(const json& resolved, const fs::path& run_dir_in, bool resume,
                       int stop_after_epochs) {
  const fs::path run_dir = resolve_out(run_dir_in);
  const TrainConfig tc = config::to_train_config(resolved);
  const int num_classes = resolved.at("data").at("num_classes").get<int>();
  const double ratio = resolved.at("data").at("ratio").get<double>();
  const fs::path data_dir = resolve_out(resolved.at("data").at("dir").get<std::string>());
  const fs::path eval_dir = resolve_out(resolved.at("data").at("eval_dir").get<std::string>());
  if (!fs::is_directory(data_dir))
    throw std::runtime_error("train: dataset directory does not exist: " + data_dir.string() +
                             " (run gen-data first)");
  if (!fs::is_directory(eval_dir))
    throw std::runtime_error("train: evaluation directory does not exist: " +
                             eval_dir.string());

  auto items = load_directory<float>(data_dir, num_classes);
  std::vector<LabelledItem<float>> pool;
  std::vector<Tensor<float>> pre_unlabelled;
  for (auto& [img, mask] : items) {
    if (mask)
      pool.emplace_back(std::move(img), std::move(*mask));
    else
      pre_unlabelled.push_back(std::move(img));
  }
  if (pool.empty()) throw std::runtime_error("train: no labelled items in " + data_dir.string());
  DatasetSplit<float> split = make_splits(pool, ratio, derive_seed(tc.seed, 2));
  for (auto& img : pre_unlabelled) split.unlabelled.push_back(std::move(img));
  const auto eval_set = load_labelled_dir(eval_dir, num_classes);

  fs::create_directories(run_dir);
  write_json_file(run_dir / "config.json", resolved);

  const auto t0 = std::chrono::steady_clock::now();
  TrainOutcome outcome{fit(tc, split, eval_set, run_dir, resume, stop_after_epochs), run_dir};
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const bool complete = outcome.fit.epochs_run >= tc.epochs;
  if (complete) {
    json metrics = eval_report_to_json(outcome.fit.best_report);
    metrics["best_epoch"] = outcome.fit.best_epoch;
    write_json_file(run_dir / "metrics.json", metrics);
  }
  write_json_file(run_dir / "manifest.json",
                  json{{"command", "train"},
                       {"mode", train_mode_name(tc.mode)},
                       {"attack",
                        {{"method", attack_method_name(tc.attack.method)},
                         {"epsilon", tc.attack.epsilon},
                         {"steps", tc.attack.steps}}},
                       {"epochs", tc.epochs},
                       {"epochs_run", outcome.fit.epochs_run},
                       {"session_complete", complete},
                       {"seed", tc.seed},
                       {"batch_size", tc.batch_size},
                       {"n_labelled", split.labelled.size()},
                       {"n_unlabelled", split.unlabelled.size()},
                       {"n_eval", eval_set.size()},
                       {"wall_time_sec", wall}});
  return outcome;
}

void cmd_eval(const fs::path& checkpoint, const fs::path& data_dir, double tol,
              const fs::path& out_dir_in, int num_classes) {
  const fs::path out_dir = resolve_out(out_dir_in);
  const UNet<float> net = load_model<float>(resolve_out(checkpoint));
  const auto eval_set = load_labelled_dir(resolve_out(data_dir), num_classes);
  const EvalReport report = evaluate(net, eval_set, tol);

  fs::create_directories(out_dir);
  write_json_file(out_dir / "eval_report.json", eval_report_to_json(report));
  std::ofstream csv(out_dir / "per_image.csv");
  csv << "index,dice,nsd\n";
  for (size_t i = 0; i < report.per_image_dice.size(); ++i)
    csv << i << ',' << report.per_image_dice[i] << ',' << report.per_image_nsd[i] << '\n';
  std::cout << "mean_dice=" << report.mean_dice << " mean_nsd=" << report.mean_nsd << "\n";
}

// ---------------------------------------------------------------------------
// Ablation sweeps
// ---------------------------------------------------------------------------

namespace {

struct Setting {
  std::string label;
  double value;
  std::function<void(json&)> apply;
};

std::vector<Setting> preset_settings(const std::string& preset) {
  std::vector<Setting> out;
  auto set = [](json& c, const std::string& ptr, json v) {
    c[json::json_pointer(ptr)] = std::move(v);
  };
  if (preset == "threshold") {
    for (double t : {0.5, 0.6, 0.7, 0.8, 0.9, 0.99}) {
      char label[16];
      std::snprintf(label, sizeof(label), "t%.2f", t);
      out.push_back({label, t, [t, set](json& c) {
                       set(c, "/pseudo/threshold", t);
                       set(c, "/trainer/mode", "semi");
                     }});
    }
  } else if (preset == "epsilon") {
    for (int i = 0; i <= 8; ++i) {
      const double eps = 0.02 * i;
      char label[16];
      std::snprintf(label, sizeof(label), "eps%.2f", eps);
      out.push_back({label, eps, [eps, set](json& c) {
                       set(c, "/attack/epsilon", eps);
                       set(c, "/trainer/mode", "semi");
                     }});
    }
  } else if (preset == "aug") {
    out.push_back({"full", 0, [set](json& c) { set(c, "/trainer/mode", "semi"); }});
    out.push_back({"no-adversarial", 1, [set](json& c) {
                     set(c, "/trainer/mode", "semi");
                     set(c, "/attack/method", "none");
                   }});
    out.push_back({"no-adversarial-no-weak", 2, [set](json& c) {
                     set(c, "/trainer/mode", "semi");
                     set(c, "/attack/method", "none");
                     set(c, "/augment/weak/enabled", false);
                   }});
    out.push_back({"no-adversarial-no-strong", 3, [set](json& c) {
                     set(c, "/trainer/mode", "semi");
                     set(c, "/attack/method", "none");
                     set(c, "/augment/strong/enabled", false);
                   }});
  } else if (preset == "attack-steps") {
    for (int k : {1, 25, 50}) {
      out.push_back({"K" + std::to_string(k), static_cast<double>(k), [k, set](json& c) {
                       set(c, "/attack/method", "ifgsm");
                       set(c, "/attack/steps", k);
                       set(c, "/trainer/mode", "semi");
                     }});
    }
  } else {
    throw std::runtime_error("unknown ablation preset: " + preset +
                             " (expected threshold|epsilon|aug|attack-steps)");
  }
  return out;
}

}  // namespace

std::vector<AblateRun> cmd_ablate(const json& base_resolved, const AblateOptions& opts,
                                  const fs::path& out_dir_in) {
  const fs::path out_dir = resolve_out(out_dir_in);
  std::vector<Setting> settings = preset_settings(opts.preset);
  if (!opts.only.empty()) {
    std::vector<Setting> filtered;
    for (auto& s : settings)
      if (std::find(opts.only.begin(), opts.only.end(), s.label) != opts.only.end())
        filtered.push_back(s);
    settings = std::move(filtered);
  }
  const uint64_t base_seed = base_resolved.at("seed").get<uint64_t>();

  std::vector<AblateRun> runs;
  std::vector<json> configs;
  for (const auto& s : settings)
    for (int k = 0; k < std::max(1, opts.seeds); ++k) {
      json cfg = base_resolved;
      s.apply(cfg);
      cfg["seed"] = base_seed + static_cast<uint64_t>(k);
      AblateRun r;
      r.label = s.label;
      r.sweep_value = s.value;
      r.seed = base_seed + static_cast<uint64_t>(k);
      r.run_dir = out_dir / opts.preset / (s.label + "_seed" + std::to_string(r.seed));
      runs.push_back(r);
      configs.push_back(std::move(cfg));
    }

  if (opts.dry_run) {
    std::cout << "ablate preset '" << opts.preset << "': " << runs.size()
              << " planned runs\n";
    for (const auto& r : runs)
      std::cout << "  " << r.label << " seed=" << r.seed << " -> " << r.run_dir.string()
                << "\n";
    return runs;
  }

  ensure_datasets(base_resolved);
  fs::create_directories(out_dir / opts.preset);

  std::mutex io_mutex;
  std::function<void(size_t)> execute = [&](size_t i) {
    const TrainOutcome outcome = cmd_train(configs[i], runs[i].run_dir);
    runs[i].mean_dice = outcome.fit.best_report.mean_dice;
    runs[i].mean_nsd = outcome.fit.best_report.mean_nsd;
    std::lock_guard<std::mutex> lock(io_mutex);
    std::cout << "[ablate] " << runs[i].label << " seed=" << runs[i].seed
              << " mean_dice=" << runs[i].mean_dice << "\n";
  };

  if (opts.parallel <= 1) {
    for (size_t i = 0; i < runs.size(); ++i) execute(i);
  } else {
    std::vector<std::thread> workers;
    std::atomic<size_t> next{0};
    std::string error;
    for (int t = 0; t < opts.parallel; ++t)
      workers.emplace_back([&] {
        for (size_t i = next++; i < runs.size(); i = next++) {
          try {
            execute(i);
          } catch (const std::exception& e) {
            std::lock_guard<std::mutex> lock(io_mutex);
            if (error.empty()) error = e.what();
          }
        }
      });
    for (auto& w : workers) w.join();
    if (!error.empty()) throw std::runtime_error("ablate: " + error);
  }

  // summary table and sweep plot, aggregated over seeds
  std::ofstream csv(out_dir / (opts.preset + "_summary.csv"));
  csv << "label,value,seed,mean_dice,mean_nsd\n";
  for (const auto& r : runs)
    csv << r.label << ',' << r.sweep_value << ',' << r.seed << ',' << r.mean_dice << ','
        << r.mean_nsd << '\n';

  PlotSeries dice_series{"mean Dice", {}, {}};
  for (const auto& s : settings) {
    double acc = 0;
    int n = 0;
    for (const auto& r : runs)
      if (r.label == s.label) {
        acc += r.mean_dice;
        ++n;
      }
    if (n > 0) {
      dice_series.x.push_back(s.value);
      dice_series.y.push_back(acc / n);
    }
  }
  write_line_plot_svg(out_dir / (opts.preset + "_dice.svg"),
                      "ablation: " + opts.preset, opts.preset, "mean Dice", {dice_series});
  return runs;
}

// ---------------------------------------------------------------------------
// Run report
// ---------------------------------------------------------------------------

namespace {

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in.good()) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(cell);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

void cmd_report(const fs::path& run_dir_in) {
  const fs::path run_dir = resolve_out(run_dir_in);
  const json cfg = config::load_file(run_dir / "config.json");

  const auto train_rows = read_csv(run_dir / "train_log.csv");
  PlotSeries total{"total", {}, {}}, sup{"supervised", {}, {}}, unsup{"weighted unsup", {}, {}};
  for (size_t i = 1; i < train_rows.size(); ++i) {
    const auto& row = train_rows[i];
    const double step = static_cast<double>(i - 1);
    total.x.push_back(step);
    total.y.push_back(std::stod(row[5]));
    sup.x.push_back(step);
    sup.y.push_back(std::stod(row[2]));
    unsup.x.push_back(step);
    unsup.y.push_back(std::stod(row[3]) * std::stod(row[4]));
  }
  write_line_plot_svg(run_dir / "loss_curve.svg", "training loss", "step", "loss",
                      {total, sup, unsup});

  PlotSeries dice{"mean Dice", {}, {}}, nsd_series{"mean NSD", {}, {}};
  const auto eval_rows = read_csv(run_dir / "eval_log.csv");
  for (size_t i = 1; i < eval_rows.size(); ++i) {
    dice.x.push_back(std::stod(eval_rows[i][0]));
    dice.y.push_back(std::stod(eval_rows[i][1]));
    nsd_series.x.push_back(std::stod(eval_rows[i][0]));
    nsd_series.y.push_back(std::stod(eval_rows[i][2]));
  }
  write_line_plot_svg(run_dir / "dice_curve.svg", "evaluation", "epoch", "score",
                      {dice, nsd_series});

  std::ofstream md(run_dir / "report.md");
  md << "# Run report\n\n";
  md << "- mode: " << cfg.at("trainer").at("mode").get<std::string>() << "\n";
  md << "- seed: " << cfg.at("seed") << "\n";
  md << "- epochs: " << cfg.at("trainer").at("epochs") << "\n";
  md << "- attack: " << cfg.at("attack").at("method").get<std::string>()
     << " (epsilon=" << cfg.at("attack").at("epsilon") << ", steps=" << cfg.at("attack").at("steps")
     << ")\n";
  if (fs::exists(run_dir / "metrics.json")) {
    const json metrics = config::load_file(run_dir / "metrics.json");
    md << "- best mean Dice: " << metrics.at("mean_dice") << " (epoch "
       << metrics.at("best_epoch") << ")\n";
    md << "- best mean NSD: " << metrics.at("mean_nsd") << "\n";
  }
  md << "\n![loss](loss_curve.svg)\n\n![eval](dice_curve.svg)\n";
  std::cout << "report written to " << (run_dir / "report.md").string() << "\n";
}

}  // namespace semiseg::run
