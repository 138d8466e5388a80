#include <doctest.h>

#include <filesystem>

#include "semiseg/trainer.hpp"
#include "test_util.hpp"

using namespace semiseg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("semiseg_train_" + std::to_string(Rng(std::random_device{}())()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// small but real setup: 16x16 scenes, depth-2 model
TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.eval_every = 1;
  cfg.checkpoint_every = 1;
  cfg.model.depth = 2;
  cfg.model.base_channels = 6;
  cfg.model.norm_groups = 2;
  cfg.attack.steps = 2;
  cfg.loss.ramp_epochs = 2;
  cfg.seed = 3;
  return cfg;
}

DatasetSplit<float> tiny_split(int pool_size = 8, double ratio = 0.5) {
  SceneConfig sc;
  sc.height = sc.width = 16;
  const auto pool = generate_pool<float>(pool_size, 17, sc);
  return make_splits(pool, ratio, 5);
}

std::vector<LabelledItem<float>> tiny_eval_set(int n = 3) {
  SceneConfig sc;
  sc.height = sc.width = 16;
  return generate_pool<float>(n, 900, sc);
}

double rel_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double num = 0, den = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    num += (static_cast<double>(a[i]) - b[i]) * (static_cast<double>(a[i]) - b[i]);
    den += static_cast<double>(b[i]) * b[i];
  }
  return std::sqrt(num) / std::max(1e-30, std::sqrt(den));
}

}  // namespace

TEST_CASE("lr_schedule: paper policy values") {
  TrainConfig cfg;
  cfg.epochs = 1000;
  cfg.lr_ini = 1e-2;
  cfg.eta = 0.7;
  CHECK(lr_schedule(0, cfg) == doctest::Approx(7e-3));
  CHECK(lr_schedule(500, cfg) == doctest::Approx(3.5e-3));
  CHECK(lr_schedule(1000, cfg) == doctest::Approx(0.0));
  CHECK_THROWS(lr_schedule(-1, cfg));
  CHECK_THROWS(lr_schedule(1001, cfg));
}

TEST_CASE("train_step: supervised-only mode skips the unlabelled pathway") {
  auto cfg = tiny_config();
  cfg.mode = TrainMode::supervised_only;
  TrainState<float> state(cfg);
  const auto split = tiny_split();
  BatchSampler<float> sampler(&split, false);
  auto batch = sampler.next(cfg.batch_size, state.rng);
  const auto stats = train_step(state, batch, cfg);
  CHECK(stats.report.loss_u == 0.0);
  CHECK(stats.report.n_confident_pixels == 0);
  CHECK(stats.attack_items == 0);
  CHECK(stats.report.total == stats.report.loss_s);
}

TEST_CASE("train_step: semi mode reports balanced batches and updates parameters") {
  auto cfg = tiny_config();
  TrainState<float> state(cfg);
  const auto params_before = state.net.params();
  const auto split = tiny_split();
  BatchSampler<float> sampler(&split, true);
  auto batch = sampler.next(cfg.batch_size, state.rng);
  REQUIRE(batch.labelled_items.size() == batch.unlabelled_items.size());
  const auto stats = train_step(state, batch, cfg);
  CHECK(std::isfinite(stats.report.total));
  CHECK(state.net.params() != params_before);
  CHECK(stats.report.total ==
        doctest::Approx(stats.report.loss_s + stats.report.weight * stats.report.loss_u)
            .epsilon(1e-9));
}

TEST_CASE("train_step: identical state and batch give identical updates") {
  auto cfg = tiny_config();
  const auto split = tiny_split();
  TrainState<float> a(cfg), b(cfg);
  BatchSampler<float> sa(&split, true), sb(&split, true);
  auto batch_a = sa.next(cfg.batch_size, a.rng);
  auto batch_b = sb.next(cfg.batch_size, b.rng);
  train_step(a, batch_a, cfg);
  train_step(b, batch_b, cfg);
  CHECK(a.net.params() == b.net.params());
  CHECK(a.velocity == b.velocity);
}

TEST_CASE("epoch-0 semi update direction matches supervised-only within 1%") {
  auto cfg = tiny_config();
  cfg.loss.ramp_epochs = 30;  // w(0) = w_max * e^-5
  auto sup_cfg = cfg;
  sup_cfg.mode = TrainMode::supervised_only;

  const auto split = tiny_split();
  TrainState<float> semi_state(cfg), sup_state(sup_cfg);
  REQUIRE(semi_state.net.params() == sup_state.net.params());
  const auto params0 = semi_state.net.params();

  // identical labelled sub-batch: labelled indices are drawn before any
  // unlabelled-pathway randomness
  BatchSampler<float> semi_sampler(&split, true), sup_sampler(&split, false);
  auto semi_batch = semi_sampler.next(cfg.batch_size, semi_state.rng);
  auto sup_batch = sup_sampler.next(sup_cfg.batch_size, sup_state.rng);
  for (size_t i = 0; i < semi_batch.labelled_items.size(); ++i)
    REQUIRE(semi_batch.labelled_items[i].first.v == sup_batch.labelled_items[i].first.v);

  train_step(semi_state, semi_batch, cfg);
  train_step(sup_state, sup_batch, sup_cfg);

  std::vector<float> du(params0.size()), ds(params0.size());
  for (size_t i = 0; i < params0.size(); ++i) {
    du[i] = semi_state.net.params()[i] - params0[i];
    ds[i] = sup_state.net.params()[i] - params0[i];
  }
  CHECK(rel_diff(du, ds) < 0.01);
}

TEST_CASE("checkpoint round trip: bit-identical state and continuation") {
  TempDir tmp;
  auto cfg = tiny_config();
  const auto split = tiny_split();

  TrainState<float> state(cfg);
  BatchSampler<float> sampler(&split, true);
  sampler.start_epoch(state.rng);
  auto b1 = sampler.next(cfg.batch_size, state.rng);
  train_step(state, b1, cfg);
  state.epoch = 1;

  save_checkpoint(tmp.path / "ck.bin", state, cfg);
  auto restored = load_checkpoint<float>(tmp.path / "ck.bin", cfg);
  CHECK(restored.net.params() == state.net.params());
  CHECK(restored.velocity == state.velocity);
  CHECK(restored.rng == state.rng);
  CHECK(restored.epoch == state.epoch);

  // continue both from the epoch boundary: identical draws, identical update
  auto advance = [&](TrainState<float>& s) {
    BatchSampler<float> smp(&split, true);
    smp.start_epoch(s.rng);
    auto b = smp.next(cfg.batch_size, s.rng);
    return train_step(s, b, cfg);
  };
  const auto r1 = advance(state);
  const auto r2 = advance(restored);
  CHECK(state.net.params() == restored.net.params());
  CHECK(r1.report.total == r2.report.total);
  CHECK(r1.report.n_confident_pixels == r2.report.n_confident_pixels);

  // loading against a different model config is rejected
  auto other = cfg;
  other.model.base_channels = 8;
  CHECK_THROWS(load_checkpoint<float>(tmp.path / "ck.bin", other));
}

TEST_CASE("fit: writes logs, reproducible final losses, checkpoint resume") {
  TempDir run_a, run_b, run_c;
  auto cfg = tiny_config();
  const auto split = tiny_split();
  const auto eval_set = tiny_eval_set();

  const auto res_a = fit(cfg, split, eval_set, run_a.path);
  const auto res_b = fit(cfg, split, eval_set, run_b.path);
  CHECK(res_a.final_losses.total == res_b.final_losses.total);
  CHECK(res_a.best_dice == res_b.best_dice);
  CHECK(fs::exists(run_a.path / "train_log.csv"));
  CHECK(fs::exists(run_a.path / "eval_log.csv"));
  CHECK(fs::exists(run_a.path / "last.ckpt"));
  CHECK(fs::exists(run_a.path / "best.ckpt"));

  // interrupted + resumed run reaches identical final losses
  const auto res_c1 = fit(cfg, split, eval_set, run_c.path, false, 1);
  CHECK(res_c1.epochs_run == 1);
  const auto res_c2 = fit(cfg, split, eval_set, run_c.path, true);
  CHECK(res_c2.epochs_run == cfg.epochs);
  CHECK(res_c2.final_losses.total == res_a.final_losses.total);
  CHECK(res_c2.best_dice == res_a.best_dice);
}

TEST_CASE("fit: supervised-only mode trains and logs zero unsupervised loss") {
  TempDir run;
  auto cfg = tiny_config();
  cfg.mode = TrainMode::supervised_only;
  const auto split = tiny_split();
  const auto res = fit(cfg, split, tiny_eval_set(), run.path);
  CHECK(res.final_losses.loss_u == 0.0);
  CHECK(res.best_dice >= 0.0);

  std::ifstream log(run.path / "train_log.csv");
  std::string line;
  std::getline(log, line);  // header
  int rows = 0;
  while (std::getline(log, line)) {
    ++rows;
    // loss_u is the 4th column
    size_t pos = 0;
    for (int c = 0; c < 3; ++c) pos = line.find(',', pos) + 1;
    CHECK(line.substr(pos, line.find(',', pos) - pos) == "0");
  }
  CHECK(rows > 0);
}

TEST_CASE("best checkpoint stores the best-Dice snapshot for later evaluation") {
  TempDir run;
  auto cfg = tiny_config();
  cfg.epochs = 3;
  const auto split = tiny_split();
  const auto eval_set = tiny_eval_set();
  const auto res = fit(cfg, split, eval_set, run.path);
  const auto net = load_model<float>(run.path / "best.ckpt");
  const auto report = evaluate(net, eval_set, cfg.nsd_tolerance);
  CHECK(report.mean_dice == doctest::Approx(res.best_report.mean_dice).epsilon(1e-12));
}

TEST_CASE("train mode names round trip") {
  CHECK(train_mode_from_name("semi") == TrainMode::semi);
  CHECK(train_mode_from_name("supervised-only") == TrainMode::supervised_only);
  CHECK(train_mode_name(TrainMode::semi) == "semi");
  CHECK_THROWS(train_mode_from_name("unsupervised"));
}
