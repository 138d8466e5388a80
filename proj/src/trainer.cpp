#include "semiseg/trainer.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace semiseg {

namespace fs = std::filesystem;

TrainMode train_mode_from_name(const std::string& name) {
  if (name == "semi") return TrainMode::semi;
  if (name == "supervised-only") return TrainMode::supervised_only;
  throw std::invalid_argument("unknown training mode: " + name);
}

std::string train_mode_name(TrainMode m) {
  return m == TrainMode::semi ? "semi" : "supervised-only";
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (lr_ini <= 0 || eta <= 0) throw std::invalid_argument("TrainConfig: lr must be positive");
  if (momentum < 0 || momentum >= 1)
    throw std::invalid_argument("TrainConfig: momentum must be in [0, 1)");
  if (eval_every < 1 || checkpoint_every < 1)
    throw std::invalid_argument("TrainConfig: cadences must be >= 1");
  model.validate();
  sharpen.validate();
  attack.validate();
  loss.validate();
}

double lr_schedule(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch > cfg.epochs)
    throw std::invalid_argument("lr_schedule: epoch out of range");
  return cfg.lr_ini * (1.0 - static_cast<double>(epoch) / cfg.epochs) * cfg.eta;
}

uint64_t derive_seed(uint64_t seed, uint64_t salt) {
  uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

template <typename S>
TrainStepStats train_step(TrainState<S>& state, const MixedBatch<S>& batch,
                          const TrainConfig& cfg) {
  const int B = static_cast<int>(batch.labelled_items.size());
  if (B == 0) throw std::invalid_argument("train_step: empty labelled batch");
  const bool semi = cfg.mode == TrainMode::semi;
  if (semi && batch.unlabelled_items.size() != static_cast<size_t>(B))
    throw std::invalid_argument("train_step: labelled/unlabelled batch sizes must match");
  const int n_unlab = semi ? B : 0;
  const int n_tasks = B + n_unlab;

  // All randomness is drawn on the calling thread so the parallel section is
  // deterministic regardless of scheduling.
  std::vector<SpatialTransform> weak_ts(n_unlab);
  std::vector<StrongAugPlan> plans(n_unlab);
  for (int i = 0; i < n_unlab; ++i) {
    const Tensor<S>& x = batch.unlabelled_items[i];
    weak_ts[i] = cfg.weak_enabled ? sample_weak(cfg.weak, x.h, x.w, state.rng)
                                  : SpatialTransform{SpatialKind::identity, {}};
    if (cfg.strong_enabled) plans[i] = sample_strong_init(cfg.photo, state.rng);
  }

  const double w = rampup_weight(state.epoch, cfg.loss);
  std::vector<std::vector<S>> item_grads(n_tasks);
  std::vector<double> item_loss(n_tasks, 0.0);
  std::vector<long> item_conf(n_unlab, 0);
  std::vector<double> atk_init(n_unlab, 0.0), atk_final(n_unlab, 0.0);
  std::vector<uint8_t> atk_ran(n_unlab, 0);
  std::string worker_error;

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (int t = 0; t < n_tasks; ++t) {
    try {
      item_grads[t].assign(state.net.param_count(), S(0));
      if (t < B) {
        const auto& [img, y] = batch.labelled_items[t];
        UNetTrace<S> tr;
        const Tensor<S> logits = state.net.forward(img, tr);
        Tensor<S> dlogits(logits.c, logits.h, logits.w, S(0));
        item_loss[t] = supervised_item_loss(logits, y, cfg.loss.smooth, &dlogits);
        const S scale = static_cast<S>(1.0 / B);
        for (S& v : dlogits.v) v *= scale;
        state.net.backward(tr, dlogits, item_grads[t].data(), nullptr);
      } else {
        const int i = t - B;
        const Tensor<S>& x = batch.unlabelled_items[i];

        // weak branch: pseudo-label as a constant target
        const Tensor<S> xw = apply_spatial(weak_ts[i], x);
        const Tensor<S> logits_w = state.net.forward(xw);
        const PseudoLabel<S> pl = make_pseudo_label(logits_w, weak_ts[i], cfg.sharpen);
        item_conf[i] = static_cast<long>(pl.confidence.count());

        // strong branch: photometric init on the un-augmented image, then
        // adversarial refinement with frozen parameters
        Tensor<S> x_adv;
        if (cfg.strong_enabled)
          x_adv = apply_photometric(plans[i], x);
        else
          x_adv = x;
        if (cfg.attack.method != AttackMethod::none) {
          AttackTrace<S> atk = ifgsm(state.net, x_adv, pl, cfg.attack);
          atk_init[i] = atk.initial_loss();
          atk_final[i] = atk.final_loss();
          atk_ran[i] = 1;
          x_adv = std::move(atk.final_image);
        }

        UNetTrace<S> tr;
        const Tensor<S> logits_s = state.net.forward(x_adv, tr);
        Tensor<S> dlogits(logits_s.c, logits_s.h, logits_s.w, S(0));
        item_loss[t] = unsupervised_item_loss(logits_s, pl, &dlogits);
        if (item_conf[i] > 0) {
          const S scale = static_cast<S>(w / B);
          for (S& v : dlogits.v) v *= scale;
          state.net.backward(tr, dlogits, item_grads[t].data(), nullptr);
        }
      }
    } catch (const std::exception& e) {
#ifdef _OPENMP
#pragma omp critical
#endif
      if (worker_error.empty()) worker_error = e.what();
    }
  }
  if (!worker_error.empty()) throw std::runtime_error("train_step: " + worker_error);

  // fixed-order reduction keeps results independent of thread scheduling
  std::vector<S> grad(state.net.param_count(), S(0));
  for (int t = 0; t < n_tasks; ++t)
    for (size_t j = 0; j < grad.size(); ++j) grad[j] += item_grads[t][j];

  double loss_s = 0.0, loss_u = 0.0;
  for (int t = 0; t < B; ++t) loss_s += item_loss[t];
  loss_s /= B;
  for (int t = B; t < n_tasks; ++t) loss_u += item_loss[t];
  if (n_unlab > 0) loss_u /= n_unlab;

  if (!std::isfinite(loss_s) || !std::isfinite(loss_u))
    throw TrainingDiverged("train_step: non-finite loss", state.epoch, -1, loss_s, loss_u);

  TrainStepStats stats;
  stats.report = total_loss(loss_s, loss_u, state.epoch, cfg.loss);
  for (long c : item_conf) stats.report.n_confident_pixels += c;

  nn::sgd_momentum_step(state.net.params(), grad, state.velocity,
                        lr_schedule(state.epoch, cfg), cfg.momentum);

  int atk_n = 0, atk_nondec = 0;
  for (int i = 0; i < n_unlab; ++i) {
    if (!atk_ran[i]) continue;
    ++atk_n;
    stats.attack_mean_initial += atk_init[i];
    stats.attack_mean_final += atk_final[i];
    atk_nondec += (atk_final[i] >= atk_init[i]);
  }
  if (atk_n > 0) {
    stats.attack_mean_initial /= atk_n;
    stats.attack_mean_final /= atk_n;
    stats.attack_frac_nondecreasing = static_cast<double>(atk_nondec) / atk_n;
    stats.attack_items = atk_n;
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'S', 'S', 'E', 'G', 'C', 'K', '0', '1'};

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
void get(std::ifstream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
}

void put_model_cfg(std::ofstream& out, const ModelConfig& m) {
  put(out, m.depth);
  put(out, m.base_channels);
  put(out, m.num_classes);
  put(out, m.norm_groups);
  put(out, m.max_channels);
}

ModelConfig get_model_cfg(std::ifstream& in) {
  ModelConfig m;
  get(in, m.depth);
  get(in, m.base_channels);
  get(in, m.num_classes);
  get(in, m.norm_groups);
  get(in, m.max_channels);
  return m;
}

}  // namespace

template <typename S>
void save_checkpoint(const fs::path& path, const TrainState<S>& state, const TrainConfig& cfg) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out.good()) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put(out, static_cast<uint8_t>(sizeof(S)));
  put_model_cfg(out, cfg.model);
  put(out, state.epoch);
  const uint64_t n = state.net.param_count();
  put(out, n);
  out.write(reinterpret_cast<const char*>(state.net.params().data()), n * sizeof(S));
  out.write(reinterpret_cast<const char*>(state.velocity.data()), n * sizeof(S));
  std::ostringstream rng_ss;
  rng_ss << state.rng;
  const std::string rng_str = rng_ss.str();
  put(out, static_cast<uint32_t>(rng_str.size()));
  out.write(rng_str.data(), rng_str.size());
  put(out, state.best_dice);
  put(out, state.best_epoch);
  put(out, static_cast<uint8_t>(state.best_params.empty() ? 0 : 1));
  if (!state.best_params.empty())
    out.write(reinterpret_cast<const char*>(state.best_params.data()), n * sizeof(S));
  if (!out.good()) throw std::runtime_error("save_checkpoint: write failed " + path.string());
}

namespace {

template <typename S>
void read_checkpoint_header(std::ifstream& in, const fs::path& path, ModelConfig& model,
                            int& epoch, uint64_t& n) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in.good() || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  uint8_t ssize;
  get(in, ssize);
  if (ssize != sizeof(S))
    throw std::runtime_error("checkpoint: scalar width mismatch in " + path.string());
  model = get_model_cfg(in);
  get(in, epoch);
  get(in, n);
}

}  // namespace

template <typename S>
TrainState<S> load_checkpoint(const fs::path& path, const TrainConfig& cfg) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
  ModelConfig stored;
  int epoch;
  uint64_t n;
  read_checkpoint_header<S>(in, path, stored, epoch, n);
  if (!(stored == cfg.model))
    throw std::runtime_error("load_checkpoint: model config mismatch in " + path.string());

  TrainState<S> state(cfg);
  if (n != state.net.param_count())
    throw std::runtime_error("load_checkpoint: parameter count mismatch");
  state.epoch = epoch;
  in.read(reinterpret_cast<char*>(state.net.params().data()), n * sizeof(S));
  in.read(reinterpret_cast<char*>(state.velocity.data()), n * sizeof(S));
  uint32_t rng_len;
  get(in, rng_len);
  std::string rng_str(rng_len, '\0');
  in.read(rng_str.data(), rng_len);
  std::istringstream rng_ss(rng_str);
  rng_ss >> state.rng;
  get(in, state.best_dice);
  get(in, state.best_epoch);
  uint8_t has_best;
  get(in, has_best);
  if (has_best) {
    state.best_params.resize(n);
    in.read(reinterpret_cast<char*>(state.best_params.data()), n * sizeof(S));
  }
  if (!in.good()) throw std::runtime_error("load_checkpoint: truncated file " + path.string());
  return state;
}

template <typename S>
UNet<S> load_model(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) throw std::runtime_error("load_model: cannot open " + path.string());
  ModelConfig stored;
  int epoch;
  uint64_t n;
  read_checkpoint_header<S>(in, path, stored, epoch, n);
  UNet<S> net(stored, 0);
  if (n != net.param_count()) throw std::runtime_error("load_model: parameter count mismatch");
  in.read(reinterpret_cast<char*>(net.params().data()), n * sizeof(S));
  // prefer the best-validation snapshot when the checkpoint carries one
  std::vector<S> rest(n);
  in.read(reinterpret_cast<char*>(rest.data()), n * sizeof(S));  // velocity, unused
  uint32_t rng_len;
  get(in, rng_len);
  in.seekg(rng_len, std::ios::cur);
  double best_dice;
  int best_epoch;
  uint8_t has_best;
  get(in, best_dice);
  get(in, best_epoch);
  get(in, has_best);
  if (has_best) in.read(reinterpret_cast<char*>(net.params().data()), n * sizeof(S));
  if (!in.good()) throw std::runtime_error("load_model: truncated file " + path.string());
  return net;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace {

std::string csv_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

template <typename S>
FitResult fit(const TrainConfig& cfg, const DatasetSplit<S>& split,
              const std::vector<LabelledItem<S>>& eval_set, const fs::path& run_dir,
              bool resume, int stop_after_epochs) {
  cfg.validate();
  fs::create_directories(run_dir);
  const fs::path last_ckpt = run_dir / "last.ckpt";

  const bool resuming = resume && fs::exists(last_ckpt);
  TrainState<S> state = resuming ? load_checkpoint<S>(last_ckpt, cfg) : TrainState<S>(cfg);

  const bool semi = cfg.mode == TrainMode::semi;
  BatchSampler<S> sampler(&split, semi);
  const int steps = sampler.steps_per_epoch(cfg.batch_size);

  const auto csv_mode = resuming ? std::ios::app : std::ios::trunc;
  std::ofstream train_log(run_dir / "train_log.csv", csv_mode);
  std::ofstream eval_log(run_dir / "eval_log.csv", csv_mode);
  const bool log_attack = cfg.log_attack && semi && cfg.attack.method != AttackMethod::none;
  std::ofstream attack_log;
  if (log_attack) attack_log.open(run_dir / "attack_log.csv", csv_mode);
  if (!resuming) {
    train_log << "epoch,step,loss_s,loss_u,weight,loss_total,n_confident_pixels\n";
    eval_log << "epoch,mean_dice,mean_nsd\n";
    if (log_attack)
      attack_log << "epoch,step,mean_initial_loss_u,mean_final_loss_u,frac_nondecreasing,items\n";
  }

  FitResult result;
  LossReport last_report;
  const int session_start = state.epoch;
  bool stopped_early = false;
  for (int epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    sampler.start_epoch(state.rng);
    for (int step = 0; step < steps; ++step) {
      MixedBatch<S> batch = sampler.next(cfg.batch_size, state.rng);
      TrainStepStats stats;
      try {
        stats = train_step(state, batch, cfg);
      } catch (const TrainingDiverged& d) {
        std::ofstream dump(run_dir / "divergence.txt");
        dump << "epoch=" << epoch << " step=" << step << " loss_s=" << d.loss_s
             << " loss_u=" << d.loss_u << "\n"
             << d.what() << "\n";
        throw TrainingDiverged(d.what(), epoch, step, d.loss_s, d.loss_u);
      }
      last_report = stats.report;
      train_log << epoch << ',' << step << ',' << csv_num(stats.report.loss_s) << ','
                << csv_num(stats.report.loss_u) << ',' << csv_num(stats.report.weight) << ','
                << csv_num(stats.report.total) << ',' << stats.report.n_confident_pixels
                << '\n';
      if (log_attack)
        attack_log << epoch << ',' << step << ',' << csv_num(stats.attack_mean_initial) << ','
                   << csv_num(stats.attack_mean_final) << ','
                   << csv_num(stats.attack_frac_nondecreasing) << ',' << stats.attack_items
                   << '\n';
    }
    state.epoch = epoch + 1;

    const bool last_epoch = (epoch == cfg.epochs - 1);
    if (!eval_set.empty() && (epoch % cfg.eval_every == cfg.eval_every - 1 || last_epoch)) {
      const EvalReport er = evaluate(state.net, eval_set, cfg.nsd_tolerance);
      eval_log << epoch << ',' << csv_num(er.mean_dice) << ',' << csv_num(er.mean_nsd) << '\n';
      if (er.mean_dice > state.best_dice) {
        state.best_dice = er.mean_dice;
        state.best_epoch = epoch;
        state.best_params = state.net.params();
      }
    }
    train_log.flush();
    eval_log.flush();
    if (log_attack) attack_log.flush();
    stopped_early =
        stop_after_epochs > 0 && (state.epoch - session_start) >= stop_after_epochs &&
        !last_epoch;
    if (epoch % cfg.checkpoint_every == cfg.checkpoint_every - 1 || last_epoch || stopped_early)
      save_checkpoint(last_ckpt, state, cfg);
    if (stopped_early) break;
  }

  if (!stopped_early) {
    if (state.best_params.empty()) {
      state.best_params = state.net.params();
      state.best_epoch = state.epoch - 1;
    }
    save_checkpoint(run_dir / "best.ckpt", state, cfg);
  }

  result.epochs_run = state.epoch;
  result.best_dice = state.best_dice;
  result.best_epoch = state.best_epoch;
  result.final_losses = last_report;
  if (!eval_set.empty()) {
    UNet<S> best_net(cfg.model, 0);
    best_net.params() = state.best_params;
    result.best_report = evaluate(best_net, eval_set, cfg.nsd_tolerance);
    result.best_dice = result.best_report.mean_dice;
  }
  return result;
}

#define SEMISEG_INSTANTIATE(S)                                                              \
  template struct TrainState<S>;                                                            \
  template TrainStepStats train_step<S>(TrainState<S>&, const MixedBatch<S>&,               \
                                        const TrainConfig&);                                \
  template FitResult fit<S>(const TrainConfig&, const DatasetSplit<S>&,                     \
                            const std::vector<LabelledItem<S>>&, const fs::path&, bool,     \
                            int);                                                           \
  template void save_checkpoint<S>(const fs::path&, const TrainState<S>&,                   \
                                   const TrainConfig&);                                     \
  template TrainState<S> load_checkpoint<S>(const fs::path&, const TrainConfig&);           \
  template UNet<S> load_model<S>(const fs::path&);

SEMISEG_INSTANTIATE(float)
SEMISEG_INSTANTIATE(double)
#undef SEMISEG_INSTANTIATE

}  // namespace semiseg
