#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "semiseg/adversarial.hpp"
#include "semiseg/augment.hpp"
#include "semiseg/data.hpp"
#include "semiseg/losses.hpp"
#include "semiseg/metrics.hpp"
#include "semiseg/model.hpp"
#include "semiseg/pseudo.hpp"

namespace semiseg {

enum class TrainMode { semi, supervised_only };

TrainMode train_mode_from_name(const std::string& name);
std::string train_mode_name(TrainMode m);

struct TrainConfig {
  int epochs = 60;
  int batch_size = 8;
  double lr_ini = 1e-2;
  double eta = 0.7;
  double momentum = 0.95;
  TrainMode mode = TrainMode::semi;
  int eval_every = 5;
  int checkpoint_every = 5;
  uint64_t seed = 1;
  double nsd_tolerance = 13.0;
  bool weak_enabled = true;    // weak spatial transform on the pseudo-label branch
  bool strong_enabled = true;  // hand-crafted photometric init on the strong branch
  bool log_attack = true;

  ModelConfig model;
  SharpenConfig sharpen;
  AttackConfig attack;
  LossConfig loss;
  WeakAugConfig weak;
  PhotoRanges photo;

  void validate() const;
};

// lr_ini * (1 - epoch/epoch_max) * eta
double lr_schedule(int epoch, const TrainConfig& cfg);

uint64_t derive_seed(uint64_t seed, uint64_t salt);

template <typename S>
struct TrainState {
  UNet<S> net;
  std::vector<S> velocity;
  int epoch = 0;  // completed epochs
  Rng rng;
  double best_dice = -1.0;
  int best_epoch = -1;
  std::vector<S> best_params;

  explicit TrainState(const TrainConfig& cfg)
      : net(cfg.model, derive_seed(cfg.seed, 0)),
        velocity(net.param_count(), S(0)),
        rng(derive_seed(cfg.seed, 1)) {}
};

struct TrainStepStats {
  LossReport report;
  // attack monitoring (zeros when the attack is disabled or no item ran it)
  double attack_mean_initial = 0.0;
  double attack_mean_final = 0.0;
  double attack_frac_nondecreasing = 0.0;
  int attack_items = 0;
};

struct FitResult {
  int epochs_run = 0;
  double best_dice = -1.0;
  int best_epoch = -1;
  EvalReport best_report;
  LossReport final_losses;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& msg, int epoch, int step, double loss_s, double loss_u)
      : std::runtime_error(msg), epoch(epoch), step(step), loss_s(loss_s), loss_u(loss_u) {}
  int epoch, step;
  double loss_s, loss_u;
};

// One optimization step:
//   1. supervised forward on labelled items -> L_s
//   2. per unlabelled item: weak transform, forward, inverse transform,
//      sharpen + threshold -> pseudo-label (a constant target)
//   3. hand-crafted photometric init on the un-augmented unlabelled image
//   4. I-FGSM refinement against the pseudo-label, parameters frozen
//   5. forward on the adversarial images -> L_u
//   6. L = L_s + w(epoch) * L_u
//   7. one SGD-with-momentum update at lr_schedule(epoch)
// The weak branch contributes no parameter gradients.
template <typename S>
TrainStepStats train_step(TrainState<S>& state, const MixedBatch<S>& batch,
                          const TrainConfig& cfg);

// stop_after_epochs > 0 ends the session early (checkpointing first) so a
// long run can be split across invocations and resumed; the learning-rate
// and ramp-up schedules always span the full cfg.epochs.
template <typename S>
FitResult fit(const TrainConfig& cfg, const DatasetSplit<S>& split,
              const std::vector<LabelledItem<S>>& eval_set,
              const std::filesystem::path& run_dir, bool resume = false,
              int stop_after_epochs = -1);

template <typename S>
void save_checkpoint(const std::filesystem::path& path, const TrainState<S>& state,
                     const TrainConfig& cfg);

template <typename S>
TrainState<S> load_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg);

// Loads only the model (the best-snapshot parameters when present).
template <typename S>
UNet<S> load_model(const std::filesystem::path& path);

}  // namespace semiseg
