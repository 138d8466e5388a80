#pragma once

#include <vector>

#include "semiseg/core.hpp"
#include "semiseg/pseudo.hpp"

namespace semiseg {

struct LossConfig {
  double w_max = 1.0;      // plateau of the unsupervised ramp-up weight
  int ramp_epochs = 1;     // epochs until the plateau is reached
  double smooth = 1.0;     // Dice smoothing constant

  void validate() const;
};

struct LossReport {
  double loss_s = 0.0;
  double loss_u = 0.0;
  double weight = 0.0;
  double total = 0.0;
  long n_confident_pixels = 0;
};

// 1 - (2*sum(p*y)+s)/(sum(p)+sum(y)+s) on the foreground probability
// channels, averaged over classes 1..C-1.
template <typename S>
double dice_loss(const Tensor<S>& probs, const SegMask& y, double smooth);

// Per-pixel cross entropy -sum_c target_c * log(pred_c + 1e-12), as a
// (1, H, W) field; the SegMask overload treats labels as one-hot targets.
template <typename S>
Tensor<S> pixel_ce(const Tensor<S>& pred, const Tensor<S>& target);
template <typename S>
Tensor<S> pixel_ce(const Tensor<S>& pred, const SegMask& target);

// Per-item losses used by the trainer: softmax is applied to the logits
// internally, and the full gradient with respect to the logits is
// accumulated into dlogits when non-null.
template <typename S>
double supervised_item_loss(const Tensor<S>& logits, const SegMask& y, double smooth,
                            Tensor<S>* dlogits);
template <typename S>
double unsupervised_item_loss(const Tensor<S>& strong_logits, const PseudoLabel<S>& pseudo,
                              Tensor<S>* dlogits);

// Batch means (Eq. 3 / Eq. 4 outer averages).
template <typename S>
double supervised_loss(const std::vector<Tensor<S>>& batch_logits,
                       const std::vector<SegMask>& batch_masks, double smooth);
template <typename S>
double unsupervised_loss(const std::vector<Tensor<S>>& strong_logits,
                         const std::vector<PseudoLabel<S>>& pseudos);

// w(epoch) = w_max * exp(-5 * (1 - min(epoch, ramp)/ramp)^2)
double rampup_weight(int epoch, const LossConfig& cfg);

LossReport total_loss(double loss_s, double loss_u, int epoch, const LossConfig& cfg);

}  // namespace semiseg
