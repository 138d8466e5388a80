#include "semiseg/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace semiseg {

namespace {
constexpr double kLogEps = 1e-12;

template <typename S>
void check_probs_vs_mask(const Tensor<S>& probs, const SegMask& y) {
  if (probs.h != y.h || probs.w != y.w)
    throw std::invalid_argument("loss: probability map and mask shapes differ");
  if (y.num_classes > probs.c)
    throw std::invalid_argument("loss: mask declares more classes than the probability map");
}

// dlogits += softmax-jacobian^T * dprobs at every pixel
template <typename S>
void softmax_backward_add(const Tensor<S>& probs, const std::vector<double>& dprobs,
                          Tensor<S>& dlogits) {
  const size_t plane = static_cast<size_t>(probs.h) * probs.w;
  for (size_t i = 0; i < plane; ++i) {
    double dot = 0;
    for (int ci = 0; ci < probs.c; ++ci)
      dot += dprobs[ci * plane + i] * static_cast<double>(probs.v[ci * plane + i]);
    for (int ci = 0; ci < probs.c; ++ci) {
      const double p = probs.v[ci * plane + i];
      dlogits.v[ci * plane + i] += static_cast<S>(p * (dprobs[ci * plane + i] - dot));
    }
  }
}

}  // namespace

void LossConfig::validate() const {
  if (w_max <= 0.0) throw std::invalid_argument("LossConfig: w_max must be > 0");
  if (ramp_epochs < 1) throw std::invalid_argument("LossConfig: ramp_epochs must be >= 1");
  if (smooth < 0.0) throw std::invalid_argument("LossConfig: smooth must be >= 0");
}

template <typename S>
double dice_loss(const Tensor<S>& probs, const SegMask& y, double smooth) {
  check_probs_vs_mask(probs, y);
  const size_t plane = static_cast<size_t>(probs.h) * probs.w;
  double acc = 0;
  const int n_fg = probs.c - 1;
  for (int k = 1; k < probs.c; ++k) {
    double inter = 0, psum = 0, ysum = 0;
    for (size_t i = 0; i < plane; ++i) {
      const double p = probs.v[k * plane + i];
      const double t = (y.labels[i] == k) ? 1.0 : 0.0;
      inter += p * t;
      psum += p;
      ysum += t;
    }
    acc += 1.0 - (2.0 * inter + smooth) / (psum + ysum + smooth);
  }
  return acc / n_fg;
}

template <typename S>
Tensor<S> pixel_ce(const Tensor<S>& pred, const Tensor<S>& target) {
  if (!pred.same_shape(target))
    throw std::invalid_argument("pixel_ce: prediction and target shapes differ");
  Tensor<S> out(1, pred.h, pred.w);
  const size_t plane = static_cast<size_t>(pred.h) * pred.w;
  for (size_t i = 0; i < plane; ++i) {
    double ce = 0;
    for (int ci = 0; ci < pred.c; ++ci)
      ce -= static_cast<double>(target.v[ci * plane + i]) *
            std::log(static_cast<double>(pred.v[ci * plane + i]) + kLogEps);
    out.v[i] = static_cast<S>(ce);
  }
  return out;
}

template <typename S>
Tensor<S> pixel_ce(const Tensor<S>& pred, const SegMask& target) {
  check_probs_vs_mask(pred, target);
  Tensor<S> out(1, pred.h, pred.w);
  const size_t plane = static_cast<size_t>(pred.h) * pred.w;
  for (size_t i = 0; i < plane; ++i) {
    const int k = target.labels[i];
    out.v[i] = static_cast<S>(-std::log(static_cast<double>(pred.v[k * plane + i]) + kLogEps));
  }
  return out;
}

template <typename S>
double supervised_item_loss(const Tensor<S>& logits, const SegMask& y, double smooth,
                            Tensor<S>* dlogits) {
  check_probs_vs_mask(logits, y);
  const Tensor<S> probs = softmax_channels(logits);
  const size_t plane = static_cast<size_t>(probs.h) * probs.w;
  const int n_fg = probs.c - 1;

  double loss = 0;
  std::vector<double> dprobs;
  if (dlogits) dprobs.assign(probs.v.size(), 0.0);

  // Dice over foreground channels
  for (int k = 1; k < probs.c; ++k) {
    double inter = 0, psum = 0, ysum = 0;
    for (size_t i = 0; i < plane; ++i) {
      const double p = probs.v[k * plane + i];
      const double t = (y.labels[i] == k) ? 1.0 : 0.0;
      inter += p * t;
      psum += p;
      ysum += t;
    }
    const double a = 2.0 * inter + smooth, b = psum + ysum + smooth;
    loss += (1.0 - a / b) / n_fg;
    if (dlogits)
      for (size_t i = 0; i < plane; ++i) {
        const double t = (y.labels[i] == k) ? 1.0 : 0.0;
        dprobs[k * plane + i] -= (2.0 * t * b - a) / (b * b) / n_fg;
      }
  }

  // mean pixel cross entropy against the one-hot ground truth
  const double inv_n = 1.0 / static_cast<double>(plane);
  for (size_t i = 0; i < plane; ++i) {
    const int k = y.labels[i];
    const double p = probs.v[k * plane + i];
    loss -= std::log(p + kLogEps) * inv_n;
    if (dlogits) dprobs[k * plane + i] -= inv_n / (p + kLogEps);
  }

  if (dlogits) softmax_backward_add(probs, dprobs, *dlogits);
  return loss;
}

template <typename S>
double unsupervised_item_loss(const Tensor<S>& strong_logits, const PseudoLabel<S>& pseudo,
                              Tensor<S>* dlogits) {
  if (!strong_logits.same_shape(pseudo.target))
    throw std::invalid_argument("unsupervised loss: logits and pseudo-label shapes differ");
  const size_t n_conf = pseudo.confidence.count();
  if (n_conf == 0) return 0.0;  // vacuous mask: zero loss, zero gradient

  const Tensor<S> probs = softmax_channels(strong_logits);
  const size_t plane = static_cast<size_t>(probs.h) * probs.w;
  const double inv_n = 1.0 / static_cast<double>(n_conf);

  double loss = 0;
  std::vector<double> dprobs;
  if (dlogits) dprobs.assign(probs.v.size(), 0.0);
  for (size_t i = 0; i < plane; ++i) {
    if (!pseudo.confidence.v[i]) continue;
    for (int ci = 0; ci < probs.c; ++ci) {
      const double t = pseudo.target.v[ci * plane + i];
      const double p = probs.v[ci * plane + i];
      loss -= t * std::log(p + kLogEps) * inv_n;
      if (dlogits) dprobs[ci * plane + i] -= t * inv_n / (p + kLogEps);
    }
  }
  if (dlogits) softmax_backward_add(probs, dprobs, *dlogits);
  return loss;
}

template <typename S>
double supervised_loss(const std::vector<Tensor<S>>& batch_logits,
                       const std::vector<SegMask>& batch_masks, double smooth) {
  if (batch_logits.empty()) throw std::invalid_argument("supervised_loss: empty batch");
  if (batch_logits.size() != batch_masks.size())
    throw std::invalid_argument("supervised_loss: batch size mismatch");
  double acc = 0;
  for (size_t i = 0; i < batch_logits.size(); ++i)
    acc += supervised_item_loss<S>(batch_logits[i], batch_masks[i], smooth, nullptr);
  return acc / static_cast<double>(batch_logits.size());
}

template <typename S>
double unsupervised_loss(const std::vector<Tensor<S>>& strong_logits,
                         const std::vector<PseudoLabel<S>>& pseudos) {
  if (strong_logits.size() != pseudos.size())
    throw std::invalid_argument("unsupervised_loss: batch size mismatch");
  if (strong_logits.empty()) return 0.0;
  double acc = 0;
  for (size_t i = 0; i < strong_logits.size(); ++i)
    acc += unsupervised_item_loss<S>(strong_logits[i], pseudos[i], nullptr);
  return acc / static_cast<double>(strong_logits.size());
}

double rampup_weight(int epoch, const LossConfig& cfg) {
  cfg.validate();
  if (epoch < 0) throw std::invalid_argument("rampup_weight: epoch must be >= 0");
  if (epoch >= cfg.ramp_epochs) return cfg.w_max;
  const double tau = 1.0 - static_cast<double>(epoch) / cfg.ramp_epochs;
  return cfg.w_max * std::exp(-5.0 * tau * tau);
}

LossReport total_loss(double loss_s, double loss_u, int epoch, const LossConfig& cfg) {
  if (!std::isfinite(loss_s) || !std::isfinite(loss_u))
    throw std::runtime_error("total_loss: non-finite loss input");
  LossReport r;
  r.loss_s = loss_s;
  r.loss_u = loss_u;
  r.weight = rampup_weight(epoch, cfg);
  r.total = loss_s + r.weight * loss_u;
  return r;
}

#define SEMISEG_INSTANTIATE(S)                                                               \
  template double dice_loss<S>(const Tensor<S>&, const SegMask&, double);                    \
  template Tensor<S> pixel_ce<S>(const Tensor<S>&, const Tensor<S>&);                        \
  template Tensor<S> pixel_ce<S>(const Tensor<S>&, const SegMask&);                          \
  template double supervised_item_loss<S>(const Tensor<S>&, const SegMask&, double,          \
                                          Tensor<S>*);                                       \
  template double unsupervised_item_loss<S>(const Tensor<S>&, const PseudoLabel<S>&,         \
                                            Tensor<S>*);                                     \
  template double supervised_loss<S>(const std::vector<Tensor<S>>&,                          \
                                     const std::vector<SegMask>&, double);                   \
  template double unsupervised_loss<S>(const std::vector<Tensor<S>>&,                        \
                                       const std::vector<PseudoLabel<S>>&);

SEMISEG_INSTANTIATE(float)
SEMISEG_INSTANTIATE(double)
#undef SEMISEG_INSTANTIATE

}  // namespace semiseg
