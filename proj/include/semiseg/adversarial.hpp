#pragma once

#include <string>
#include <vector>

#include "semiseg/core.hpp"
#include "semiseg/losses.hpp"
#include "semiseg/model.hpp"
#include "semiseg/pseudo.hpp"

namespace semiseg {

enum class AttackMethod { none, fgsm, ifgsm };

struct AttackConfig {
  AttackMethod method = AttackMethod::ifgsm;
  double epsilon = 0.08;  // max per-pixel deviation from the initial image
  int steps = 5;          // K; fgsm is the K = 1 special case

  int effective_steps() const { return method == AttackMethod::fgsm ? 1 : steps; }
  double step_size() const { return epsilon / effective_steps(); }
  void validate() const;
};

AttackMethod attack_method_from_name(const std::string& name);
std::string attack_method_name(AttackMethod m);

template <typename S>
struct AttackTrace {
  std::vector<double> losses;  // unsupervised loss at x_0 .. x_K (K+1 entries)
  Tensor<S> final_image;
  bool aborted = false;        // non-finite gradient encountered; final == x0

  double initial_loss() const { return losses.empty() ? 0.0 : losses.front(); }
  double final_loss() const { return losses.empty() ? 0.0 : losses.back(); }
};

// Per-pixel clamp to [max(0, x0-eps), min(1, x0+eps)].
template <typename S>
Tensor<S> clip_neighbourhood(const Tensor<S>& x, const Tensor<S>& x0, double epsilon);

// Iterative gradient-sign ascent on the masked unsupervised loss. Model
// parameters are read-only; the pseudo-label is held fixed across
// iterations. Perturbations never leave the epsilon-band around x0 nor the
// [0,1] image range. A zero gradient component contributes no perturbation.
template <typename S>
AttackTrace<S> ifgsm(const UNet<S>& net, const Tensor<S>& x0, const PseudoLabel<S>& pseudo,
                     const AttackConfig& cfg);

}  // namespace semiseg
