#include "semiseg/adversarial.hpp"

#include <cmath>
#include <stdexcept>

namespace semiseg {

void AttackConfig::validate() const {
  if (epsilon < 0.0) throw std::invalid_argument("AttackConfig: epsilon must be >= 0");
  if (steps < 1) throw std::invalid_argument("AttackConfig: steps must be >= 1");
}

AttackMethod attack_method_from_name(const std::string& name) {
  if (name == "none") return AttackMethod::none;
  if (name == "fgsm") return AttackMethod::fgsm;
  if (name == "ifgsm") return AttackMethod::ifgsm;
  throw std::invalid_argument("unknown attack method: " + name);
}

std::string attack_method_name(AttackMethod m) {
  switch (m) {
    case AttackMethod::none: return "none";
    case AttackMethod::fgsm: return "fgsm";
    case AttackMethod::ifgsm: return "ifgsm";
  }
  return "?";
}

template <typename S>
Tensor<S> clip_neighbourhood(const Tensor<S>& x, const Tensor<S>& x0, double epsilon) {
  if (!x.same_shape(x0)) throw std::invalid_argument("clip_neighbourhood: shape mismatch");
  Tensor<S> out = x;
  const S eps = static_cast<S>(epsilon);
  for (size_t i = 0; i < out.v.size(); ++i) {
    const S lo = std::max(S(0), x0.v[i] - eps);
    const S hi = std::min(S(1), x0.v[i] + eps);
    out.v[i] = std::min(std::max(out.v[i], lo), hi);
  }
  return out;
}

template <typename S>
AttackTrace<S> ifgsm(const UNet<S>& net, const Tensor<S>& x0, const PseudoLabel<S>& pseudo,
                     const AttackConfig& cfg) {
  cfg.validate();
  const int k_steps = cfg.effective_steps();
  const S eps = static_cast<S>(cfg.epsilon);
  const S step = static_cast<S>(cfg.step_size());

  AttackTrace<S> trace;
  trace.losses.reserve(k_steps + 1);

  // Empty confident set means L_u == 0 with zero gradient everywhere, and a
  // zero budget forbids any perturbation: both reduce to the identity.
  if (pseudo.confidence.count() == 0) {
    trace.losses.assign(static_cast<size_t>(k_steps) + 1, 0.0);
    trace.final_image = x0;
    return trace;
  }
  if (cfg.epsilon == 0.0) {
    const double l0 = unsupervised_item_loss<S>(net.forward(x0), pseudo, nullptr);
    trace.losses.assign(static_cast<size_t>(k_steps) + 1, l0);
    trace.final_image = x0;
    return trace;
  }

  // The perturbation is tracked explicitly so the infinity-norm bound holds
  // by construction: delta is clamped to [-eps, eps] before being applied,
  // and the [0,1] range clamp only ever shrinks |x - x0|.
  Tensor<S> delta(x0.c, x0.h, x0.w, S(0));
  auto compose = [&](Tensor<S>& x) {
    x = x0;
    for (size_t i = 0; i < x.v.size(); ++i) x.v[i] = clamp01(static_cast<S>(x.v[i] + delta.v[i]));
  };

  Tensor<S> x = x0;
  UNetTrace<S> fwd;
  for (int k = 0; k < k_steps; ++k) {
    const Tensor<S> logits = net.forward(x, fwd);
    Tensor<S> dlogits(logits.c, logits.h, logits.w, S(0));
    const double loss = unsupervised_item_loss(logits, pseudo, &dlogits);
    trace.losses.push_back(loss);

    Tensor<S> grad_x(x.c, x.h, x.w, S(0));
    net.backward(fwd, dlogits, nullptr, &grad_x);
    if (!std::isfinite(loss) || !grad_x.all_finite()) {
      trace.aborted = true;
      trace.final_image = x0;
      trace.losses.assign(1, trace.losses.front());
      return trace;
    }

    for (size_t i = 0; i < delta.v.size(); ++i) {
      const S g = grad_x.v[i];
      const S sign = (g > S(0)) ? S(1) : (g < S(0) ? S(-1) : S(0));
      S d = delta.v[i] + step * sign;
      delta.v[i] = std::min(std::max(d, -eps), eps);
    }
    compose(x);
  }

  trace.losses.push_back(unsupervised_item_loss<S>(net.forward(x, fwd), pseudo, nullptr));
  trace.final_image = std::move(x);
  return trace;
}

#define SEMISEG_INSTANTIATE(S)                                                           \
  template Tensor<S> clip_neighbourhood<S>(const Tensor<S>&, const Tensor<S>&, double);  \
  template AttackTrace<S> ifgsm<S>(const UNet<S>&, const Tensor<S>&, const PseudoLabel<S>&, \
                                   const AttackConfig&);

SEMISEG_INSTANTIATE(float)
SEMISEG_INSTANTIATE(double)
#undef SEMISEG_INSTANTIATE

}  // namespace semiseg
