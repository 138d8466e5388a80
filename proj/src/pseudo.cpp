#include "semiseg/pseudo.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace semiseg {

void SharpenConfig::validate() const {
  if (temperature <= 0.0) throw std::invalid_argument("sharpen temperature must be > 0");
  if (threshold <= 0.0 || threshold > 1.0)
    throw std::invalid_argument("confidence threshold must be in (0, 1]");
}

std::vector<double> sharpen(const std::vector<double>& d, double temperature) {
  if (temperature <= 0.0) throw std::invalid_argument("sharpen: temperature must be > 0");
  if (d.empty()) throw std::invalid_argument("sharpen: empty distribution");
  const double dmax = *std::max_element(d.begin(), d.end());
  if (dmax <= 0.0) throw std::invalid_argument("sharpen: all-zero distribution");
  if (temperature == 1.0) return d;
  // Normalizing by the max keeps d_i^(1/T) away from underflow for small T.
  std::vector<double> out(d.size());
  double sum = 0;
  for (size_t i = 0; i < d.size(); ++i) {
    out[i] = std::pow(d[i] / dmax, 1.0 / temperature);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

template <typename S>
Tensor<S> softmax_channels(const Tensor<S>& logits) {
  Tensor<S> probs(logits.c, logits.h, logits.w);
  const size_t plane = static_cast<size_t>(logits.h) * logits.w;
  for (size_t i = 0; i < plane; ++i) {
    double m = logits.v[i];
    for (int ci = 1; ci < logits.c; ++ci)
      m = std::max(m, static_cast<double>(logits.v[ci * plane + i]));
    double sum = 0;
    for (int ci = 0; ci < logits.c; ++ci) {
      const double e = std::exp(static_cast<double>(logits.v[ci * plane + i]) - m);
      probs.v[ci * plane + i] = static_cast<S>(e);
      sum += e;
    }
    for (int ci = 0; ci < logits.c; ++ci)
      probs.v[ci * plane + i] = static_cast<S>(probs.v[ci * plane + i] / sum);
  }
  return probs;
}

template <typename S>
Mask confidence_mask(const Tensor<S>& probs, double threshold, const Mask& validity) {
  if (validity.h != probs.h || validity.w != probs.w)
    throw std::invalid_argument("confidence_mask: validity mask shape mismatch");
  Mask out(probs.h, probs.w, false);
  const size_t plane = static_cast<size_t>(probs.h) * probs.w;
  for (size_t i = 0; i < plane; ++i) {
    double m = probs.v[i];
    for (int ci = 1; ci < probs.c; ++ci)
      m = std::max(m, static_cast<double>(probs.v[ci * plane + i]));
    out.v[i] = (m >= threshold && validity.v[i]) ? 1 : 0;
  }
  return out;
}

template <typename S>
PseudoLabel<S> make_pseudo_label(const Tensor<S>& weak_logits, const SpatialTransform& t_spatial,
                                 const SharpenConfig& cfg) {
  cfg.validate();
  auto [logits, validity] = invert_spatial(t_spatial, weak_logits);
  Tensor<S> probs = softmax_channels(logits);

  PseudoLabel<S> pl;
  pl.temperature = cfg.temperature;
  pl.threshold = cfg.threshold;
  pl.confidence = confidence_mask(probs, cfg.threshold, validity);
  pl.target = Tensor<S>(probs.c, probs.h, probs.w);

  const size_t plane = static_cast<size_t>(probs.h) * probs.w;
  std::vector<double> d(probs.c);
  for (size_t i = 0; i < plane; ++i) {
    for (int ci = 0; ci < probs.c; ++ci) d[ci] = probs.v[ci * plane + i];
    if (cfg.hard_labels) {
      const int best =
          static_cast<int>(std::max_element(d.begin(), d.end()) - d.begin());
      for (int ci = 0; ci < probs.c; ++ci)
        pl.target.v[ci * plane + i] = (ci == best) ? S(1) : S(0);
    } else {
      const std::vector<double> sh = sharpen(d, cfg.temperature);
      for (int ci = 0; ci < probs.c; ++ci) pl.target.v[ci * plane + i] = static_cast<S>(sh[ci]);
    }
  }
  return pl;
}

#define SEMISEG_INSTANTIATE(S)                                                             \
  template Tensor<S> softmax_channels<S>(const Tensor<S>&);                                \
  template Mask confidence_mask<S>(const Tensor<S>&, double, const Mask&);                 \
  template PseudoLabel<S> make_pseudo_label<S>(const Tensor<S>&, const SpatialTransform&,  \
                                               const SharpenConfig&);

SEMISEG_INSTANTIATE(float)
SEMISEG_INSTANTIATE(double)
#undef SEMISEG_INSTANTIATE

}  // namespace semiseg
