#pragma once

#include <vector>

#include "semiseg/augment.hpp"
#include "semiseg/core.hpp"

namespace semiseg {

struct SharpenConfig {
  double temperature = 0.5;  // T > 0
  double threshold = 0.9;    // t in (0, 1]
  bool hard_labels = false;  // one-hot targets instead of sharpened distributions

  void validate() const;
};

// Sharpened target distribution plus the confident-pixel set N_v. The target
// is a plain value tensor with no linkage back to the model parameters.
template <typename S>
struct PseudoLabel {
  Tensor<S> target;      // (C, H, W), rows sum to 1
  Mask confidence;       // N_v: confident AND spatially valid
  double temperature = 0.5;
  double threshold = 0.9;
};

// d_i^(1/T) / sum_j d_j^(1/T); T = 1 returns d unchanged.
std::vector<double> sharpen(const std::vector<double>& d, double temperature);

// Per-pixel softmax over channels.
template <typename S>
Tensor<S> softmax_channels(const Tensor<S>& logits);

// Pixel i is kept iff max_c p[c,i] >= threshold and validity[i].
template <typename S>
Mask confidence_mask(const Tensor<S>& probs, double threshold, const Mask& validity);

// Inverse spatial transform, softmax, confidence thresholding on the
// pre-sharpen probabilities, then sharpening (or one-hot when configured).
template <typename S>
PseudoLabel<S> make_pseudo_label(const Tensor<S>& weak_logits, const SpatialTransform& t_spatial,
                                 const SharpenConfig& cfg);

}  // namespace semiseg
