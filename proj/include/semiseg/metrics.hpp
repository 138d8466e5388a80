#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "semiseg/core.hpp"
#include "semiseg/model.hpp"

namespace semiseg {

struct EvalReport {
  std::vector<double> per_image_dice;
  std::vector<double> per_image_nsd;
  double mean_dice = 0.0;
  double mean_nsd = 0.0;
  int n_empty_gt = 0;    // images whose ground-truth foreground is empty
  int n_empty_pred = 0;  // images predicted all-background
  double nsd_tolerance = 13.0;
};

// Overlap metrics on binary foreground (labels >= 1 collapse to 1).
// Conventions: both masks empty -> 1.0, exactly one empty -> 0.0.
double dice_score(const SegMask& pred, const SegMask& gt);

// Normalized Surface Dice: the fraction of boundary pixels of each mask
// lying within `tol` (Euclidean pixels) of the other mask's boundary.
double nsd(const SegMask& pred, const SegMask& gt, double tol);

// Foreground pixels with a 4-neighbour background pixel; pixels on the image
// border count their out-of-image neighbours as background.
Mask boundary_mask(const SegMask& m);

// Exact squared Euclidean distance transform (integer arithmetic) to the
// true pixels of `sites`. Pixels are unreachable only when `sites` is empty.
std::vector<int64_t> squared_edt(const Mask& sites);

template <typename S>
EvalReport evaluate(const UNet<S>& net,
                    const std::vector<std::pair<Tensor<S>, SegMask>>& dataset, double tol);

}  // namespace semiseg
