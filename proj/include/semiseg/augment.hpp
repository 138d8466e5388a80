#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "semiseg/core.hpp"

namespace semiseg {

// ---------------------------------------------------------------------------
// Weak branch: invertible spatial transforms. Flips and quarter-turn
// rotations invert exactly on the pixel grid; crop-resize inverts
// approximately via bilinear resampling and reports the non-recoverable
// region through a validity mask.
// ---------------------------------------------------------------------------

enum class SpatialKind { hflip, vflip, rot90, rot180, rot270, crop_resize, identity };

struct CropRect {
  int y = 0, x = 0, h = 0, w = 0;
};

struct SpatialTransform {
  SpatialKind kind = SpatialKind::identity;
  CropRect crop;  // only meaningful for crop_resize
};

struct WeakAugConfig {
  std::vector<SpatialKind> kinds = {SpatialKind::hflip,  SpatialKind::vflip,
                                    SpatialKind::rot90,  SpatialKind::rot180,
                                    SpatialKind::rot270, SpatialKind::crop_resize};
  // Per-axis crop fraction lower bound; sqrt(1/2) guarantees crop area >= 50%.
  double crop_min_axis_frac = 0.7071067811865476;
};

SpatialTransform sample_weak(const WeakAugConfig& cfg, int h, int w, Rng& rng);

bool exactly_invertible(SpatialKind kind);

template <typename S>
Tensor<S> apply_spatial(const SpatialTransform& t, const Tensor<S>& x);

template <typename S>
std::pair<Tensor<S>, Mask> invert_spatial(const SpatialTransform& t, const Tensor<S>& y);

std::string spatial_kind_name(SpatialKind kind);
SpatialKind spatial_kind_from_name(const std::string& name);
std::string describe(const SpatialTransform& t);

// ---------------------------------------------------------------------------
// Strong branch initialization: photometric-only ops, three distinct kinds
// composed per draw. Spatial shape is never altered and outputs stay in
// [0,1], so the segmentation target is unaffected (invariance).
// ---------------------------------------------------------------------------

enum class PhotoKind : int {
  contrast = 0,
  brightness,
  color,
  sharpness,
  gaussian_noise,
  posterize,
  solarize
};
constexpr int kNumPhotoKinds = 7;

struct PhotometricOp {
  PhotoKind kind = PhotoKind::contrast;
  double magnitude = 1.0;
  uint64_t noise_seed = 0;  // used by gaussian_noise only
};

struct StrongAugPlan {
  std::array<PhotometricOp, 3> ops;
};

struct PhotoRanges {
  double contrast_min = 0.6, contrast_max = 1.6;
  double brightness_min = -0.3, brightness_max = 0.3;
  double color_min = 0.7, color_max = 1.3;
  double sharpness_min = 0.0, sharpness_max = 2.0;
  double noise_sigma_min = 0.0, noise_sigma_max = 0.08;
  int posterize_bits_min = 3, posterize_bits_max = 6;
  double solarize_min = 0.5, solarize_max = 1.0;
};

// Builds an op at a given quantile of its magnitude range (0.5 = midpoint).
PhotometricOp make_photometric_op(PhotoKind kind, double quantile, const PhotoRanges& ranges,
                                  uint64_t noise_seed = 0);

StrongAugPlan sample_strong_init(const PhotoRanges& ranges, Rng& rng);

template <typename S>
Tensor<S> apply_photometric_op(const PhotometricOp& op, const Tensor<S>& x);

template <typename S>
Tensor<S> apply_photometric(const StrongAugPlan& plan, const Tensor<S>& x);

std::string photo_kind_name(PhotoKind kind);
PhotoKind photo_kind_from_name(const std::string& name);
std::string describe(const StrongAugPlan& plan);

}  // namespace semiseg
