#include "semiseg/augment.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace semiseg {

namespace {

// Bilinear sample with coordinates clamped into the window
// [wy, wy+wh-1] x [wx, wx+ww-1] of the plane.
template <typename S>
double bilinear_window(const S* plane, int stride, int wy, int wx, int wh, int ww, double y,
                       double x) {
  y = std::min(std::max(y, static_cast<double>(wy)), static_cast<double>(wy + wh - 1));
  x = std::min(std::max(x, static_cast<double>(wx)), static_cast<double>(wx + ww - 1));
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, wy + wh - 1);
  const int x1 = std::min(x0 + 1, wx + ww - 1);
  const double dy = y - y0, dx = x - x0;
  const double v00 = plane[static_cast<size_t>(y0) * stride + x0];
  const double v01 = plane[static_cast<size_t>(y0) * stride + x1];
  const double v10 = plane[static_cast<size_t>(y1) * stride + x0];
  const double v11 = plane[static_cast<size_t>(y1) * stride + x1];
  return (1 - dy) * ((1 - dx) * v00 + dx * v01) + dy * ((1 - dx) * v10 + dx * v11);
}

void check_crop(const CropRect& r, int h, int w) {
  if (r.h < 1 || r.w < 1 || r.y < 0 || r.x < 0 || r.y + r.h > h || r.x + r.w > w)
    throw std::invalid_argument("crop rectangle out of bounds");
}

}  // namespace

bool exactly_invertible(SpatialKind kind) { return kind != SpatialKind::crop_resize; }

SpatialTransform sample_weak(const WeakAugConfig& cfg, int h, int w, Rng& rng) {
  if (cfg.kinds.empty()) return {SpatialKind::identity, {}};
  SpatialTransform t;
  t.kind = cfg.kinds[static_cast<size_t>(uniform_int(rng, 0, static_cast<int>(cfg.kinds.size()) - 1))];
  if (t.kind == SpatialKind::crop_resize) {
    const double fy = uniform_real(rng, cfg.crop_min_axis_frac, 1.0);
    const double fx = uniform_real(rng, cfg.crop_min_axis_frac, 1.0);
    // ceil keeps the sampled area bound after integer rounding
    t.crop.h = std::min(h, static_cast<int>(std::ceil(fy * h)));
    t.crop.w = std::min(w, static_cast<int>(std::ceil(fx * w)));
    t.crop.y = uniform_int(rng, 0, h - t.crop.h);
    t.crop.x = uniform_int(rng, 0, w - t.crop.w);
  }
  return t;
}

template <typename S>
Tensor<S> apply_spatial(const SpatialTransform& t, const Tensor<S>& x) {
  switch (t.kind) {
    case SpatialKind::identity:
      return x;
    case SpatialKind::hflip: {
      Tensor<S> out(x.c, x.h, x.w);
      for (int ci = 0; ci < x.c; ++ci)
        for (int y = 0; y < x.h; ++y)
          for (int xx = 0; xx < x.w; ++xx) out.at(ci, y, xx) = x.at(ci, y, x.w - 1 - xx);
      return out;
    }
    case SpatialKind::vflip: {
      Tensor<S> out(x.c, x.h, x.w);
      for (int ci = 0; ci < x.c; ++ci)
        for (int y = 0; y < x.h; ++y)
          for (int xx = 0; xx < x.w; ++xx) out.at(ci, y, xx) = x.at(ci, x.h - 1 - y, xx);
      return out;
    }
    case SpatialKind::rot90: {  // 90 degrees counter-clockwise
      Tensor<S> out(x.c, x.w, x.h);
      for (int ci = 0; ci < x.c; ++ci)
        for (int y = 0; y < out.h; ++y)
          for (int xx = 0; xx < out.w; ++xx) out.at(ci, y, xx) = x.at(ci, xx, x.w - 1 - y);
      return out;
    }
    case SpatialKind::rot180: {
      Tensor<S> out(x.c, x.h, x.w);
      for (int ci = 0; ci < x.c; ++ci)
        for (int y = 0; y < x.h; ++y)
          for (int xx = 0; xx < x.w; ++xx)
            out.at(ci, y, xx) = x.at(ci, x.h - 1 - y, x.w - 1 - xx);
      return out;
    }
    case SpatialKind::rot270: {
      Tensor<S> out(x.c, x.w, x.h);
      for (int ci = 0; ci < x.c; ++ci)
        for (int y = 0; y < out.h; ++y)
          for (int xx = 0; xx < out.w; ++xx) out.at(ci, y, xx) = x.at(ci, x.h - 1 - xx, y);
      return out;
    }
    case SpatialKind::crop_resize: {
      check_crop(t.crop, x.h, x.w);
      Tensor<S> out(x.c, x.h, x.w);
      const double sy = static_cast<double>(t.crop.h) / x.h;
      const double sx = static_cast<double>(t.crop.w) / x.w;
      for (int ci = 0; ci < x.c; ++ci) {
        const S* plane = x.plane(ci);
        for (int y = 0; y < x.h; ++y) {
          const double src_y = (y + 0.5) * sy - 0.5 + t.crop.y;
          for (int xx = 0; xx < x.w; ++xx) {
            const double src_x = (xx + 0.5) * sx - 0.5 + t.crop.x;
            out.at(ci, y, xx) = static_cast<S>(bilinear_window(
                plane, x.w, t.crop.y, t.crop.x, t.crop.h, t.crop.w, src_y, src_x));
          }
        }
      }
      return out;
    }
  }
  throw std::logic_error("unreachable");
}

template <typename S>
std::pair<Tensor<S>, Mask> invert_spatial(const SpatialTransform& t, const Tensor<S>& y) {
  switch (t.kind) {
    case SpatialKind::identity:
      return {y, Mask(y.h, y.w, true)};
    case SpatialKind::hflip:
    case SpatialKind::vflip:
    case SpatialKind::rot180:
      return {apply_spatial(t, y), Mask(y.h, y.w, true)};
    case SpatialKind::rot90:
      return {apply_spatial({SpatialKind::rot270, {}}, y), Mask(y.w, y.h, true)};
    case SpatialKind::rot270:
      return {apply_spatial({SpatialKind::rot90, {}}, y), Mask(y.w, y.h, true)};
    case SpatialKind::crop_resize: {
      check_crop(t.crop, y.h, y.w);
      Tensor<S> out(y.c, y.h, y.w, S(0));
      Mask mask(y.h, y.w, false);
      const double sy = static_cast<double>(y.h) / t.crop.h;
      const double sx = static_cast<double>(y.w) / t.crop.w;
      for (int ci = 0; ci < y.c; ++ci) {
        const S* plane = y.plane(ci);
        for (int yy = t.crop.y; yy < t.crop.y + t.crop.h; ++yy) {
          const double src_y = (yy - t.crop.y + 0.5) * sy - 0.5;
          for (int xx = t.crop.x; xx < t.crop.x + t.crop.w; ++xx) {
            const double src_x = (xx - t.crop.x + 0.5) * sx - 0.5;
            out.at(ci, yy, xx) =
                static_cast<S>(bilinear_window(plane, y.w, 0, 0, y.h, y.w, src_y, src_x));
            if (ci == 0) mask.set(yy, xx, true);
          }
        }
      }
      return {std::move(out), std::move(mask)};
    }
  }
  throw std::logic_error("unreachable");
}

std::string spatial_kind_name(SpatialKind kind) {
  switch (kind) {
    case SpatialKind::hflip: return "hflip";
    case SpatialKind::vflip: return "vflip";
    case SpatialKind::rot90: return "rot90";
    case SpatialKind::rot180: return "rot180";
    case SpatialKind::rot270: return "rot270";
    case SpatialKind::crop_resize: return "crop-resize";
    case SpatialKind::identity: return "identity";
  }
  return "?";
}

SpatialKind spatial_kind_from_name(const std::string& name) {
  for (SpatialKind k : {SpatialKind::hflip, SpatialKind::vflip, SpatialKind::rot90,
                        SpatialKind::rot180, SpatialKind::rot270, SpatialKind::crop_resize,
                        SpatialKind::identity})
    if (spatial_kind_name(k) == name) return k;
  throw std::invalid_argument("unknown spatial transform kind: " + name);
}

std::string describe(const SpatialTransform& t) {
  std::ostringstream os;
  os << spatial_kind_name(t.kind);
  if (t.kind == SpatialKind::crop_resize)
    os << "(y=" << t.crop.y << ",x=" << t.crop.x << ",h=" << t.crop.h << ",w=" << t.crop.w << ")";
  return os.str();
}

// ---------------------------------------------------------------------------
// Photometric ops
// ---------------------------------------------------------------------------

namespace {

template <typename S>
double luma(const Tensor<S>& x, int y, int xx) {
  return 0.299 * x.at(0, y, xx) + 0.587 * x.at(1, y, xx) + 0.114 * x.at(2, y, xx);
}

template <typename S>
void clamp_all(Tensor<S>& x) {
  for (S& v : x.v) v = clamp01(v);
}

}  // namespace

PhotometricOp make_photometric_op(PhotoKind kind, double quantile, const PhotoRanges& r,
                                  uint64_t noise_seed) {
  PhotometricOp op;
  op.kind = kind;
  op.noise_seed = noise_seed;
  auto lerp = [quantile](double lo, double hi) { return lo + quantile * (hi - lo); };
  switch (kind) {
    case PhotoKind::contrast: op.magnitude = lerp(r.contrast_min, r.contrast_max); break;
    case PhotoKind::brightness: op.magnitude = lerp(r.brightness_min, r.brightness_max); break;
    case PhotoKind::color: op.magnitude = lerp(r.color_min, r.color_max); break;
    case PhotoKind::sharpness: op.magnitude = lerp(r.sharpness_min, r.sharpness_max); break;
    case PhotoKind::gaussian_noise: op.magnitude = lerp(r.noise_sigma_min, r.noise_sigma_max); break;
    case PhotoKind::posterize: {
      const int span = r.posterize_bits_max - r.posterize_bits_min + 1;
      int bits = r.posterize_bits_min + static_cast<int>(quantile * span);
      op.magnitude = std::min(bits, r.posterize_bits_max);
      break;
    }
    case PhotoKind::solarize: op.magnitude = lerp(r.solarize_min, r.solarize_max); break;
  }
  return op;
}

StrongAugPlan sample_strong_init(const PhotoRanges& ranges, Rng& rng) {
  // Three distinct kinds via a partial Fisher-Yates shuffle.
  std::array<int, kNumPhotoKinds> kinds{};
  for (int i = 0; i < kNumPhotoKinds; ++i) kinds[i] = i;
  StrongAugPlan plan;
  for (int i = 0; i < 3; ++i) {
    const int j = uniform_int(rng, i, kNumPhotoKinds - 1);
    std::swap(kinds[i], kinds[j]);
    const auto kind = static_cast<PhotoKind>(kinds[i]);
    const double q = canonical(rng);
    const uint64_t seed = (kind == PhotoKind::gaussian_noise) ? rng() : 0;
    plan.ops[i] = make_photometric_op(kind, q, ranges, seed);
  }
  return plan;
}

template <typename S>
Tensor<S> apply_photometric_op(const PhotometricOp& op, const Tensor<S>& x) {
  if (x.c != 3) throw std::invalid_argument("photometric ops expect a 3-channel image");
  Tensor<S> out = x;
  switch (op.kind) {
    case PhotoKind::contrast: {
      if (op.magnitude == 1.0) return out;
      double mean = 0;
      for (int y = 0; y < x.h; ++y)
        for (int xx = 0; xx < x.w; ++xx) mean += luma(x, y, xx);
      mean /= static_cast<double>(x.h) * x.w;
      for (size_t i = 0; i < out.v.size(); ++i)
        out.v[i] = static_cast<S>(mean + op.magnitude * (x.v[i] - mean));
      break;
    }
    case PhotoKind::brightness: {
      if (op.magnitude == 0.0) return out;
      for (S& v : out.v) v = static_cast<S>(v + op.magnitude);
      break;
    }
    case PhotoKind::color: {
      if (op.magnitude == 1.0) return out;
      for (int y = 0; y < x.h; ++y)
        for (int xx = 0; xx < x.w; ++xx) {
          const double g = luma(x, y, xx);
          for (int ci = 0; ci < 3; ++ci)
            out.at(ci, y, xx) = static_cast<S>(g + op.magnitude * (x.at(ci, y, xx) - g));
        }
      break;
    }
    case PhotoKind::sharpness: {
      if (op.magnitude == 1.0) return out;
      // 3x3 smoothing kernel (center weight 5), replicated borders.
      for (int ci = 0; ci < 3; ++ci)
        for (int y = 0; y < x.h; ++y)
          for (int xx = 0; xx < x.w; ++xx) {
            double acc = 0;
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const int yy = std::clamp(y + dy, 0, x.h - 1);
                const int xc = std::clamp(xx + dx, 0, x.w - 1);
                acc += ((dy == 0 && dx == 0) ? 5.0 : 1.0) * x.at(ci, yy, xc);
              }
            const double blur = acc / 13.0;
            out.at(ci, y, xx) = static_cast<S>(blur + op.magnitude * (x.at(ci, y, xx) - blur));
          }
      break;
    }
    case PhotoKind::gaussian_noise: {
      if (op.magnitude == 0.0) return out;
      Rng rng(op.noise_seed);
      for (S& v : out.v) v = static_cast<S>(v + normal(rng, 0.0, op.magnitude));
      break;
    }
    case PhotoKind::posterize: {
      const double levels = std::pow(2.0, std::round(op.magnitude)) - 1.0;
      for (S& v : out.v) v = static_cast<S>(std::round(static_cast<double>(v) * levels) / levels);
      break;
    }
    case PhotoKind::solarize: {
      for (S& v : out.v)
        if (v >= static_cast<S>(op.magnitude)) v = S(1) - v;
      break;
    }
  }
  clamp_all(out);
  return out;
}

template <typename S>
Tensor<S> apply_photometric(const StrongAugPlan& plan, const Tensor<S>& x) {
  Tensor<S> out = x;
  for (const auto& op : plan.ops) out = apply_photometric_op(op, out);
  return out;
}

std::string photo_kind_name(PhotoKind kind) {
  switch (kind) {
    case PhotoKind::contrast: return "contrast";
    case PhotoKind::brightness: return "brightness";
    case PhotoKind::color: return "color";
    case PhotoKind::sharpness: return "sharpness";
    case PhotoKind::gaussian_noise: return "gaussian-noise";
    case PhotoKind::posterize: return "posterize";
    case PhotoKind::solarize: return "solarize";
  }
  return "?";
}

PhotoKind photo_kind_from_name(const std::string& name) {
  for (int i = 0; i < kNumPhotoKinds; ++i)
    if (photo_kind_name(static_cast<PhotoKind>(i)) == name) return static_cast<PhotoKind>(i);
  throw std::invalid_argument("unknown photometric op kind: " + name);
}

std::string describe(const StrongAugPlan& plan) {
  std::ostringstream os;
  for (size_t i = 0; i < plan.ops.size(); ++i) {
    if (i) os << "+";
    os << photo_kind_name(plan.ops[i].kind) << "(" << plan.ops[i].magnitude << ")";
  }
  return os.str();
}

#define SEMISEG_INSTANTIATE(S)                                                            \
  template Tensor<S> apply_spatial<S>(const SpatialTransform&, const Tensor<S>&);         \
  template std::pair<Tensor<S>, Mask> invert_spatial<S>(const SpatialTransform&,          \
                                                        const Tensor<S>&);               \
  template Tensor<S> apply_photometric_op<S>(const PhotometricOp&, const Tensor<S>&);     \
  template Tensor<S> apply_photometric<S>(const StrongAugPlan&, const Tensor<S>&);

SEMISEG_INSTANTIATE(float)
SEMISEG_INSTANTIATE(double)
#undef SEMISEG_INSTANTIATE

}  // namespace semiseg
