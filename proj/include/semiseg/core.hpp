#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace semiseg {

using Rng = std::mt19937_64;

// Dense (channels, height, width) array, row-major within each channel.
// Used for images (c=3, values in [0,1]), logit maps and probability maps
// (c = num_classes).
template <typename S>
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<S> v;

  Tensor() = default;
  Tensor(int c_, int h_, int w_, S fill = S(0))
      : c(c_), h(h_), w(w_), v(static_cast<size_t>(c_) * h_ * w_, fill) {}

  size_t size() const { return v.size(); }
  S* data() { return v.data(); }
  const S* data() const { return v.data(); }
  S* plane(int ci) { return v.data() + static_cast<size_t>(ci) * h * w; }
  const S* plane(int ci) const { return v.data() + static_cast<size_t>(ci) * h * w; }

  S& at(int ci, int y, int x) { return v[(static_cast<size_t>(ci) * h + y) * w + x]; }
  S at(int ci, int y, int x) const { return v[(static_cast<size_t>(ci) * h + y) * w + x]; }

  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }

  void fill(S value) { std::fill(v.begin(), v.end(), value); }

  bool all_finite() const {
    for (S x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out(c, h, w);
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<T>(v[i]);
    return out;
  }
};

// Boolean per-pixel mask in original-image geometry.
struct Mask {
  int h = 0, w = 0;
  std::vector<uint8_t> v;

  Mask() = default;
  Mask(int h_, int w_, bool fill = false)
      : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill ? 1 : 0) {}

  bool at(int y, int x) const { return v[static_cast<size_t>(y) * w + x] != 0; }
  void set(int y, int x, bool b) { v[static_cast<size_t>(y) * w + x] = b ? 1 : 0; }
  size_t count() const {
    size_t n = 0;
    for (uint8_t b : v) n += b;
    return n;
  }
  bool all() const { return count() == v.size(); }
  bool none() const { return count() == 0; }
};

// Integer label map; values in {0, ..., num_classes-1}, class 0 = background.
struct SegMask {
  int h = 0, w = 0;
  int num_classes = 2;
  std::vector<int32_t> labels;

  SegMask() = default;
  SegMask(int h_, int w_, int num_classes_ = 2)
      : h(h_), w(w_), num_classes(num_classes_), labels(static_cast<size_t>(h_) * w_, 0) {}

  int32_t& at(int y, int x) { return labels[static_cast<size_t>(y) * w + x]; }
  int32_t at(int y, int x) const { return labels[static_cast<size_t>(y) * w + x]; }

  size_t foreground_count() const {
    size_t n = 0;
    for (int32_t l : labels) n += (l > 0);
    return n;
  }

  void validate() const {
    for (int32_t l : labels)
      if (l < 0 || l >= num_classes)
        throw std::invalid_argument("SegMask: label " + std::to_string(l) +
                                    " out of range for " + std::to_string(num_classes) +
                                    " classes");
  }
};

template <typename S>
inline S clamp01(S x) {
  return x < S(0) ? S(0) : (x > S(1) ? S(1) : x);
}

// Draws implemented directly on the raw generator so that streams are
// reproducible independent of the standard library's distribution internals.
inline double canonical(Rng& rng) {  // [0, 1), 53-bit resolution
  return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
}

inline double uniform_real(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * canonical(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) {  // inclusive bounds
  const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  return lo + static_cast<int>(rng() % span);
}

inline double normal(Rng& rng, double mean = 0.0, double stddev = 1.0) {
  // Box-Muller, fixed two draws per sample.
  const double u1 = std::max(canonical(rng), 1e-300);
  const double u2 = canonical(rng);
  return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

// Argmax over the channel dimension at one pixel; ties resolve to the lowest index.
template <typename S>
inline int argmax_channel(const Tensor<S>& t, int y, int x) {
  int best = 0;
  S best_v = t.at(0, y, x);
  for (int ci = 1; ci < t.c; ++ci) {
    S val = t.at(ci, y, x);
    if (val > best_v) {
      best_v = val;
      best = ci;
    }
  }
  return best;
}

template <typename S>
inline SegMask argmax_mask(const Tensor<S>& logits, int num_classes) {
  SegMask m(logits.h, logits.w, num_classes);
  for (int y = 0; y < logits.h; ++y)
    for (int x = 0; x < logits.w; ++x) m.at(y, x) = argmax_channel(logits, y, x);
  return m;
}

}  // namespace semiseg
