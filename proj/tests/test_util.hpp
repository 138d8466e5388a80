#pragma once

#include <cmath>
#include <random>

#include "semiseg/core.hpp"

namespace semiseg::testutil {

// Band-limited random field: a few long-wavelength cosines. Smooth enough
// that bilinear resampling round trips are tight, unlike white noise.
template <typename S>
Tensor<S> smooth_random_image(int c, int h, int w, uint64_t seed, double amplitude = 0.3,
                              double min_wavelength = 32.0) {
  Rng rng(seed);
  Tensor<S> img(c, h, w);
  for (int ci = 0; ci < c; ++ci) {
    double ak[4], uy[4], ux[4], ph[4];
    double asum = 0;
    for (int k = 0; k < 4; ++k) {
      ak[k] = uniform_real(rng, 0.2, 1.0);
      asum += ak[k];
      const double lambda = uniform_real(rng, min_wavelength, 2.0 * min_wavelength);
      const double theta = uniform_real(rng, 0.0, 6.283185307179586);
      uy[k] = std::sin(theta) / lambda;
      ux[k] = std::cos(theta) / lambda;
      ph[k] = uniform_real(rng, 0.0, 6.283185307179586);
    }
    for (int k = 0; k < 4; ++k) ak[k] *= amplitude / asum;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double v = 0.5;
        for (int k = 0; k < 4; ++k)
          v += ak[k] * std::cos(6.283185307179586 * (uy[k] * y + ux[k] * x) + ph[k]);
        img.at(ci, y, x) = static_cast<S>(v);
      }
  }
  return img;
}

template <typename S>
Tensor<S> uniform_random_tensor(int c, int h, int w, uint64_t seed, double lo = 0.0,
                                double hi = 1.0) {
  Rng rng(seed);
  Tensor<S> t(c, h, w);
  for (auto& v : t.v) v = static_cast<S>(uniform_real(rng, lo, hi));
  return t;
}

template <typename S>
double max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
  double m = 0;
  for (size_t i = 0; i < a.v.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.v[i]) - static_cast<double>(b.v[i])));
  return m;
}

}  // namespace semiseg::testutil
