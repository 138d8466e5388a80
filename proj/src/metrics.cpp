#include "semiseg/metrics.hpp"

#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace semiseg {

namespace {

void check_shapes(const SegMask& a, const SegMask& b) {
  if (a.h != b.h || a.w != b.w) throw std::invalid_argument("metric: mask shape mismatch");
}

inline bool fg(const SegMask& m, int y, int x) { return m.at(y, x) >= 1; }

}  // namespace

double dice_score(const SegMask& pred, const SegMask& gt) {
  check_shapes(pred, gt);
  size_t np = 0, ng = 0, inter = 0;
  for (size_t i = 0; i < pred.labels.size(); ++i) {
    const bool p = pred.labels[i] >= 1, g = gt.labels[i] >= 1;
    np += p;
    ng += g;
    inter += (p && g);
  }
  if (np == 0 && ng == 0) return 1.0;
  if (np == 0 || ng == 0) return 0.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

Mask boundary_mask(const SegMask& m) {
  Mask b(m.h, m.w, false);
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      if (!fg(m, y, x)) continue;
      const bool edge = (y == 0 || !fg(m, y - 1, x)) || (y == m.h - 1 || !fg(m, y + 1, x)) ||
                        (x == 0 || !fg(m, y, x - 1)) || (x == m.w - 1 || !fg(m, y, x + 1));
      b.set(y, x, edge);
    }
  return b;
}

// Meijster's two-phase algorithm; all arithmetic on int64 so the squared
// distances are exact.
std::vector<int64_t> squared_edt(const Mask& sites) {
  const int h = sites.h, w = sites.w;
  const int64_t inf = h + w;  // larger than any achievable coordinate distance
  std::vector<int64_t> g(static_cast<size_t>(h) * w);

  for (int x = 0; x < w; ++x) {
    g[x] = sites.at(0, x) ? 0 : inf;
    for (int y = 1; y < h; ++y) {
      const size_t i = static_cast<size_t>(y) * w + x;
      g[i] = sites.at(y, x) ? 0 : std::min(inf, g[i - w] + 1);
    }
    for (int y = h - 2; y >= 0; --y) {
      const size_t i = static_cast<size_t>(y) * w + x;
      if (g[i + w] + 1 < g[i]) g[i] = g[i + w] + 1;
    }
  }

  std::vector<int64_t> dt(static_cast<size_t>(h) * w);
  std::vector<int> s(w), t(w);
  auto f = [](int64_t x, int64_t i, int64_t gi) { return (x - i) * (x - i) + gi * gi; };
  auto sep = [](int64_t i, int64_t u, int64_t gi, int64_t gu) {
    return (u * u - i * i + gu * gu - gi * gi) / (2 * (u - i));
  };
  for (int y = 0; y < h; ++y) {
    const int64_t* row = g.data() + static_cast<size_t>(y) * w;
    int q = 0;
    s[0] = 0;
    t[0] = 0;
    for (int u = 1; u < w; ++u) {
      while (q >= 0 && f(t[q], s[q], row[s[q]]) > f(t[q], u, row[u])) --q;
      if (q < 0) {
        q = 0;
        s[0] = u;
        t[0] = 0;
      } else {
        const int64_t wu = 1 + sep(s[q], u, row[s[q]], row[u]);
        if (wu < w) {
          ++q;
          s[q] = u;
          t[q] = static_cast<int>(wu);
        }
      }
    }
    for (int x = w - 1; x >= 0; --x) {
      dt[static_cast<size_t>(y) * w + x] = f(x, s[q], row[s[q]]);
      if (x == t[q]) --q;
    }
  }
  return dt;
}

double nsd(const SegMask& pred, const SegMask& gt, double tol) {
  check_shapes(pred, gt);
  if (tol < 0.0) throw std::invalid_argument("nsd: tolerance must be >= 0");
  const Mask bp = boundary_mask(pred);
  const Mask bg = boundary_mask(gt);
  const size_t np = bp.count(), ng = bg.count();
  if (np == 0 && ng == 0) return 1.0;
  if (np == 0 || ng == 0) return 0.0;

  const std::vector<int64_t> dt_gt = squared_edt(bg);
  const std::vector<int64_t> dt_pred = squared_edt(bp);
  const double tol2 = tol * tol;
  size_t close_p = 0, close_g = 0;
  for (size_t i = 0; i < bp.v.size(); ++i) {
    if (bp.v[i] && static_cast<double>(dt_gt[i]) <= tol2) ++close_p;
    if (bg.v[i] && static_cast<double>(dt_pred[i]) <= tol2) ++close_g;
  }
  return static_cast<double>(close_p + close_g) / static_cast<double>(np + ng);
}

template <typename S>
EvalReport evaluate(const UNet<S>& net,
                    const std::vector<std::pair<Tensor<S>, SegMask>>& dataset, double tol) {
  if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
  EvalReport r;
  r.nsd_tolerance = tol;
  const int n = static_cast<int>(dataset.size());
  r.per_image_dice.assign(n, 0.0);
  r.per_image_nsd.assign(n, 0.0);
  std::vector<uint8_t> empty_gt(n, 0), empty_pred(n, 0);

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (int i = 0; i < n; ++i) {
    const auto& [image, gt] = dataset[i];
    const Tensor<S> logits = net.forward(image);
    const SegMask pred = argmax_mask(logits, gt.num_classes);
    r.per_image_dice[i] = dice_score(pred, gt);
    r.per_image_nsd[i] = nsd(pred, gt, tol);
    empty_gt[i] = gt.foreground_count() == 0;
    empty_pred[i] = pred.foreground_count() == 0;
  }

  for (int i = 0; i < n; ++i) {
    r.mean_dice += r.per_image_dice[i];
    r.mean_nsd += r.per_image_nsd[i];
    r.n_empty_gt += empty_gt[i];
    r.n_empty_pred += empty_pred[i];
  }
  r.mean_dice /= n;
  r.mean_nsd /= n;
  return r;
}

template EvalReport evaluate<float>(const UNet<float>&,
                                    const std::vector<std::pair<Tensor<float>, SegMask>>&,
                                    double);
template EvalReport evaluate<double>(const UNet<double>&,
                                     const std::vector<std::pair<Tensor<double>, SegMask>>&,
                                     double);

}  // namespace semiseg
