#include <doctest.h>

#include <functional>

#include "semiseg/losses.hpp"
#include "test_util.hpp"

using namespace semiseg;
using testutil::uniform_random_tensor;

namespace {

// central finite differences of a scalar function of the logits
Tensor<double> fd_gradient(const std::function<double(const Tensor<double>&)>& f,
                           Tensor<double> logits, double h = 1e-5) {
  Tensor<double> g(logits.c, logits.h, logits.w);
  for (size_t i = 0; i < logits.v.size(); ++i) {
    const double orig = logits.v[i];
    logits.v[i] = orig + h;
    const double fp = f(logits);
    logits.v[i] = orig - h;
    const double fm = f(logits);
    logits.v[i] = orig;
    g.v[i] = (fp - fm) / (2 * h);
  }
  return g;
}

double rel_error(const Tensor<double>& a, const Tensor<double>& b) {
  double num = 0, den = 0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    num += (a.v[i] - b.v[i]) * (a.v[i] - b.v[i]);
    den += b.v[i] * b.v[i];
  }
  return std::sqrt(num) / std::max(1e-30, std::sqrt(den));
}

SegMask checker_mask(int h, int w, int num_classes = 2) {
  SegMask m(h, w, num_classes);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.at(y, x) = (y + x) % num_classes;
  return m;
}

Tensor<double> one_hot_probs(const SegMask& m) {
  Tensor<double> p(m.num_classes, m.h, m.w, 0.0);
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) p.at(m.at(y, x), y, x) = 1.0;
  return p;
}

}  // namespace

TEST_CASE("dice_loss: perfect one-hot prediction scores zero") {
  const auto y = checker_mask(4, 4);
  CHECK(dice_loss(one_hot_probs(y), y, 0.0) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("dice_loss: disjoint equal-area masks approach one") {
  SegMask y(2, 4);
  y.at(0, 0) = y.at(0, 1) = 1;  // ground truth: two left pixels
  Tensor<double> p(2, 2, 4, 0.0);
  for (int x = 0; x < 4; ++x) {
    p.at(1, 1, x) = (x >= 2) ? 1.0 : 0.0;  // prediction: two right pixels (disjoint)
    p.at(0, 1, x) = (x >= 2) ? 0.0 : 1.0;
    p.at(0, 0, x) = 1.0;
  }
  p.at(0, 1, 2) = 0.0;
  p.at(0, 1, 3) = 0.0;
  const double smooth = 1.0;
  // a = 2 foreground pixels each side: 1 - s/(2a + s)
  CHECK(dice_loss(p, y, smooth) == doctest::Approx(1.0 - smooth / (4.0 + smooth)));
  CHECK(dice_loss(p, y, smooth) > 0.7);
}

TEST_CASE("dice_loss: 2x2 hand example equals 0.5") {
  // gt foreground = 2 px; prediction foreground = 2 px; overlap 1
  SegMask y(2, 2);
  y.at(0, 0) = 1;
  y.at(0, 1) = 1;
  Tensor<double> p(2, 2, 2, 0.0);
  p.at(1, 0, 0) = 1.0;  // overlaps
  p.at(1, 1, 0) = 1.0;  // misses
  p.at(0, 0, 1) = 1.0;
  p.at(0, 1, 1) = 1.0;
  CHECK(dice_loss(p, y, 0.0) == doctest::Approx(0.5));
}

TEST_CASE("dice_loss stays within [0, 1] on random inputs") {
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const auto logits = uniform_random_tensor<double>(3, 4, 4, 600 + trial, -5.0, 5.0);
    const auto probs = softmax_channels(logits);
    SegMask y(4, 4, 3);
    for (auto& l : y.labels) l = uniform_int(rng, 0, 2);
    const double d = dice_loss(probs, y, 1.0);
    CHECK(d >= 0.0);
    CHECK(d <= 1.0);
  }
}

TEST_CASE("pixel_ce: exact one-hot match gives ~0, uniform gives ln 2") {
  Tensor<double> pred(2, 1, 2);
  pred.at(0, 0, 0) = 1.0;
  pred.at(1, 0, 0) = 0.0;
  pred.at(0, 0, 1) = 0.5;
  pred.at(1, 0, 1) = 0.5;
  Tensor<double> target(2, 1, 2, 0.0);
  target.at(0, 0, 0) = 1.0;
  target.at(0, 0, 1) = 1.0;
  const auto ce = pixel_ce(pred, target);
  CHECK(std::abs(ce.at(0, 0, 0)) < 1e-9);
  CHECK(ce.at(0, 0, 1) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  CHECK(ce.at(0, 0, 1) >= 0.0);
}

TEST_CASE("pixel_ce: self-entropy of the sharpened pair [0.9412, 0.0588]") {
  // independent oracle: -sum p log p computed inline
  const std::vector<double> p = sharpen({0.8, 0.2}, 0.5);
  double entropy = 0;
  for (double v : p) entropy -= v * std::log(v);
  CHECK(entropy == doctest::Approx(0.2237).epsilon(1e-3));

  Tensor<double> pred(2, 1, 1), target(2, 1, 1);
  pred.at(0, 0, 0) = target.at(0, 0, 0) = p[0];
  pred.at(1, 0, 0) = target.at(1, 0, 0) = p[1];
  CHECK(pixel_ce(pred, target).at(0, 0, 0) == doctest::Approx(entropy).epsilon(1e-9));
}

TEST_CASE("supervised_loss: batch mean and composition of the two terms") {
  const auto y = checker_mask(2, 2);
  const auto logits_a = uniform_random_tensor<double>(2, 2, 2, 71, -2.0, 2.0);
  const auto logits_b = uniform_random_tensor<double>(2, 2, 2, 72, -2.0, 2.0);
  const double smooth = 1.0;
  const double a = supervised_item_loss<double>(logits_a, y, smooth, nullptr);
  const double b = supervised_item_loss<double>(logits_b, y, smooth, nullptr);
  CHECK(supervised_loss<double>({logits_a, logits_b}, {y, y}, smooth) ==
        doctest::Approx((a + b) / 2.0).epsilon(1e-12));

  // item loss = dice + mean pixel CE, each computed independently here
  const auto probs = softmax_channels(logits_a);
  double ce_mean = 0;
  const auto ce = pixel_ce(probs, y);
  for (double v : ce.v) ce_mean += v;
  ce_mean /= ce.v.size();
  CHECK(a == doctest::Approx(dice_loss(probs, y, smooth) + ce_mean).epsilon(1e-12));
}

TEST_CASE("supervised_loss: perfect predictions give ~0 and empty batches throw") {
  SegMask y(2, 2);
  y.at(0, 0) = 1;
  Tensor<double> logits(2, 2, 2, 0.0);
  for (int yy = 0; yy < 2; ++yy)
    for (int xx = 0; xx < 2; ++xx) {
      logits.at(y.at(yy, xx), yy, xx) = 40.0;
      logits.at(1 - y.at(yy, xx), yy, xx) = -40.0;
    }
  CHECK(supervised_item_loss<double>(logits, y, 0.0, nullptr) < 1e-6);
  CHECK_THROWS(supervised_loss<double>({}, {}, 1.0));
}

TEST_CASE("unsupervised_loss: masked mean over two confident pixels") {
  // two confident pixels with CE 0.2 and 0.6 average to 0.4; realized by
  // constructing targets t = ce / log(1/p) scaled one-hot... simpler: build
  // pixels whose CE values are computed by the same independent formula and
  // compare against a hand mean.
  Tensor<double> logits(2, 1, 3, 0.0);
  logits.at(0, 0, 0) = 1.3;
  logits.at(1, 0, 0) = -0.4;
  logits.at(0, 0, 1) = -0.9;
  logits.at(1, 0, 1) = 0.7;
  logits.at(0, 0, 2) = 5.0;  // unconfident-masked pixel, value irrelevant

  PseudoLabel<double> pl;
  pl.target = Tensor<double>(2, 1, 3, 0.0);
  pl.target.at(0, 0, 0) = 1.0;
  pl.target.at(1, 0, 1) = 1.0;
  pl.target.at(0, 0, 2) = 1.0;
  pl.confidence = Mask(1, 3, true);
  pl.confidence.set(0, 2, false);

  const auto probs = softmax_channels(logits);
  const double ce0 = -std::log(probs.at(0, 0, 0) + 1e-12);
  const double ce1 = -std::log(probs.at(1, 0, 1) + 1e-12);
  CHECK(unsupervised_item_loss<double>(logits, pl, nullptr) ==
        doctest::Approx((ce0 + ce1) / 2.0).epsilon(1e-12));
}

TEST_CASE("unsupervised_loss: empty mask contributes zero loss and zero gradient") {
  const auto logits = uniform_random_tensor<double>(2, 4, 4, 5, -2.0, 2.0);
  PseudoLabel<double> pl;
  pl.target = softmax_channels(logits);
  pl.confidence = Mask(4, 4, false);
  Tensor<double> grad(2, 4, 4, 0.0);
  CHECK(unsupervised_item_loss(logits, pl, &grad) == 0.0);
  for (double g : grad.v) CHECK(g == 0.0);

  // all-empty batch averages to zero and a batch mixes zeros in
  const double l = unsupervised_item_loss<double>(logits, pl, nullptr);
  CHECK(unsupervised_loss<double>({logits, logits}, {pl, pl}) == l);
}

TEST_CASE("unsupervised_loss: perfect match on the confident pixel gives ~0") {
  Tensor<double> logits(2, 1, 1);
  logits.at(0, 0, 0) = 45.0;
  logits.at(1, 0, 0) = -45.0;
  PseudoLabel<double> pl;
  pl.target = Tensor<double>(2, 1, 1, 0.0);
  pl.target.at(0, 0, 0) = 1.0;
  pl.confidence = Mask(1, 1, true);
  CHECK(unsupervised_item_loss<double>(logits, pl, nullptr) < 1e-9);
}

TEST_CASE("gradients of the supervised loss match finite differences (4x4)") {
  const auto y = checker_mask(4, 4);
  for (int trial = 0; trial < 5; ++trial) {
    const auto logits = uniform_random_tensor<double>(2, 4, 4, 810 + trial, -2.0, 2.0);
    Tensor<double> analytic(2, 4, 4, 0.0);
    supervised_item_loss(logits, y, 1.0, &analytic);
    const auto numeric = fd_gradient(
        [&y](const Tensor<double>& l) { return supervised_item_loss<double>(l, y, 1.0, nullptr); },
        logits);
    CHECK(rel_error(analytic, numeric) < 1e-3);
  }
}

TEST_CASE("gradients of the unsupervised loss match finite differences (4x4)") {
  Rng rng(4242);
  for (int trial = 0; trial < 5; ++trial) {
    const auto weak_logits = uniform_random_tensor<double>(2, 4, 4, 550 + trial, -3.0, 3.0);
    SharpenConfig cfg;
    cfg.threshold = 0.55;  // keep a mix of confident and unconfident pixels
    const auto pl = make_pseudo_label(weak_logits, {SpatialKind::identity, {}}, cfg);
    const auto logits = uniform_random_tensor<double>(2, 4, 4, 660 + trial, -2.0, 2.0);
    Tensor<double> analytic(2, 4, 4, 0.0);
    unsupervised_item_loss(logits, pl, &analytic);
    const auto numeric = fd_gradient(
        [&pl](const Tensor<double>& l) { return unsupervised_item_loss<double>(l, pl, nullptr); },
        logits);
    CHECK(rel_error(analytic, numeric) < 1e-3);
  }
}

TEST_CASE("masked-loss locality: logits outside N_v cannot change the loss") {
  const auto weak_logits = uniform_random_tensor<double>(2, 4, 4, 31, -3.0, 3.0);
  SharpenConfig cfg;
  cfg.threshold = 0.6;
  const auto pl = make_pseudo_label(weak_logits, {SpatialKind::identity, {}}, cfg);
  REQUIRE(pl.confidence.count() > 0);
  REQUIRE(pl.confidence.count() < pl.confidence.v.size());

  auto logits = uniform_random_tensor<double>(2, 4, 4, 32, -2.0, 2.0);
  const double before = unsupervised_item_loss<double>(logits, pl, nullptr);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      if (!pl.confidence.at(y, x)) {
        logits.at(0, y, x) += 3.7;
        logits.at(1, y, x) -= 1.2;
      }
  CHECK(unsupervised_item_loss<double>(logits, pl, nullptr) == before);
}

TEST_CASE("rampup_weight: endpoints and midpoint") {
  LossConfig cfg;
  cfg.w_max = 2.0;
  cfg.ramp_epochs = 30;
  CHECK(rampup_weight(0, cfg) == doctest::Approx(2.0 * std::exp(-5.0)).epsilon(1e-12));
  CHECK(rampup_weight(0, cfg) <= 0.01 * cfg.w_max);
  CHECK(rampup_weight(30, cfg) == 2.0);
  CHECK(rampup_weight(100, cfg) == 2.0);
  CHECK(rampup_weight(15, cfg) == doctest::Approx(2.0 * std::exp(-1.25)).epsilon(1e-12));
}

TEST_CASE("rampup_weight: nondecreasing and bounded on the integer grid") {
  LossConfig cfg;
  cfg.w_max = 1.0;
  cfg.ramp_epochs = 23;
  double prev = -1.0;
  for (int e = 0; e <= 60; ++e) {
    const double w = rampup_weight(e, cfg);
    CHECK(w >= prev);
    CHECK(w <= cfg.w_max);
    prev = w;
  }
  CHECK_THROWS(rampup_weight(-1, cfg));
}

TEST_CASE("total_loss: composition and the plateau") {
  LossConfig cfg;
  cfg.w_max = 1.0;
  cfg.ramp_epochs = 10;
  CHECK(total_loss(0.7, 0.0, 3, cfg).total == doctest::Approx(0.7));
  CHECK(total_loss(0.5, 0.3, 10, cfg).total == doctest::Approx(0.8));
  const auto r = total_loss(0.5, 0.4, 5, cfg);
  CHECK(r.total == doctest::Approx(0.5 + std::exp(-1.25) * 0.4).epsilon(1e-12));
  CHECK(r.total == doctest::Approx(r.loss_s + r.weight * r.loss_u).epsilon(1e-9));
  CHECK(total_loss(0.5, 0.4, 5, cfg).total == doctest::Approx(0.61460).epsilon(1e-4));
  CHECK_THROWS(total_loss(std::numeric_limits<double>::infinity(), 0.0, 0, cfg));
}
