#include <doctest.h>

#include "semiseg/losses.hpp"
#include "semiseg/model.hpp"
#include "test_util.hpp"

using namespace semiseg;
using testutil::max_abs_diff;
using testutil::uniform_random_tensor;

TEST_CASE("forward: output spatial shape equals input, channel count equals classes") {
  ModelConfig cfg;  // depth 3, base 16: the desk default
  const UNet<float> net(cfg, 1);
  const auto x = uniform_random_tensor<float>(3, 64, 64, 2);
  const auto logits = net.forward(x);
  CHECK(logits.c == cfg.num_classes);
  CHECK(logits.h == 64);
  CHECK(logits.w == 64);
  CHECK(logits.all_finite());
}

TEST_CASE("depth 6 builds and keeps the shape contract") {
  ModelConfig cfg;
  cfg.depth = 6;
  cfg.base_channels = 4;  // keep the test light
  const UNet<float> net(cfg, 3);
  const auto x = uniform_random_tensor<float>(3, 64, 64, 4);
  const auto logits = net.forward(x);
  CHECK(logits.c == 2);
  CHECK(logits.h == 64);
  CHECK(logits.w == 64);
}

TEST_CASE("same seed builds identical parameters, different seeds differ") {
  ModelConfig cfg;
  const UNet<float> a(cfg, 42), b(cfg, 42), c(cfg, 43);
  CHECK(a.params() == b.params());
  CHECK(a.params() != c.params());
}

TEST_CASE("repeated forward passes are bit-identical") {
  ModelConfig cfg;
  cfg.depth = 2;
  const UNet<float> net(cfg, 5);
  const auto x = uniform_random_tensor<float>(3, 32, 32, 6);
  const auto a = net.forward(x);
  const auto b = net.forward(x);
  CHECK(a.v == b.v);
}

TEST_CASE("input dims not divisible by 2^depth are rejected") {
  ModelConfig cfg;  // depth 3
  const UNet<float> net(cfg, 1);
  const auto x = uniform_random_tensor<float>(3, 20, 20, 7);
  CHECK_THROWS(net.forward(x));
  CHECK_THROWS(net.forward(uniform_random_tensor<float>(1, 64, 64, 8)));
}

TEST_CASE("invalid model configs are rejected") {
  ModelConfig cfg;
  cfg.depth = 1;
  CHECK_THROWS(UNet<float>(cfg, 1));
  cfg.depth = 3;
  cfg.num_classes = 1;
  CHECK_THROWS(UNet<float>(cfg, 1));
}

TEST_CASE("input gradient matches central finite differences on a depth-2 model") {
  ModelConfig cfg;
  cfg.depth = 2;
  cfg.base_channels = 6;
  cfg.norm_groups = 2;
  const UNet<double> net(cfg, 11);
  auto x = uniform_random_tensor<double>(3, 16, 16, 12, 0.1, 0.9);
  SegMask y(16, 16);
  for (int yy = 0; yy < 16; ++yy)
    for (int xx = 0; xx < 16; ++xx) y.at(yy, xx) = (yy / 4 + xx / 4) % 2;

  auto loss_of = [&](const Tensor<double>& input) {
    return supervised_item_loss<double>(net.forward(input), y, 1.0, nullptr);
  };

  UNetTrace<double> tr;
  const auto logits = net.forward(x, tr);
  Tensor<double> dlogits(logits.c, logits.h, logits.w, 0.0);
  supervised_item_loss(logits, y, 1.0, &dlogits);
  Tensor<double> analytic(3, 16, 16, 0.0);
  net.backward(tr, dlogits, nullptr, &analytic);

  // spot-check a pseudo-random subset of pixels; full FD over 768 inputs
  // costs ~1.5k forwards
  Rng pick(99);
  const double h = 1e-5;
  double num = 0, den = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const size_t j = pick() % x.v.size();
    const double orig = x.v[j];
    x.v[j] = orig + h;
    const double fp = loss_of(x);
    x.v[j] = orig - h;
    const double fm = loss_of(x);
    x.v[j] = orig;
    const double fd = (fp - fm) / (2 * h);
    num += (fd - analytic.v[j]) * (fd - analytic.v[j]);
    den += fd * fd;
  }
  CHECK(std::sqrt(num) / std::max(1e-30, std::sqrt(den)) < 1e-3);
}

TEST_CASE("parameter gradients are finite and nonzero after a backward pass") {
  ModelConfig cfg;
  cfg.depth = 2;
  cfg.base_channels = 8;
  const UNet<float> net(cfg, 21);
  const auto x = uniform_random_tensor<float>(3, 16, 16, 22);
  UNetTrace<float> tr;
  const auto logits = net.forward(x, tr);
  Tensor<float> dlogits(logits.c, logits.h, logits.w, 0.01f);
  std::vector<float> grad(net.param_count(), 0.0f);
  net.backward(tr, dlogits, grad.data(), nullptr);
  double norm = 0;
  for (float g : grad) {
    CHECK(std::isfinite(g));
    norm += static_cast<double>(g) * g;
  }
  CHECK(norm > 0.0);
}
