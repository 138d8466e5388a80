#include <doctest.h>

#include <map>
#include <set>

#include "semiseg/augment.hpp"
#include "test_util.hpp"

using namespace semiseg;
using testutil::max_abs_diff;
using testutil::smooth_random_image;
using testutil::uniform_random_tensor;

namespace {

const std::vector<SpatialKind> kExactKinds = {SpatialKind::hflip, SpatialKind::vflip,
                                              SpatialKind::rot90, SpatialKind::rot180,
                                              SpatialKind::rot270};

}  // namespace

TEST_CASE("sample_weak: singleton support always returns that kind") {
  WeakAugConfig cfg;
  cfg.kinds = {SpatialKind::hflip};
  Rng rng(1);
  for (int i = 0; i < 50; ++i) CHECK(sample_weak(cfg, 32, 32, rng).kind == SpatialKind::hflip);
}

TEST_CASE("sample_weak: uniform over kinds within 1/6 +- 0.02 on 10k draws") {
  WeakAugConfig cfg;  // all six kinds
  Rng rng(202);
  std::map<SpatialKind, int> counts;
  const int n = 10000;
  for (int i = 0; i < n; ++i) ++counts[sample_weak(cfg, 32, 32, rng).kind];
  CHECK(counts.size() == 6);
  for (const auto& [kind, count] : counts)
    CHECK(std::abs(count / static_cast<double>(n) - 1.0 / 6.0) <= 0.02);
}

TEST_CASE("sample_weak: crop rectangle always covers at least half the area") {
  WeakAugConfig cfg;
  cfg.kinds = {SpatialKind::crop_resize};
  Rng rng(7);
  for (int i = 0; i < 2000; ++i) {
    const auto t = sample_weak(cfg, 48, 64, rng);
    CHECK(static_cast<double>(t.crop.h) * t.crop.w >= 0.5 * 48 * 64);
    CHECK(t.crop.y + t.crop.h <= 48);
    CHECK(t.crop.x + t.crop.w <= 64);
  }
}

TEST_CASE("apply_spatial: hflip reverses columns") {
  Tensor<double> img(1, 2, 4);
  for (int x = 0; x < 4; ++x) {
    img.at(0, 0, x) = x;
    img.at(0, 1, x) = 10 + x;
  }
  const auto out = apply_spatial({SpatialKind::hflip, {}}, img);
  for (int x = 0; x < 4; ++x) {
    CHECK(out.at(0, 0, x) == 3 - x);
    CHECK(out.at(0, 1, x) == 13 - x);
  }
}

TEST_CASE("apply_spatial: rot90 four times is the identity") {
  const auto img = uniform_random_tensor<double>(3, 12, 20, 5);
  Tensor<double> cur = img;
  for (int i = 0; i < 4; ++i) cur = apply_spatial({SpatialKind::rot90, {}}, cur);
  CHECK(max_abs_diff(cur, img) == 0.0);
}

TEST_CASE("apply_spatial: crop-resize 2x upscale matches nearest upsample on smooth images") {
  const auto img = smooth_random_image<double>(3, 32, 32, 11);
  SpatialTransform t{SpatialKind::crop_resize, {8, 8, 16, 16}};
  const auto out = apply_spatial(t, img);
  // nearest 2x of the cropped region, compared away from the border
  for (int ci = 0; ci < 3; ++ci)
    for (int y = 2; y < 30; ++y)
      for (int x = 2; x < 30; ++x) {
        const double nearest = img.at(ci, 8 + y / 2, 8 + x / 2);
        CHECK(std::abs(out.at(ci, y, x) - nearest) <= 0.05);
      }
}

TEST_CASE("apply_spatial: crop rectangle out of bounds is rejected") {
  const auto img = uniform_random_tensor<double>(3, 16, 16, 3);
  CHECK_THROWS(apply_spatial({SpatialKind::crop_resize, {8, 8, 16, 16}}, img));
  CHECK_THROWS(apply_spatial({SpatialKind::crop_resize, {0, 0, 0, 4}}, img));
}

TEST_CASE("invert_spatial: exact transforms round trip bit-exactly with all-true masks") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const auto img = uniform_random_tensor<float>(2, 24, 16, 100 + seed);
    for (const auto kind : kExactKinds) {
      const SpatialTransform t{kind, {}};
      const auto fwd = apply_spatial(t, img);
      const auto [back, mask] = invert_spatial(t, fwd);
      CHECK(back.same_shape(img));
      CHECK(max_abs_diff(back, img) == 0.0);
      CHECK(mask.all());
    }
  }
}

TEST_CASE("invert_spatial: inverse of rot90 acts as rot270") {
  const auto y = uniform_random_tensor<double>(2, 10, 14, 9);
  const auto [inv, mask] = invert_spatial({SpatialKind::rot90, {}}, y);
  const auto expect = apply_spatial({SpatialKind::rot270, {}}, y);
  CHECK(max_abs_diff(inv, expect) == 0.0);
}

TEST_CASE("invert_spatial: crop-resize recovers the valid region within 0.05") {
  Rng rng(55);
  WeakAugConfig cfg;
  cfg.kinds = {SpatialKind::crop_resize};
  for (int trial = 0; trial < 40; ++trial) {
    const auto img = smooth_random_image<double>(2, 32, 32, 900 + trial);
    const auto t = sample_weak(cfg, 32, 32, rng);
    const auto fwd = apply_spatial(t, img);
    const auto [back, mask] = invert_spatial(t, fwd);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const bool inside = y >= t.crop.y && y < t.crop.y + t.crop.h && x >= t.crop.x &&
                            x < t.crop.x + t.crop.w;
        CHECK(mask.at(y, x) == inside);
        if (inside) {
          CHECK(std::abs(back.at(0, y, x) - img.at(0, y, x)) <= 0.05);
          CHECK(std::abs(back.at(1, y, x) - img.at(1, y, x)) <= 0.05);
        } else {
          CHECK(back.at(0, y, x) == 0.0);
        }
      }
  }
}

TEST_CASE("equivariance harness: inverted weak output has the geometry of the direct output") {
  // shape/geometry contract only; value agreement is what training promotes
  const auto img = uniform_random_tensor<float>(3, 16, 16, 77);
  Tensor<float> fake_logits(2, 16, 16);  // stand-in for f(x)
  for (const auto kind : kExactKinds) {
    const SpatialTransform t{kind, {}};
    const auto aug = apply_spatial(t, img);
    Tensor<float> out(2, aug.h, aug.w);  // stand-in for f(apply(t, x))
    const auto [inv, mask] = invert_spatial(t, out);
    CHECK(inv.c == fake_logits.c);
    CHECK(inv.h == fake_logits.h);
    CHECK(inv.w == fake_logits.w);
    CHECK(mask.h == 16);
    CHECK(mask.w == 16);
  }
}

// --- photometric ops -------------------------------------------------------

TEST_CASE("apply_photometric: identity-magnitude composition returns the input") {
  const auto img = uniform_random_tensor<float>(3, 8, 8, 4);
  PhotoRanges r;
  StrongAugPlan plan;
  plan.ops[0] = {PhotoKind::contrast, 1.0, 0};
  plan.ops[1] = {PhotoKind::brightness, 0.0, 0};
  plan.ops[2] = {PhotoKind::gaussian_noise, 0.0, 123};
  const auto out = apply_photometric(plan, img);
  CHECK(max_abs_diff(out, img) == 0.0);

  plan.ops[2] = {PhotoKind::sharpness, 1.0, 0};
  CHECK(max_abs_diff(apply_photometric(plan, img), img) == 0.0);
}

TEST_CASE("solarize: pixel 0.8 at threshold 0.5 becomes 0.2") {
  Tensor<double> img(3, 1, 2);
  img.at(0, 0, 0) = 0.8;
  img.at(1, 0, 0) = 0.3;
  img.at(2, 0, 0) = 0.5;
  const auto out = apply_photometric_op({PhotoKind::solarize, 0.5, 0}, img);
  CHECK(out.at(0, 0, 0) == doctest::Approx(0.2));
  CHECK(out.at(1, 0, 0) == doctest::Approx(0.3));  // below threshold: untouched
  CHECK(out.at(2, 0, 0) == doctest::Approx(0.5));  // at threshold: inverted
}

TEST_CASE("posterize to 2 bits quantizes onto {k/3}") {
  const auto img = uniform_random_tensor<double>(3, 6, 6, 8);
  const auto out = apply_photometric_op({PhotoKind::posterize, 2.0, 0}, img);
  for (const double v : out.v) {
    const double nearest = std::round(v * 3.0) / 3.0;
    CHECK(std::abs(v - nearest) <= 1e-12);
  }
}

TEST_CASE("photometric ops preserve shape and stay inside [0,1]") {
  PhotoRanges ranges;
  Rng rng(31);
  const auto img = uniform_random_tensor<float>(3, 12, 10, 17);
  for (int trial = 0; trial < 200; ++trial) {
    const auto plan = sample_strong_init(ranges, rng);
    const auto out = apply_photometric(plan, img);
    CHECK(out.c == 3);
    CHECK(out.h == 12);
    CHECK(out.w == 10);
    for (const float v : out.v) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
}

TEST_CASE("gaussian noise is reproducible from the plan's stored seed") {
  const auto img = uniform_random_tensor<float>(3, 8, 8, 21);
  const PhotometricOp op{PhotoKind::gaussian_noise, 0.05, 4242};
  const auto a = apply_photometric_op(op, img);
  const auto b = apply_photometric_op(op, img);
  CHECK(max_abs_diff(a, b) == 0.0);
  const PhotometricOp other{PhotoKind::gaussian_noise, 0.05, 4243};
  CHECK(max_abs_diff(apply_photometric_op(other, img), a) > 0.0);
}

TEST_CASE("sample_strong_init: three distinct kinds per plan") {
  PhotoRanges ranges;
  Rng rng(64);
  for (int trial = 0; trial < 500; ++trial) {
    const auto plan = sample_strong_init(ranges, rng);
    std::set<PhotoKind> kinds;
    for (const auto& op : plan.ops) kinds.insert(op.kind);
    CHECK(kinds.size() == 3);
  }
}

TEST_CASE("sample_strong_init: each kind appears with frequency 3/7 +- 0.03") {
  PhotoRanges ranges;
  Rng rng(777);
  std::map<PhotoKind, int> counts;
  const int n = 10000;
  for (int i = 0; i < n; ++i)
    for (const auto& op : sample_strong_init(ranges, rng).ops) ++counts[op.kind];
  CHECK(counts.size() == kNumPhotoKinds);
  for (const auto& [kind, count] : counts)
    CHECK(std::abs(count / static_cast<double>(n) - 3.0 / 7.0) <= 0.03);
}

TEST_CASE("make_photometric_op at quantile 0.5 lands on the range midpoint") {
  PhotoRanges r;
  CHECK(make_photometric_op(PhotoKind::contrast, 0.5, r).magnitude == doctest::Approx(1.1));
  CHECK(make_photometric_op(PhotoKind::brightness, 0.5, r).magnitude == doctest::Approx(0.0));
  CHECK(make_photometric_op(PhotoKind::color, 0.5, r).magnitude == doctest::Approx(1.0));
  CHECK(make_photometric_op(PhotoKind::sharpness, 0.5, r).magnitude == doctest::Approx(1.0));
  CHECK(make_photometric_op(PhotoKind::gaussian_noise, 0.5, r).magnitude ==
        doctest::Approx(0.04));
  CHECK(make_photometric_op(PhotoKind::solarize, 0.5, r).magnitude == doctest::Approx(0.75));
}

TEST_CASE("strong plans never contain spatial operations") {
  // photometric kinds are a closed enum; a plan is 3 of the 7 photometric ops
  PhotoRanges ranges;
  Rng rng(3);
  for (int i = 0; i < 100; ++i)
    for (const auto& op : sample_strong_init(ranges, rng).ops)
      CHECK(static_cast<int>(op.kind) < kNumPhotoKinds);
}
