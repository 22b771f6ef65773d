#include <gtest/gtest.h>

#include <cmath>

#include "nightrack/losses.hpp"
#include "nightrack/ops.hpp"
#include "nightrack/param_store.hpp"

using namespace nightrack;
using namespace nightrack::losses;

namespace {

Tensor one_hot(int64_t row, int64_t col, float p_peak, float p_rest = 0.0f) {
  Tensor t = Tensor::full({16, 16}, p_rest);
  t.mutable_data()[static_cast<size_t>(row * 16 + col)] = p_peak;
  return t;
}

}  // namespace

TEST(L1, Examples) {
  const BBox a{0.2, 0.3, 0.4, 0.5};
  EXPECT_EQ(l1_loss(a, a), 0.0);
  const BBox b{0.3, 0.3, 0.4, 0.5};
  EXPECT_NEAR(l1_loss(b, a), 0.025, 1e-12);
  EXPECT_EQ(l1_loss(a, b), l1_loss(b, a));
  EXPECT_NEAR(l1_loss(Tensor({4}, {0.3f, 0.3f, 0.4f, 0.5f}), a).item(), 0.025, 1e-7);
}

TEST(GIoU, Examples) {
  const BBox a{0, 0, 1, 1}, b{2, 0, 1, 1};
  EXPECT_DOUBLE_EQ(giou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(giou_loss(a, a), 0.0);
  EXPECT_NEAR(giou(a, b), -1.0 / 3.0, 1e-12);
  EXPECT_NEAR(giou_loss(a, b), 4.0 / 3.0, 1e-12);
  const BBox outer{0, 0, 2, 2}, inner{0, 0, 2, 1};
  EXPECT_NEAR(iou(outer, inner), 0.5, 1e-12);
  EXPECT_NEAR(giou(outer, inner), 0.5, 1e-12);
  EXPECT_NEAR(giou_loss(Tensor({4}, {2, 0, 1, 1}), a).item(), 4.0 / 3.0, 1e-6);
}

TEST(GIoU, SymmetryTranslationRange) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const BBox a{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(0.1f, 4), rng.uniform(0.1f, 4)};
    const BBox b{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(0.1f, 4), rng.uniform(0.1f, 4)};
    const double g = giou(a, b);
    EXPECT_NEAR(g, giou(b, a), 1e-12);
    const double dx = rng.uniform(-10, 10), dy = rng.uniform(-10, 10);
    EXPECT_NEAR(g, giou({a.x + dx, a.y + dy, a.w, a.h}, {b.x + dx, b.y + dy, b.w, b.h}), 1e-9);
    EXPECT_GT(g, -1.0);
    EXPECT_LE(g, 1.0);
    EXPECT_LE(g, iou(a, b) + 1e-12);
    EXPECT_GE(giou_loss(a, b), 0.0);
  }
}

TEST(GIoU, RejectsDegeneratePrediction) {
  EXPECT_THROW(giou_loss(Tensor({4}, {0, 0, 0, 1}), BBox{0, 0, 1, 1}), ValueError);
}

TEST(Focal, OptimumIsNearZero) {
  EXPECT_LT(focal_loss(one_hot(5, 9, 1.0f), one_hot(5, 9, 1.0f)).item(), 1e-5f);
}

TEST(Focal, SinglePositiveHalf) {
  EXPECT_NEAR(focal_loss(one_hot(3, 3, 0.5f), one_hot(3, 3, 1.0f)).item(), 0.25 * std::log(2.0), 1e-6);
}

TEST(Focal, DecreasesAsPositiveImproves) {
  const Tensor target = gaussian_target(8, 8, 2.0);
  Rng rng(2);
  Tensor base = random_uniform({16, 16}, 0.01f, 0.3f, rng);
  float prev = std::numeric_limits<float>::infinity();
  for (int k = 1; k <= 9; ++k) {
    Tensor s = base.clone();
    s.mutable_data()[8 * 16 + 8] = 0.1f * static_cast<float>(k);
    const float l = focal_loss(s, target).item();
    EXPECT_LT(l, prev) << "p = " << 0.1 * k;
    prev = l;
  }
}

TEST(Focal, Errors) {
  EXPECT_THROW(focal_loss(Tensor::full({16, 16}, 0.5f), Tensor::full({16, 16}, 0.5f)), ValueError);
  EXPECT_THROW(focal_loss(Tensor::full({16, 16}, 0.5f), Tensor::full({8, 8}, 1.0f)), ShapeError);
}

TEST(GaussianTarget, PeakSymmetryNeighbours) {
  Tensor t = gaussian_target(7, 4, 1.0);
  EXPECT_EQ(t.at({7, 4}), 1.0f);
  int ones = 0;
  for (float v : t.data()) {
    ones += v == 1.0f;
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_EQ(ones, 1);
  for (auto [r, c] : {std::pair{6, 4}, {8, 4}, {7, 3}, {7, 5}}) EXPECT_NEAR(t.at({r, c}), std::exp(-0.5), 1e-7);
  Tensor u = gaussian_target(8, 8, 2.5);
  for (int d = 1; d < 8; ++d) {
    EXPECT_EQ(u.at({8 - d, 8}), u.at({8 + d, 8}));
    EXPECT_EQ(u.at({8, 8 - d}), u.at({8 + d, 8}));
  }
  EXPECT_THROW(gaussian_target(16, 0, 1.0), ValueError);
  EXPECT_THROW(gaussian_target(0, -1, 1.0), ValueError);
}

TEST(GaussianTarget, SigmaRule) {
  EXPECT_EQ(gaussian_sigma(2, 3), 1.0);
  EXPECT_DOUBLE_EQ(gaussian_sigma(4, 12), 2.0);
}

TEST(TotalLoss, WeightedSum) {
  EXPECT_EQ(total_loss(0.0, 0.0, 0.0), 0.0);
  EXPECT_NEAR(total_loss(0.1, 0.2, 0.3), 1.35, 1e-12);
  const LossWeights w;
  EXPECT_EQ(w.l1, 5.0f);
  EXPECT_EQ(w.giou, 2.0f);
  EXPECT_EQ(w.focal, 1.5f);
  EXPECT_NEAR(total_loss(Tensor::scalar(0.1f), Tensor::scalar(0.2f), Tensor::scalar(0.3f)).item(), 1.35, 1e-6);
  // linear in each component
  EXPECT_NEAR(total_loss(0.4, 0.2, 0.3) - total_loss(0.1, 0.2, 0.3), 5.0 * 0.3, 1e-12);
}

TEST(TotalLoss, GradientIsLambda) {
  Tensor a = Tensor::scalar(0.1f, true), b = Tensor::scalar(0.2f, true), c = Tensor::scalar(0.3f, true);
  a.set_name("a");
  b.set_name("b");
  c.set_name("c");
  auto g = grad_of(total_loss(a, b, c));
  EXPECT_FLOAT_EQ(g["a"].item(), 5.0f);
  EXPECT_FLOAT_EQ(g["b"].item(), 2.0f);
  EXPECT_FLOAT_EQ(g["c"].item(), 1.5f);
  // finite differences on the double form
  const double h = 1e-3;
  EXPECT_NEAR((total_loss(0.1 + h, 0.2, 0.3) - total_loss(0.1 - h, 0.2, 0.3)) / (2 * h), 5.0, 1e-9);
  EXPECT_NEAR((total_loss(0.1, 0.2 + h, 0.3) - total_loss(0.1, 0.2 - h, 0.3)) / (2 * h), 2.0, 1e-9);
  EXPECT_NEAR((total_loss(0.1, 0.2, 0.3 + h) - total_loss(0.1, 0.2, 0.3 - h)) / (2 * h), 1.5, 1e-9);
}
