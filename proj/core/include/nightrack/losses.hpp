#pragma once

#include "nightrack/geometry.hpp"
#include "nightrack/tensor.hpp"

namespace nightrack::losses {

struct LossWeights {
  float l1 = 5.0f;
  float giou = 2.0f;
  float focal = 1.5f;
};

inline constexpr float kFocalAlpha = 2.0f;
inline constexpr float kFocalBeta = 4.0f;
inline constexpr float kFocalClamp = 1e-7f;

/// Mean absolute difference over (x, y, w, h).
double l1_loss(const BBox& pred, const BBox& gt);
/// pred is a [4] tensor (x, y, w, h); differentiable with respect to pred.
Tensor l1_loss(const Tensor& pred, const BBox& gt);

double iou(const BBox& a, const BBox& b);
/// IoU - (enclosure - union) / enclosure, in (-1, 1].
double giou(const BBox& a, const BBox& b);
double giou_loss(const BBox& a, const BBox& b);
/// 1 - giou(pred, gt) for a [4] tensor pred; differentiable with respect to pred.
Tensor giou_loss(const Tensor& pred, const BBox& gt);

/// Penalty-reduced pixel-wise focal loss over post-sigmoid scores. Cells with
/// target exactly 1 are positives; the sum is divided by their count.
/// Scores are clamped to [1e-7, 1 - 1e-7]. Differentiable with respect to score.
Tensor focal_loss(const Tensor& score, const Tensor& target);

/// sigma = max(1, diameter / 6) with the diameter taken as the larger box side
/// in grid cells.
double gaussian_sigma(double w_cells, double h_cells);

/// exp(-(di^2 + dj^2) / (2 sigma^2)) around (row, col) on a grid x grid map;
/// exactly 1 at the peak.
Tensor gaussian_target(int64_t row, int64_t col, double sigma, int64_t grid = 16);

/// lambda_1 * l1 + lambda_giou * giou + lambda_focal * focal.
Tensor total_loss(const Tensor& l1, const Tensor& giou, const Tensor& focal, const LossWeights& weights = {});
double total_loss(double l1, double giou, double focal, const LossWeights& weights = {});

}  // namespace nightrack::losses
