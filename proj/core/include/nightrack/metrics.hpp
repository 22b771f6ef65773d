#pragma once

#include <vector>

#include "nightrack/geometry.hpp"

namespace nightrack::metrics {

struct EvalCurve {
  std::vector<double> thresholds;  // ascending
  std::vector<double> values;      // fraction of frames passing each threshold
  double summary = 0.0;
};

/// Success rate at IoU thresholds 0, 0.05, ..., 1 (a frame succeeds when
/// IoU >= t); the summary is the curve mean.
EvalCurve success_auc(const std::vector<BBox>& pred, const std::vector<BBox>& gt);

/// Center-error curve over 0..50 px; the summary is the value at 20 px (error <= 20).
EvalCurve precision(const std::vector<BBox>& pred, const std::vector<BBox>& gt);

/// Center error with each axis divided by the ground-truth extent; curve over
/// 0..0.5 in steps of 0.01, summary at 0.2.
EvalCurve norm_precision(const std::vector<BBox>& pred, const std::vector<BBox>& gt);

inline constexpr double kPrecisionThresholdPx = 20.0;
inline constexpr double kNormPrecisionThreshold = 0.2;

double center_error(const BBox& pred, const BBox& gt);
double norm_center_error(const BBox& pred, const BBox& gt);

}  // namespace nightrack::metrics
