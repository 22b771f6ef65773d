#include "nightrack/metrics.hpp"

#include <cmath>
#include <string>

#include "nightrack/error.hpp"
#include "nightrack/losses.hpp"

namespace nightrack::metrics {

namespace {

void check_lengths(const std::vector<BBox>& pred, const std::vector<BBox>& gt, const char* what) {
  if (pred.size() != gt.size()) {
    throw ValueError(std::string(what) + ": " + std::to_string(pred.size()) + " predictions for " +
                     std::to_string(gt.size()) + " ground-truth boxes");
  }
  if (gt.empty()) throw ValueError(std::string(what) + ": empty track");
}

// Fraction of errors <= t (or >= t for scores) at each threshold.
EvalCurve curve(const std::vector<double>& errors, std::vector<double> thresholds, bool at_least) {
  EvalCurve c;
  c.thresholds = std::move(thresholds);
  for (double t : c.thresholds) {
    size_t hits = 0;
    for (double e : errors) hits += (at_least ? e >= t : e <= t) ? 1 : 0;
    c.values.push_back(static_cast<double>(hits) / static_cast<double>(errors.size()));
  }
  return c;
}

// Threshold lists are built from integers so that 20 px and 0.2 land exactly.
std::vector<double> grid(int count, double denom) {
  std::vector<double> t;
  for (int i = 0; i < count; ++i) t.push_back(static_cast<double>(i) / denom);
  return t;
}

}  // namespace

double center_error(const BBox& pred, const BBox& gt) {
  return std::hypot(pred.cx() - gt.cx(), pred.cy() - gt.cy());
}

double norm_center_error(const BBox& pred, const BBox& gt) {
  return std::hypot((pred.cx() - gt.cx()) / gt.w, (pred.cy() - gt.cy()) / gt.h);
}

EvalCurve success_auc(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
  check_lengths(pred, gt, "success_auc");
  std::vector<double> ious;
  for (size_t i = 0; i < gt.size(); ++i) ious.push_back(losses::iou(pred[i], gt[i]));
  EvalCurve c = curve(ious, grid(21, 20.0), true);
  // Mean of the curve as one exact ratio of pass counts.
  size_t passes = 0;
  for (double t : c.thresholds) {
    for (double v : ious) passes += v >= t ? 1 : 0;
  }
  c.summary = static_cast<double>(passes) / static_cast<double>(c.thresholds.size() * ious.size());
  return c;
}

EvalCurve precision(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
  check_lengths(pred, gt, "precision");
  std::vector<double> errors;
  for (size_t i = 0; i < gt.size(); ++i) errors.push_back(center_error(pred[i], gt[i]));
  EvalCurve c = curve(errors, grid(51, 1.0), false);
  c.summary = c.values[static_cast<size_t>(kPrecisionThresholdPx)];
  return c;
}

EvalCurve norm_precision(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
  check_lengths(pred, gt, "norm_precision");
  std::vector<double> errors;
  for (size_t i = 0; i < gt.size(); ++i) {
    if (!gt[i].valid()) throw ValueError("norm_precision: ground-truth box " + std::to_string(i) + " is degenerate");
    errors.push_back(norm_center_error(pred[i], gt[i]));
  }
  EvalCurve c = curve(errors, grid(51, 100.0), false);
  c.summary = c.values[20];
  return c;
}

}  // namespace nightrack::metrics
