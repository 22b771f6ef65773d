#include "nightrack/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "nightrack/ops.hpp"

namespace nightrack::losses {

using detail::TensorImpl;

namespace {

BBox box_of(const Tensor& t) {
  if (t.shape() != Shape{4}) throw ShapeError("box tensor must be [4], got " + shape_str(t.shape()));
  auto v = t.data();
  return {v[0], v[1], v[2], v[3]};
}

struct GiouEval {
  double value;
  std::array<double, 4> grad;  // d giou / d (x, y, w, h) of the first box
};

// One axis: overlap length and enclosure length with their partials with
// respect to the first interval's (lo, hi).
struct AxisTerms {
  double inter, d_inter_lo, d_inter_hi;
  double encl, d_encl_lo, d_encl_hi;
};

AxisTerms axis_terms(double alo, double ahi, double blo, double bhi) {
  AxisTerms t{};
  const double lo = std::max(alo, blo), hi = std::min(ahi, bhi);
  if (hi > lo) {
    t.inter = hi - lo;
    t.d_inter_hi = ahi <= bhi ? 1.0 : 0.0;
    t.d_inter_lo = alo >= blo ? -1.0 : 0.0;
  }
  t.encl = std::max(ahi, bhi) - std::min(alo, blo);
  t.d_encl_hi = ahi >= bhi ? 1.0 : 0.0;
  t.d_encl_lo = alo <= blo ? -1.0 : 0.0;
  return t;
}

GiouEval giou_eval(const BBox& a, const BBox& b) {
  const AxisTerms tx = axis_terms(a.x, a.x + a.w, b.x, b.x + b.w);
  const AxisTerms ty = axis_terms(a.y, a.y + a.h, b.y, b.y + b.h);
  const double inter = tx.inter * ty.inter;
  const double uni = a.area() + b.area() - inter;
  const double encl = tx.encl * ty.encl;
  GiouEval e{};
  e.value = inter / uni - (encl - uni) / encl;

  // giou = I/U - 1 + U/E
  const double dg_dI = 1.0 / uni;
  const double dg_dU = -inter / (uni * uni) + 1.0 / encl;
  const double dg_dE = -uni / (encl * encl);
  // Partials of I, E with respect to (x_lo, x_hi, y_lo, y_hi); U = w*h + const - I.
  const std::array<double, 4> dI = {tx.d_inter_lo * ty.inter, tx.d_inter_hi * ty.inter, ty.d_inter_lo * tx.inter,
                                    ty.d_inter_hi * tx.inter};
  const std::array<double, 4> dE = {tx.d_encl_lo * ty.encl, tx.d_encl_hi * ty.encl, ty.d_encl_lo * tx.encl,
                                    ty.d_encl_hi * tx.encl};
  std::array<double, 4> d_edges{};
  for (int k = 0; k < 4; ++k) d_edges[k] = (dg_dI - dg_dU) * dI[k] + dg_dE * dE[k];
  // Area term of U: d(w*h)/dw = h, d(w*h)/dh = w.
  // x_lo = x, x_hi = x + w, y_lo = y, y_hi = y + h.
  e.grad[0] = d_edges[0] + d_edges[1];
  e.grad[1] = d_edges[2] + d_edges[3];
  e.grad[2] = d_edges[1] + dg_dU * a.h;
  e.grad[3] = d_edges[3] + dg_dU * a.w;
  return e;
}

}  // namespace

double l1_loss(const BBox& pred, const BBox& gt) {
  return (std::fabs(pred.x - gt.x) + std::fabs(pred.y - gt.y) + std::fabs(pred.w - gt.w) + std::fabs(pred.h - gt.h)) /
         4.0;
}

Tensor l1_loss(const Tensor& pred, const BBox& gt) {
  const BBox p = box_of(pred);
  const float value = static_cast<float>(l1_loss(p, gt));
  const std::array<double, 4> target{gt.x, gt.y, gt.w, gt.h};
  return detail::make_result("l1_loss", {1}, {value}, {pred}, [target](TensorImpl& self) {
    auto& parent = self.parents[0];
    if (!parent->requires_grad) return;
    float* g = parent->grad_buffer();
    for (size_t k = 0; k < 4; ++k) {
      const double diff = parent->data[k] - target[k];
      const float sign = diff > 0 ? 1.0f : (diff < 0 ? -1.0f : 0.0f);
      g[k] += self.grad[0] * sign / 4.0f;
    }
  });
}

double iou(const BBox& a, const BBox& b) {
  const double iw = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double ih = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double giou(const BBox& a, const BBox& b) { return giou_eval(a, b).value; }

double giou_loss(const BBox& a, const BBox& b) { return 1.0 - giou(a, b); }

Tensor giou_loss(const Tensor& pred, const BBox& gt) {
  const BBox p = box_of(pred);
  if (!p.valid()) throw ValueError("giou_loss: predicted box must have positive extent");
  const GiouEval e = giou_eval(p, gt);
  return detail::make_result("giou_loss", {1}, {static_cast<float>(1.0 - e.value)}, {pred},
                             [grad = e.grad](TensorImpl& self) {
                               auto& parent = self.parents[0];
                               if (!parent->requires_grad) return;
                               float* g = parent->grad_buffer();
                               for (size_t k = 0; k < 4; ++k) g[k] -= self.grad[0] * static_cast<float>(grad[k]);
                             });
}

Tensor focal_loss(const Tensor& score, const Tensor& target) {
  if (score.shape() != target.shape()) {
    throw ShapeError("focal_loss: score " + shape_str(score.shape()) + " and target " +
                     shape_str(target.shape()) + " differ");
  }
  auto sv = score.data();
  auto tv = target.data();
  int64_t positives = 0;
  for (float q : tv) positives += q == 1.0f ? 1 : 0;
  if (positives == 0) throw ValueError("focal_loss: target has no positive cell");

  const double lo = kFocalClamp, hi = 1.0 - kFocalClamp;
  double total = 0.0;
  std::vector<float> dloss(sv.size());
  for (size_t i = 0; i < sv.size(); ++i) {
    const double raw = sv[i];
    const double p = std::clamp(raw, lo, hi);
    const bool inside = raw > lo && raw < hi;
    const double q = tv[i];
    double l, dl;
    if (q == 1.0) {
      l = -std::pow(1.0 - p, kFocalAlpha) * std::log(p);
      dl = kFocalAlpha * std::pow(1.0 - p, kFocalAlpha - 1.0) * std::log(p) - std::pow(1.0 - p, kFocalAlpha) / p;
    } else {
      const double w = std::pow(1.0 - q, kFocalBeta);
      l = -w * std::pow(p, kFocalAlpha) * std::log(1.0 - p);
      dl = -w * (kFocalAlpha * std::pow(p, kFocalAlpha - 1.0) * std::log(1.0 - p) - std::pow(p, kFocalAlpha) / (1.0 - p));
    }
    total += l;
    dloss[i] = inside ? static_cast<float>(dl / static_cast<double>(positives)) : 0.0f;
  }
  const float value = static_cast<float>(total / static_cast<double>(positives));
  return detail::make_result("focal_loss", {1}, {value}, {score, target},
                             [dloss = std::move(dloss)](TensorImpl& self) {
                               auto& parent = self.parents[0];
                               if (!parent->requires_grad) return;
                               float* g = parent->grad_buffer();
                               for (size_t i = 0; i < dloss.size(); ++i) g[i] += self.grad[0] * dloss[i];
                             });
}

double gaussian_sigma(double w_cells, double h_cells) { return std::max(1.0, std::max(w_cells, h_cells) / 6.0); }

Tensor gaussian_target(int64_t row, int64_t col, double sigma, int64_t grid) {
  if (row < 0 || row >= grid || col < 0 || col >= grid) {
    throw ValueError("gaussian_target: cell (" + std::to_string(row) + ", " + std::to_string(col) +
                     ") is off the " + std::to_string(grid) + "x" + std::to_string(grid) + " grid");
  }
  if (!(sigma > 0.0)) throw ValueError("gaussian_target: sigma must be positive");
  std::vector<float> v(static_cast<size_t>(grid * grid));
  for (int64_t i = 0; i < grid; ++i) {
    for (int64_t j = 0; j < grid; ++j) {
      const double d2 = static_cast<double>((i - row) * (i - row) + (j - col) * (j - col));
      v[static_cast<size_t>(i * grid + j)] = static_cast<float>(std::exp(-d2 / (2.0 * sigma * sigma)));
    }
  }
  return Tensor({grid, grid}, std::move(v));
}

Tensor total_loss(const Tensor& l1, const Tensor& giou, const Tensor& focal, const LossWeights& w) {
  return add(add(scale(l1, w.l1), scale(giou, w.giou)), scale(focal, w.focal));
}

double total_loss(double l1, double giou, double focal, const LossWeights& w) {
  return w.l1 * l1 + w.giou * giou + w.focal * focal;
}

}  // namespace nightrack::losses
