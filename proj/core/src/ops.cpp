#include "nightrack/ops.hpp"

#include <algorithm>
#include <cmath>

#include "gemm.hpp"

namespace nightrack {

using detail::ImplPtr;
using detail::make_result;
using detail::TensorImpl;

namespace {

float* grad_of_parent(TensorImpl& self, size_t i) {
  auto& p = self.parents[i];
  return p->requires_grad ? p->grad_buffer() : nullptr;
}

const std::vector<float>& parent_data(TensorImpl& self, size_t i) { return self.parents[i]->data; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": operand shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  }
}

void require_rank(const Tensor& t, int64_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got " + shape_str(t.shape()));
  }
}

inline float sigmoidf(float x) {
  if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
  float e = std::exp(x);
  return e / (1.0f + e);
}

template <typename F, typename G>
Tensor unary(const char* op, const Tensor& x, F forward, G derivative) {
  auto in = x.data();
  std::vector<float> out(in.size());
  for (size_t i = 0; i < in.size(); ++i) out[i] = forward(in[i]);
  return make_result(op, x.shape(), std::move(out), {x}, [derivative](TensorImpl& self) {
    float* gx = grad_of_parent(self, 0);
    if (!gx) return;
    const auto& xv = parent_data(self, 0);
    for (size_t i = 0; i < xv.size(); ++i) gx[i] += self.grad[i] * derivative(xv[i], self.data[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto av = a.data(), bv = b.data();
  std::vector<float> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
    for (size_t k = 0; k < 2; ++k) {
      if (float* g = grad_of_parent(self, k)) {
        for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto av = a.data(), bv = b.data();
  std::vector<float> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
    if (float* g = grad_of_parent(self, 0)) {
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (float* g = grad_of_parent(self, 1)) {
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto av = a.data(), bv = b.data();
  std::vector<float> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
    const auto& av = parent_data(self, 0);
    const auto& bv = parent_data(self, 1);
    if (float* g = grad_of_parent(self, 0)) {
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (float* g = grad_of_parent(self, 1)) {
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, float factor) {
  return unary(
      "scale", a, [factor](float x) { return x * factor; },
      [factor](float, float) { return factor; });
}

Tensor add_scalar(const Tensor& a, float value) {
  return unary(
      "add_scalar", a, [value](float x) { return x + value; }, [](float, float) { return 1.0f; });
}

Tensor mul_rows(const Tensor& x, const Tensor& v) {
  require_rank(v, 1, "mul_rows", "row vector");
  const int64_t d = v.dim(0);
  if (x.dim(-1) != d) {
    throw ShapeError("mul_rows: trailing dimension " + std::to_string(x.dim(-1)) +
                     " does not match vector length " + std::to_string(d));
  }
  auto xv = x.data(), vv = v.data();
  std::vector<float> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * vv[i % static_cast<size_t>(d)];
  return make_result("mul_rows", x.shape(), std::move(out), {x, v}, [d](TensorImpl& self) {
    const auto& xv = parent_data(self, 0);
    const auto& vv = parent_data(self, 1);
    float* gx = grad_of_parent(self, 0);
    float* gv = grad_of_parent(self, 1);
    for (size_t i = 0; i < xv.size(); ++i) {
      size_t j = i % static_cast<size_t>(d);
      if (gx) gx[i] += self.grad[i] * vv[j];
      if (gv) gv[j] += self.grad[i] * xv[i];
    }
  });
}

Tensor mul_spatial(const Tensor& x, const Tensor& m) {
  require_rank(x, 3, "mul_spatial", "input");
  require_rank(m, 2, "mul_spatial", "map");
  if (x.dim(1) != m.dim(0) || x.dim(2) != m.dim(1)) {
    throw ShapeError("mul_spatial: map " + shape_str(m.shape()) + " does not match spatial dims of " +
                     shape_str(x.shape()));
  }
  const size_t plane = static_cast<size_t>(m.numel());
  auto xv = x.data(), mv = m.data();
  std::vector<float> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * mv[i % plane];
  return make_result("mul_spatial", x.shape(), std::move(out), {x, m}, [plane](TensorImpl& self) {
    const auto& xv = parent_data(self, 0);
    const auto& mv = parent_data(self, 1);
    float* gx = grad_of_parent(self, 0);
    float* gm = grad_of_parent(self, 1);
    for (size_t i = 0; i < xv.size(); ++i) {
      if (gx) gx[i] += self.grad[i] * mv[i % plane];
      if (gm) gm[i % plane] += self.grad[i] * xv[i];
    }
  });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  return make_result("sum", {1}, {static_cast<float>(acc)}, {x}, [](TensorImpl& self) {
    if (float* g = grad_of_parent(self, 0)) {
      const size_t n = self.parents[0]->data.size();
      for (size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0f / static_cast<float>(x.numel()));
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x, [](float v) { return sigmoidf(v); },
      [](float, float y) { return y * (1.0f - y); });
}

Tensor silu(const Tensor& x) {
  return unary(
      "silu", x, [](float v) { return v * sigmoidf(v); },
      [](float v, float) {
        float s = sigmoidf(v);
        return s + v * s * (1.0f - s);
      });
}

Tensor softplus(const Tensor& x) {
  return unary(
      "softplus", x, [](float v) { return v > 20.0f ? v : std::log1p(std::exp(v)); },
      [](float v, float) { return sigmoidf(v); });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](float v) { return v > 0.0f ? v : 0.0f; },
      [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](float v) { return std::exp(v); }, [](float, float y) { return y; });
}

Tensor abs(const Tensor& x) {
  return unary(
      "abs", x, [](float v) { return std::fabs(v); },
      [](float v, float) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); });
}

Tensor linear(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias) {
  require_rank(weight, 2, "linear", "weight");
  const int64_t d_out = weight.dim(0), d_in = weight.dim(1);
  if (x.rank() < 1 || x.dim(-1) != d_in) {
    throw ShapeError("linear: input trailing dimension " + std::to_string(x.rank() ? x.dim(-1) : 0) +
                     " does not match weight D_in " + std::to_string(d_in));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != d_out)) {
    throw ShapeError("linear: bias length must equal D_out " + std::to_string(d_out));
  }
  const int64_t rows = x.numel() / d_in;
  Shape out_shape = x.shape();
  out_shape.back() = d_out;
  std::vector<float> out(static_cast<size_t>(rows * d_out));
  auto y = detail::mat(out.data(), rows, d_out);
  y.noalias() = detail::cmat(x.data().data(), rows, d_in) *
                detail::cmat(weight.data().data(), d_out, d_in).transpose();
  if (bias) y.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(bias->data().data(), d_out);

  std::vector<Tensor> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  return make_result(
      "linear", std::move(out_shape), std::move(out), std::move(inputs),
      [rows, d_in, d_out, has_bias](TensorImpl& self) {
        auto gy = detail::cmat(self.grad.data(), rows, d_out);
        if (float* gx = grad_of_parent(self, 0)) {
          detail::mat(gx, rows, d_in).noalias() += gy * detail::cmat(parent_data(self, 1).data(), d_out, d_in);
        }
        if (float* gw = grad_of_parent(self, 1)) {
          detail::mat(gw, d_out, d_in).noalias() +=
              gy.transpose() * detail::cmat(parent_data(self, 0).data(), rows, d_in);
        }
        if (has_bias) {
          if (float* gb = grad_of_parent(self, 2)) {
            // Fixed row order: Eigen's vectorized column sums depend on buffer alignment.
            std::vector<float> acc(static_cast<size_t>(d_out), 0.0f);
            for (int64_t r = 0; r < rows; ++r) {
              for (int64_t c = 0; c < d_out; ++c) acc[static_cast<size_t>(c)] += gy(r, c);
            }
            for (int64_t c = 0; c < d_out; ++c) gb[c] += acc[static_cast<size_t>(c)];
          }
        }
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  if (eps <= 0.0f) throw ValueError("layer_norm: eps must be positive");
  require_rank(gamma, 1, "layer_norm", "gamma");
  require_rank(beta, 1, "layer_norm", "beta");
  const int64_t d = x.dim(-1);
  if (gamma.dim(0) != d || beta.dim(0) != d) {
    throw ShapeError("layer_norm: gamma/beta length must equal trailing dimension " + std::to_string(d));
  }
  const int64_t rows = x.numel() / d;
  auto xv = x.data(), gv = gamma.data(), bv = beta.data();
  std::vector<float> out(xv.size());
  std::vector<float> xhat(xv.size());
  std::vector<float> rstd(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const float* row = xv.data() + r * d;
    double mu = 0.0;
    for (int64_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + static_cast<double>(eps));
    rstd[static_cast<size_t>(r)] = static_cast<float>(rs);
    for (int64_t j = 0; j < d; ++j) {
      const size_t k = static_cast<size_t>(r * d + j);
      xhat[k] = static_cast<float>((row[j] - mu) * rs);
      out[k] = xhat[k] * gv[static_cast<size_t>(j)] + bv[static_cast<size_t>(j)];
    }
  }
  return make_result(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](TensorImpl& self) {
        const auto& gamma = parent_data(self, 1);
        float* gx = grad_of_parent(self, 0);
        float* gg = grad_of_parent(self, 1);
        float* gb = grad_of_parent(self, 2);
        for (int64_t r = 0; r < rows; ++r) {
          const float* g = self.grad.data() + r * d;
          const float* xh = xhat.data() + r * d;
          double m1 = 0.0, m2 = 0.0;
          for (int64_t j = 0; j < d; ++j) {
            const double gh = static_cast<double>(g[j]) * gamma[static_cast<size_t>(j)];
            m1 += gh;
            m2 += gh * xh[j];
            if (gg) gg[j] += g[j] * xh[j];
            if (gb) gb[j] += g[j];
          }
          if (!gx) continue;
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          const double rs = rstd[static_cast<size_t>(r)];
          for (int64_t j = 0; j < d; ++j) {
            const double gh = static_cast<double>(g[j]) * gamma[static_cast<size_t>(j)];
            gx[r * d + j] += static_cast<float>(rs * (gh - m1 - xh[j] * m2));
          }
        }
      });
}

namespace {

struct ConvGeom {
  int64_t channels, height, width;  // input plane geometry (one group)
  int64_t kh, kw, stride, padding;
  int64_t out_h, out_w;
};

// col[(c*kh + i)*kw + j, oy*out_w + ox] = x[c, oy*s - p + i, ox*s - p + j]
void im2col(const float* x, const ConvGeom& g, float* col) {
  const int64_t cols = g.out_h * g.out_w;
  for (int64_t c = 0; c < g.channels; ++c) {
    for (int64_t i = 0; i < g.kh; ++i) {
      for (int64_t j = 0; j < g.kw; ++j) {
        float* dst = col + ((c * g.kh + i) * g.kw + j) * cols;
        for (int64_t oy = 0; oy < g.out_h; ++oy) {
          const int64_t iy = oy * g.stride - g.padding + i;
          float* drow = dst + oy * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(drow, drow + g.out_w, 0.0f);
            continue;
          }
          const float* srow = x + (c * g.height + iy) * g.width;
          for (int64_t ox = 0; ox < g.out_w; ++ox) {
            const int64_t ix = ox * g.stride - g.padding + j;
            drow[ox] = (ix < 0 || ix >= g.width) ? 0.0f : srow[ix];
          }
        }
      }
    }
  }
}

void col2im(const float* col, const ConvGeom& g, float* x) {
  const int64_t cols = g.out_h * g.out_w;
  for (int64_t c = 0; c < g.channels; ++c) {
    for (int64_t i = 0; i < g.kh; ++i) {
      for (int64_t j = 0; j < g.kw; ++j) {
        const float* src = col + ((c * g.kh + i) * g.kw + j) * cols;
        for (int64_t oy = 0; oy < g.out_h; ++oy) {
          const int64_t iy = oy * g.stride - g.padding + i;
          if (iy < 0 || iy >= g.height) continue;
          float* xrow = x + (c * g.height + iy) * g.width;
          const float* srow = src + oy * g.out_w;
          for (int64_t ox = 0; ox < g.out_w; ++ox) {
            const int64_t ix = ox * g.stride - g.padding + j;
            if (ix >= 0 && ix < g.width) xrow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias,
              Conv2dOptions opt) {
  require_rank(x, 3, "conv2d", "input");
  require_rank(weight, 4, "conv2d", "weight");
  if (opt.stride < 1) throw ValueError("conv2d: stride must be >= 1");
  if (opt.padding < 0) throw ValueError("conv2d: padding must be >= 0");
  if (opt.groups < 1) throw ValueError("conv2d: groups must be >= 1");
  const int64_t c_in = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int64_t c_out = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (c_in % opt.groups != 0) {
    throw ShapeError("conv2d: C_in " + std::to_string(c_in) + " not divisible by groups " +
                     std::to_string(opt.groups));
  }
  if (c_out % opt.groups != 0) {
    throw ShapeError("conv2d: C_out " + std::to_string(c_out) + " not divisible by groups " +
                     std::to_string(opt.groups));
  }
  const int64_t cg_in = c_in / opt.groups, cg_out = c_out / opt.groups;
  if (weight.dim(1) != cg_in) {
    throw ShapeError("conv2d: weight dimension 1 is " + std::to_string(weight.dim(1)) +
                     ", expected C_in/groups = " + std::to_string(cg_in));
  }
  if (h + 2 * opt.padding < kh) {
    throw ShapeError("conv2d: kernel height " + std::to_string(kh) + " exceeds padded input height");
  }
  if (w + 2 * opt.padding < kw) {
    throw ShapeError("conv2d: kernel width " + std::to_string(kw) + " exceeds padded input width");
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != c_out)) {
    throw ShapeError("conv2d: bias length must equal C_out " + std::to_string(c_out));
  }
  ConvGeom g{cg_in, h, w, kh, kw, opt.stride, opt.padding, (h + 2 * opt.padding - kh) / opt.stride + 1,
             (w + 2 * opt.padding - kw) / opt.stride + 1};
  const int64_t plane_out = g.out_h * g.out_w;
  const int64_t patch = cg_in * kh * kw;
  const int64_t groups = opt.groups;

  std::vector<float> out(static_cast<size_t>(c_out * plane_out));
  std::vector<float> col(static_cast<size_t>(patch * plane_out));
  const float* xd = x.data().data();
  const float* wd = weight.data().data();
  for (int64_t gi = 0; gi < groups; ++gi) {
    im2col(xd + gi * cg_in * h * w, g, col.data());
    detail::mat(out.data() + gi * cg_out * plane_out, cg_out, plane_out).noalias() =
        detail::cmat(wd + gi * cg_out * patch, cg_out, patch) * detail::cmat(col.data(), patch, plane_out);
  }
  if (bias) {
    auto bv = bias->data();
    for (int64_t c = 0; c < c_out; ++c) {
      float* o = out.data() + c * plane_out;
      for (int64_t i = 0; i < plane_out; ++i) o[i] += bv[static_cast<size_t>(c)];
    }
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  return make_result(
      "conv2d", {c_out, g.out_h, g.out_w}, std::move(out), std::move(inputs),
      [g, groups, cg_in, cg_out, patch, plane_out, has_bias](TensorImpl& self) {
        const float* xd = parent_data(self, 0).data();
        const float* wd = parent_data(self, 1).data();
        float* gx = grad_of_parent(self, 0);
        float* gw = grad_of_parent(self, 1);
        std::vector<float> col(static_cast<size_t>(patch * plane_out));
        const int64_t in_plane = g.height * g.width;
        for (int64_t gi = 0; gi < groups; ++gi) {
          auto gy = detail::cmat(self.grad.data() + gi * cg_out * plane_out, cg_out, plane_out);
          if (gw) {
            im2col(xd + gi * cg_in * in_plane, g, col.data());
            detail::mat(gw + gi * cg_out * patch, cg_out, patch).noalias() +=
                gy * detail::cmat(col.data(), patch, plane_out).transpose();
          }
          if (gx) {
            detail::mat(col.data(), patch, plane_out).noalias() =
                detail::cmat(wd + gi * cg_out * patch, cg_out, patch).transpose() * gy;
            col2im(col.data(), g, gx + gi * cg_in * in_plane);
          }
        }
        if (has_bias) {
          if (float* gb = grad_of_parent(self, 2)) {
            for (int64_t c = 0; c < groups * cg_out; ++c) {
              const float* gr = self.grad.data() + c * plane_out;
              double acc = 0.0;
              for (int64_t i = 0; i < plane_out; ++i) acc += gr[i];
              gb[c] += static_cast<float>(acc);
            }
          }
        }
      });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias,
                        int64_t stride) {
  require_rank(x, 3, "conv_transpose2d", "input");
  require_rank(weight, 4, "conv_transpose2d", "weight");
  if (stride < 1) throw ValueError("conv_transpose2d: stride must be >= 1");
  const int64_t c_a = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (weight.dim(0) != c_a) {
    throw ShapeError("conv_transpose2d: weight dimension 0 is " + std::to_string(weight.dim(0)) +
                     ", expected input channels " + std::to_string(c_a));
  }
  const int64_t c_b = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  if (bias && (bias->rank() != 1 || bias->dim(0) != c_b)) {
    throw ShapeError("conv_transpose2d: bias length must equal output channels " + std::to_string(c_b));
  }
  const int64_t out_h = (h - 1) * stride + kh, out_w = (w - 1) * stride + kw;
  // Geometry of the forward conv whose input gradient this is.
  ConvGeom g{c_b, out_h, out_w, kh, kw, stride, 0, h, w};
  const int64_t patch = c_b * kh * kw, plane = h * w;

  std::vector<float> col(static_cast<size_t>(patch * plane));
  detail::mat(col.data(), patch, plane).noalias() =
      detail::cmat(weight.data().data(), c_a, patch).transpose() * detail::cmat(x.data().data(), c_a, plane);
  std::vector<float> out(static_cast<size_t>(c_b * out_h * out_w), 0.0f);
  col2im(col.data(), g, out.data());
  if (bias) {
    auto bv = bias->data();
    for (int64_t c = 0; c < c_b; ++c) {
      float* o = out.data() + c * out_h * out_w;
      for (int64_t i = 0; i < out_h * out_w; ++i) o[i] += bv[static_cast<size_t>(c)];
    }
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  return make_result(
      "conv_transpose2d", {c_b, out_h, out_w}, std::move(out), std::move(inputs),
      [g, c_a, c_b, patch, plane, has_bias](TensorImpl& self) {
        float* gx = grad_of_parent(self, 0);
        float* gw = grad_of_parent(self, 1);
        std::vector<float> gcol(static_cast<size_t>(patch * plane));
        im2col(self.grad.data(), g, gcol.data());
        auto gc = detail::cmat(gcol.data(), patch, plane);
        if (gx) {
          detail::mat(gx, c_a, plane).noalias() += detail::cmat(parent_data(self, 1).data(), c_a, patch) * gc;
        }
        if (gw) {
          detail::mat(gw, c_a, patch).noalias() +=
              detail::cmat(parent_data(self, 0).data(), c_a, plane) * gc.transpose();
        }
        if (has_bias) {
          if (float* gb = grad_of_parent(self, 2)) {
            const int64_t out_plane = g.height * g.width;
            for (int64_t c = 0; c < c_b; ++c) {
              double acc = 0.0;
              for (int64_t i = 0; i < out_plane; ++i) acc += self.grad[static_cast<size_t>(c * out_plane + i)];
              gb[c] += static_cast<float>(acc);
            }
          }
        }
      });
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias) {
  require_rank(x, 2, "conv1d", "input");
  require_rank(weight, 3, "conv1d", "weight");
  const int64_t d = x.dim(0), len = x.dim(1), k = weight.dim(2);
  if (weight.dim(0) != d || weight.dim(1) != 1) {
    throw ShapeError("conv1d: only depthwise weights [D,1,k] are supported, got " +
                     shape_str(weight.shape()) + " for D = " + std::to_string(d));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != d)) {
    throw ShapeError("conv1d: bias length must equal D " + std::to_string(d));
  }
  auto xv = x.data(), wv = weight.data();
  std::vector<float> out(xv.size());
  for (int64_t c = 0; c < d; ++c) {
    const float* xr = xv.data() + c * len;
    const float* wr = wv.data() + c * k;
    const float b = bias ? bias->data()[static_cast<size_t>(c)] : 0.0f;
    for (int64_t t = 0; t < len; ++t) {
      float acc = b;
      for (int64_t j = 0; j < k; ++j) {
        const int64_t s = t - (k - 1) + j;
        if (s >= 0) acc += wr[j] * xr[s];
      }
      out[static_cast<size_t>(c * len + t)] = acc;
    }
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  return make_result("conv1d", x.shape(), std::move(out), std::move(inputs),
                     [d, len, k, has_bias](TensorImpl& self) {
                       const auto& xv = parent_data(self, 0);
                       const auto& wv = parent_data(self, 1);
                       float* gx = grad_of_parent(self, 0);
                       float* gw = grad_of_parent(self, 1);
                       float* gb = has_bias ? grad_of_parent(self, 2) : nullptr;
                       for (int64_t c = 0; c < d; ++c) {
                         for (int64_t t = 0; t < len; ++t) {
                           const float g = self.grad[static_cast<size_t>(c * len + t)];
                           if (gb) gb[c] += g;
                           for (int64_t j = 0; j < k; ++j) {
                             const int64_t s = t - (k - 1) + j;
                             if (s < 0) continue;
                             if (gx) gx[c * len + s] += g * wv[static_cast<size_t>(c * k + j)];
                             if (gw) gw[c * k + j] += g * xv[static_cast<size_t>(c * len + s)];
                           }
                         }
                       }
                     });
}

namespace {

struct Tap {
  int64_t lo, hi;
  float frac;  // weight of `hi`
};

std::vector<Tap> bilinear_taps(int64_t in, int64_t out) {
  std::vector<Tap> taps(static_cast<size_t>(out));
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t o = 0; o < out; ++o) {
    double s = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const int64_t lo = static_cast<int64_t>(std::floor(s));
    const int64_t hi = std::min(lo + 1, in - 1);
    taps[static_cast<size_t>(o)] = {lo, hi, static_cast<float>(s - static_cast<double>(lo))};
  }
  return taps;
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, int64_t out_h, int64_t out_w) {
  require_rank(x, 3, "resize_bilinear", "input");
  if (out_h < 1 || out_w < 1) throw ValueError("resize_bilinear: output size must be >= 1");
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto ty = bilinear_taps(h, out_h);
  auto tx = bilinear_taps(w, out_w);
  auto xv = x.data();
  std::vector<float> out(static_cast<size_t>(c * out_h * out_w));
  for (int64_t ch = 0; ch < c; ++ch) {
    const float* src = xv.data() + ch * h * w;
    float* dst = out.data() + ch * out_h * out_w;
    for (int64_t oy = 0; oy < out_h; ++oy) {
      const Tap& a = ty[static_cast<size_t>(oy)];
      for (int64_t ox = 0; ox < out_w; ++ox) {
        const Tap& b = tx[static_cast<size_t>(ox)];
        const float top = src[a.lo * w + b.lo] * (1.0f - b.frac) + src[a.lo * w + b.hi] * b.frac;
        const float bot = src[a.hi * w + b.lo] * (1.0f - b.frac) + src[a.hi * w + b.hi] * b.frac;
        dst[oy * out_w + ox] = top * (1.0f - a.frac) + bot * a.frac;
      }
    }
  }
  return make_result("resize_bilinear", {c, out_h, out_w}, std::move(out), {x},
                     [c, h, w, out_h, out_w, ty = std::move(ty), tx = std::move(tx)](TensorImpl& self) {
                       float* gx = grad_of_parent(self, 0);
                       if (!gx) return;
                       for (int64_t ch = 0; ch < c; ++ch) {
                         float* dst = gx + ch * h * w;
                         const float* g = self.grad.data() + ch * out_h * out_w;
                         for (int64_t oy = 0; oy < out_h; ++oy) {
                           const Tap& a = ty[static_cast<size_t>(oy)];
                           for (int64_t ox = 0; ox < out_w; ++ox) {
                             const Tap& b = tx[static_cast<size_t>(ox)];
                             const float v = g[oy * out_w + ox];
                             dst[a.lo * w + b.lo] += v * (1.0f - a.frac) * (1.0f - b.frac);
                             dst[a.lo * w + b.hi] += v * (1.0f - a.frac) * b.frac;
                             dst[a.hi * w + b.lo] += v * a.frac * (1.0f - b.frac);
                             dst[a.hi * w + b.hi] += v * a.frac * b.frac;
                           }
                         }
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  auto xv = x.data();
  return make_result("reshape", std::move(shape), std::vector<float>(xv.begin(), xv.end()), {x},
                     [](TensorImpl& self) {
                       if (float* g = grad_of_parent(self, 0)) {
                         for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                       }
                     });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose", "input");
  const int64_t r = x.dim(0), c = x.dim(1);
  std::vector<float> out(static_cast<size_t>(r * c));
  detail::mat(out.data(), c, r) = detail::cmat(x.data().data(), r, c).transpose();
  return make_result("transpose", {c, r}, std::move(out), {x}, [r, c](TensorImpl& self) {
    if (float* g = grad_of_parent(self, 0)) {
      detail::mat(g, r, c) += detail::cmat(self.grad.data(), c, r).transpose();
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ValueError("concat: no inputs");
  Shape shape = parts.front().shape();
  int64_t rows = 0;
  std::vector<size_t> offsets;
  for (const auto& p : parts) {
    Shape tail(p.shape().begin() + 1, p.shape().end());
    if (p.rank() != static_cast<int64_t>(shape.size()) ||
        !std::equal(tail.begin(), tail.end(), shape.begin() + 1)) {
      throw ShapeError("concat: trailing dimensions of " + shape_str(p.shape()) + " differ from " +
                       shape_str(shape));
    }
    offsets.push_back(static_cast<size_t>(rows * (p.numel() / p.dim(0))));
    rows += p.dim(0);
  }
  shape[0] = rows;
  std::vector<float> out;
  out.reserve(static_cast<size_t>(numel(shape)));
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result("concat", std::move(shape), std::move(out), parts,
                     [offsets = std::move(offsets)](TensorImpl& self) {
                       for (size_t k = 0; k < self.parents.size(); ++k) {
                         float* g = grad_of_parent(self, k);
                         if (!g) continue;
                         const size_t n = self.parents[k]->data.size();
                         for (size_t i = 0; i < n; ++i) g[i] += self.grad[offsets[k] + i];
                       }
                     });
}

Tensor slice(const Tensor& x, int64_t begin, int64_t end) {
  if (x.rank() < 1 || begin < 0 || end > x.dim(0) || begin >= end) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for dimension 0 of " + shape_str(x.shape()));
  }
  const int64_t row = x.numel() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = end - begin;
  auto xv = x.data();
  std::vector<float> out(xv.begin() + begin * row, xv.begin() + end * row);
  const size_t offset = static_cast<size_t>(begin * row);
  return make_result("slice", std::move(shape), std::move(out), {x}, [offset](TensorImpl& self) {
    if (float* g = grad_of_parent(self, 0)) {
      for (size_t i = 0; i < self.grad.size(); ++i) g[offset + i] += self.grad[i];
    }
  });
}

Tensor reverse(const Tensor& x) {
  const int64_t n = x.dim(0);
  const int64_t row = x.numel() / n;
  auto xv = x.data();
  std::vector<float> out(xv.size());
  for (int64_t i = 0; i < n; ++i) {
    std::copy_n(xv.begin() + (n - 1 - i) * row, row, out.begin() + i * row);
  }
  return make_result("reverse", x.shape(), std::move(out), {x}, [n, row](TensorImpl& self) {
    if (float* g = grad_of_parent(self, 0)) {
      for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < row; ++j) g[(n - 1 - i) * row + j] += self.grad[static_cast<size_t>(i * row + j)];
      }
    }
  });
}

Tensor embedding(const Tensor& table, const std::vector<int64_t>& ids) {
  require_rank(table, 2, "embedding", "table");
  if (ids.empty()) throw ValueError("embedding: empty id list");
  const int64_t vocab = table.dim(0), d = table.dim(1);
  auto tv = table.data();
  std::vector<float> out;
  out.reserve(ids.size() * static_cast<size_t>(d));
  for (int64_t id : ids) {
    if (id < 0 || id >= vocab) {
      throw ValueError("embedding: id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab));
    }
    out.insert(out.end(), tv.begin() + id * d, tv.begin() + (id + 1) * d);
  }
  return make_result("embedding", {static_cast<int64_t>(ids.size()), d}, std::move(out), {table},
                     [ids, d](TensorImpl& self) {
                       float* g = grad_of_parent(self, 0);
                       if (!g) return;
                       for (size_t r = 0; r < ids.size(); ++r) {
                         for (int64_t j = 0; j < d; ++j) g[ids[r] * d + j] += self.grad[r * static_cast<size_t>(d) + static_cast<size_t>(j)];
                       }
                     });
}

Tensor gather(const Tensor& x, const std::vector<int64_t>& flat_indices) {
  if (flat_indices.empty()) throw ValueError("gather: empty index list");
  auto xv = x.data();
  std::vector<float> out;
  out.reserve(flat_indices.size());
  for (int64_t i : flat_indices) {
    if (i < 0 || i >= x.numel()) throw ShapeError("gather: index " + std::to_string(i) + " out of range");
    out.push_back(xv[static_cast<size_t>(i)]);
  }
  return make_result("gather", {static_cast<int64_t>(flat_indices.size())}, std::move(out), {x},
                     [flat_indices](TensorImpl& self) {
                       if (float* g = grad_of_parent(self, 0)) {
                         for (size_t k = 0; k < flat_indices.size(); ++k) g[flat_indices[k]] += self.grad[k];
                       }
                     });
}

}  // namespace nightrack
