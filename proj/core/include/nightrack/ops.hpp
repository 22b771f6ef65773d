#pragma once

#include <optional>
#include <vector>

#include "nightrack/tensor.hpp"

namespace nightrack {

// Elementwise arithmetic. Operands must have identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float factor);
Tensor add_scalar(const Tensor& a, float value);

/// x[..., D] * v[D], the row vector broadcast over every leading index.
Tensor mul_rows(const Tensor& x, const Tensor& v);
/// x[C, H, W] * m[H, W], the map broadcast over channels.
Tensor mul_spatial(const Tensor& x, const Tensor& m);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor abs(const Tensor& x);

/// Affine map over the trailing axis: y = x W^T + b, W of shape [D_out, D_in].
Tensor linear(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias = std::nullopt);

inline constexpr float kLayerNormEps = 1e-5f;

/// Normalizes each row of the trailing axis to zero mean and unit variance,
/// then applies gamma and beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  float eps = kLayerNormEps);

struct Conv2dOptions {
  int64_t stride = 1;
  int64_t padding = 0;
  int64_t groups = 1;
};

/// Cross-correlation of x[C_in, H, W] with weight[C_out, C_in/groups, kh, kw].
Tensor conv2d(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias = std::nullopt,
              Conv2dOptions options = {});

/// Adjoint of conv2d with respect to its input: x[C_a, H, W] and
/// weight[C_a, C_b, k, k] give [C_b, (H-1)*stride+k, (W-1)*stride+k].
Tensor conv_transpose2d(const Tensor& x, const Tensor& weight,
                        const std::optional<Tensor>& bias = std::nullopt, int64_t stride = 1);

/// Causal depthwise convolution along the sequence axis of x[D, L] with
/// weight[D, 1, k]; position t sees inputs t-k+1 .. t (left zero padding).
Tensor conv1d(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias = std::nullopt);

/// Bilinear resampling of x[C, H, W] with half-pixel centers, no corner
/// alignment, edge clamping.
Tensor resize_bilinear(const Tensor& x, int64_t out_h, int64_t out_w);

// Shape manipulation. All copy.
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);  // rank 2
Tensor concat(const std::vector<Tensor>& parts);  // along axis 0
Tensor slice(const Tensor& x, int64_t begin, int64_t end);  // rows [begin, end) of axis 0
Tensor reverse(const Tensor& x);  // order of axis 0

/// Rows of table[V, D] selected by ids.
Tensor embedding(const Tensor& table, const std::vector<int64_t>& ids);
/// Flat elements of x at the given indices, as a rank-1 tensor.
Tensor gather(const Tensor& x, const std::vector<int64_t>& flat_indices);

}  // namespace nightrack
