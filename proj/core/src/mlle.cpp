#include "nightrack/mlle.hpp"

#include "nightrack/ops.hpp"

namespace nightrack::mlle {

namespace {

Conv conv_params(ParamBuilder b, const std::string& name, int64_t c_out, int64_t c_in_per_group, int64_t k) {
  ParamBuilder s = b.scope(name);
  return {s.uniform("weight", {c_out, c_in_per_group, k, k}, c_in_per_group * k * k),
          s.constant("bias", {c_out}, 0.0f)};
}

// Deconvolution weights are [C_in, C_out, k, k].
Conv deconv_params(ParamBuilder b, const std::string& name, int64_t c_in, int64_t c_out, int64_t k) {
  ParamBuilder s = b.scope(name);
  return {s.uniform("weight", {c_in, c_out, k, k}, c_in * k * k), s.constant("bias", {c_out}, 0.0f)};
}

IfssmParams ifssm_params(ParamBuilder b, const std::string& name, int64_t channels) {
  ParamBuilder s = b.scope(name);
  IfssmParams p;
  p.norm_gamma = s.constant("norm.gamma", {channels}, 1.0f);
  p.norm_beta = s.constant("norm.beta", {channels}, 0.0f);
  ssm::MambaConfig cfg;
  cfg.d_model = channels;
  p.mamba = ssm::mamba_block_params(s.scope("mamba"), cfg);
  return p;
}

Tensor apply(const Conv& c, const Tensor& x, Conv2dOptions opt = {}) {
  return conv2d(x, c.weight, c.bias, opt);
}

void require_image(const Tensor& image, const char* op) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError(std::string(op) + ": image must be [3, h, w], got " + shape_str(image.shape()));
  }
}

}  // namespace

EnhancerParams enhancer_params(ParamBuilder root) {
  ParamBuilder b = root.scope("mlle");
  constexpr int64_t c = kFeatureChannels;
  EnhancerParams p;
  ParamBuilder ie = b.scope("ie");
  p.ie_fuse = conv_params(ie, "fuse", c, 4, 1);
  p.ie_depthwise = conv_params(ie, "depthwise", c, 1, 5);
  p.ie_project = conv_params(ie, "project", 3, c, 1);

  ParamBuilder dr = b.scope("dr");
  p.dr_in = conv_params(dr, "in", c, 3, 3);
  for (int k = 0; k < 2; ++k) {
    const int64_t ck = c << k;
    const std::string level = std::to_string(k);
    p.dr_enc[k] = ifssm_params(dr, "enc" + level, ck);
    p.dr_down[k] = conv_params(dr, "down" + level, 2 * ck, ck, 4);
  }
  p.dr_illum_down = conv_params(dr, "illum_down", 2 * c, c, 4);
  for (int k = 1; k >= 0; --k) {
    const int64_t ck = c << k;
    const std::string level = std::to_string(k);
    p.dr_up[k] = deconv_params(dr, "up" + level, 2 * ck, ck, 2);
    p.dr_merge[k] = conv_params(dr, "merge" + level, ck, 2 * ck, 1);
    p.dr_dec[k] = ifssm_params(dr, "dec" + level, ck);
  }
  p.dr_out = conv_params(dr, "out", 3, c, 3);
  return p;
}

Tensor illumination_prior(const Tensor& image) {
  require_image(image, "illumination_prior");
  const int64_t h = image.dim(1), w = image.dim(2), plane = h * w;
  auto v = image.data();
  std::vector<float> out(static_cast<size_t>(plane));
  for (int64_t i = 0; i < plane; ++i) {
    out[static_cast<size_t>(i)] = (v[static_cast<size_t>(i)] + v[static_cast<size_t>(plane + i)] +
                                   v[static_cast<size_t>(2 * plane + i)]) / 3.0f;
  }
  return detail::make_result("illumination_prior", {h, w}, std::move(out), {image},
                             [plane](detail::TensorImpl& self) {
                               auto& p = self.parents[0];
                               if (!p->requires_grad) return;
                               float* g = p->grad_buffer();
                               for (int64_t c = 0; c < 3; ++c) {
                                 for (int64_t i = 0; i < plane; ++i) g[c * plane + i] += self.grad[static_cast<size_t>(i)] / 3.0f;
                               }
                             });
}

Tensor light_up(const Tensor& image, const Tensor& light_up_map) {
  require_image(image, "light_up");
  for (float v : light_up_map.data()) {
    if (!(v > 0.0f)) throw ValueError("light_up: light-up map must be strictly positive");
  }
  if (light_up_map.rank() == 2) return mul_spatial(image, light_up_map);
  return mul(image, light_up_map);
}

LightUpResult illumination_estimator(const Tensor& image, const Tensor& prior, const EnhancerParams& p) {
  require_image(image, "illumination_estimator");
  const int64_t h = image.dim(1), w = image.dim(2);
  if (prior.shape() != Shape{h, w}) {
    throw ShapeError("illumination_estimator: prior must be [h, w] = " + shape_str({h, w}) + ", got " +
                     shape_str(prior.shape()));
  }
  Tensor stacked = concat({image, reshape(prior, {1, h, w})});
  Tensor fused = apply(p.ie_fuse, stacked);
  Tensor features = apply(p.ie_depthwise, fused, {.stride = 1, .padding = 2, .groups = kFeatureChannels});
  Tensor map = add_scalar(softplus(apply(p.ie_project, features)), kLightUpFloor);
  return {light_up(image, map), features, map};
}

Tensor ifssm_block(const Tensor& features, const Tensor& illum, const IfssmParams& p) {
  if (features.rank() != 3) throw ShapeError("ifssm_block: features must be [c, h, w]");
  if (features.shape() != illum.shape()) {
    throw ShapeError("ifssm_block: illumination " + shape_str(illum.shape()) + " does not match features " +
                     shape_str(features.shape()));
  }
  const int64_t c = features.dim(0), h = features.dim(1), w = features.dim(2);
  Tensor tokens = transpose(reshape(mul(features, illum), {c, h * w}));
  Tensor scanned = ssm::mamba_block(layer_norm(tokens, p.norm_gamma, p.norm_beta), p.mamba);
  return add(features, reshape(transpose(scanned), {c, h, w}));
}

Tensor damage_restorer(const Tensor& lit, const Tensor& features, const EnhancerParams& p,
                       RestorerOptions options) {
  require_image(lit, "damage_restorer");
  const int64_t h = lit.dim(1), w = lit.dim(2);
  if (h % 4 != 0 || w % 4 != 0) {
    throw ValueError("damage_restorer: spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                     " is not divisible by 4");
  }
  if (features.shape() != Shape{kFeatureChannels, h, w}) {
    throw ShapeError("damage_restorer: features must be " + shape_str({kFeatureChannels, h, w}) + ", got " +
                     shape_str(features.shape()));
  }
  const Conv2dOptions down{.stride = 2, .padding = 1, .groups = 1};
  const Tensor illum[2] = {features, apply(p.dr_illum_down, features, down)};

  Tensor x = apply(p.dr_in, lit, {.stride = 1, .padding = 1, .groups = 1});
  Tensor skips[2];
  for (int k = 0; k < 2; ++k) {
    x = ifssm_block(x, illum[k], p.dr_enc[k]);
    skips[k] = options.zero_skips ? Tensor::zeros(x.shape()) : x;
    x = apply(p.dr_down[k], x, down);
  }
  for (int k = 1; k >= 0; --k) {
    x = conv_transpose2d(x, p.dr_up[k].weight, p.dr_up[k].bias, 2);
    x = apply(p.dr_merge[k], concat({x, skips[k]}));
    x = ifssm_block(x, illum[k], p.dr_dec[k]);
  }
  return apply(p.dr_out, x, {.stride = 1, .padding = 1, .groups = 1});
}

EnhanceResult enhance_detailed(const Tensor& image, const EnhancerParams& params) {
  LightUpResult lu = illumination_estimator(image, illumination_prior(image), params);
  Tensor restored = damage_restorer(lu.lit, lu.features, params);
  return {add(lu.lit, restored), lu.lit, restored, lu.features};
}

Tensor enhance(const Tensor& image, const EnhancerParams& params) {
  return enhance_detailed(image, params).enhanced;
}

Tensor enhance(const Tensor& image, const EnhancerParams& params, const EnhanceOptions& options) {
  if (options.skip_above) {
    NoGradGuard guard;
    if (mean(illumination_prior(image)).item() > *options.skip_above) return image;
  }
  return enhance(image, params);
}

namespace {

Tensor l1_batch_loss(const std::vector<std::pair<Tensor, Tensor>>& pairs, const EnhancerParams& params) {
  Tensor total;
  for (const auto& [dark, bright] : pairs) {
    Tensor l = mean(abs(sub(enhance(dark, params), bright)));
    total = total.defined() ? add(total, l) : l;
  }
  return scale(total, 1.0f / static_cast<float>(pairs.size()));
}

}  // namespace

float reconstruction_l1(const std::vector<std::pair<Tensor, Tensor>>& pairs, const EnhancerParams& params) {
  if (pairs.empty()) throw ValueError("reconstruction_l1: empty pair list");
  NoGradGuard guard;
  return l1_batch_loss(pairs, params).item();
}

TrainReport train_enhancer(const std::vector<std::pair<Tensor, Tensor>>& pairs, ParamStore& store,
                           const TrainOptions& options) {
  if (pairs.empty()) throw ValueError("train_enhancer: empty pair list");
  for (const auto& [dark, bright] : pairs) {
    if (dark.shape() != bright.shape()) throw ShapeError("train_enhancer: pair shapes differ");
  }
  const EnhancerParams params = enhancer_params(ParamBuilder(store, nullptr));
  TrainReport report;
  for (int step = 0; step < options.steps; ++step) {
    Tensor loss = l1_batch_loss(pairs, params);
    report.losses.push_back(loss.item());
    adamw_step(store, grad_of(loss), options.optimizer, "mlle.");
  }
  report.final_loss = reconstruction_l1(pairs, params);
  return report;
}

}  // namespace nightrack::mlle
