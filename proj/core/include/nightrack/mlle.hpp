#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "nightrack/optim.hpp"
#include "nightrack/ssm.hpp"

// Low-light enhancer. Images are channel-first [3, h, w] with values in
// [0, 1]; illumination maps are [h, w].
namespace nightrack::mlle {

/// Channel count of the light-up feature map.
inline constexpr int64_t kFeatureChannels = 40;
/// Floor added after softplus so the light-up map stays strictly positive.
inline constexpr float kLightUpFloor = 1e-3f;

struct Conv {
  Tensor weight;
  Tensor bias;
};

struct IfssmParams {
  Tensor norm_gamma;
  Tensor norm_beta;
  ssm::MambaBlockParams mamba;
};

struct EnhancerParams {
  // illumination estimator
  Conv ie_fuse;     // 1x1, 4 -> 40
  Conv ie_depthwise;  // depthwise 5x5 on 40
  Conv ie_project;  // 1x1, 40 -> 3

  // damage restorer; level 0 runs at full resolution with 40 channels, level 1
  // at half resolution with 80, the bottleneck at quarter resolution with 160.
  Conv dr_in;                  // 3x3, 3 -> 40
  IfssmParams dr_enc[2];
  Conv dr_down[2];             // 4x4 stride 2, c -> 2c
  Conv dr_illum_down;          // 4x4 stride 2, 40 -> 80, illumination for level 1
  Conv dr_up[2];               // deconv 2x2 stride 2, 2c -> c
  Conv dr_merge[2];            // 1x1, 2c -> c
  IfssmParams dr_dec[2];
  Conv dr_out;                 // 3x3, 40 -> 3
};

/// Declares the enhancer under "mlle." (create with a generator, else bind).
EnhancerParams enhancer_params(ParamBuilder builder);

/// Per-pixel mean over the three channels.
Tensor illumination_prior(const Tensor& image);

/// image * light_up_map; the map is [h, w] (broadcast over channels) or
/// [3, h, w]. Every map element must be positive.
Tensor light_up(const Tensor& image, const Tensor& light_up_map);

struct LightUpResult {
  Tensor lit;           // I_lu, [3, h, w]
  Tensor features;      // F_lu, [40, h, w]
  Tensor light_up_map;  // [3, h, w]
};

LightUpResult illumination_estimator(const Tensor& image, const Tensor& prior, const EnhancerParams& params);

/// Illumination-modulated scan block: features + unflatten(mamba(LN(flatten(features * illum)))),
/// with pixels flattened row-major into a token sequence.
Tensor ifssm_block(const Tensor& features, const Tensor& illum, const IfssmParams& params);

struct RestorerOptions {
  /// Replaces the encoder tensors fed to the skip concatenations with zeros.
  bool zero_skips = false;
};

/// U-shaped restorer returning the residual I_re of shape [3, h, w].
/// h and w must be divisible by 4.
Tensor damage_restorer(const Tensor& lit, const Tensor& features, const EnhancerParams& params,
                       RestorerOptions options = {});

struct EnhanceResult {
  Tensor enhanced;  // I_en = I_lu + I_re
  Tensor lit;
  Tensor restored;
  Tensor features;
};

EnhanceResult enhance_detailed(const Tensor& image, const EnhancerParams& params);
Tensor enhance(const Tensor& image, const EnhancerParams& params);

struct EnhanceOptions {
  /// When set, images whose mean illumination prior exceeds this value are
  /// returned unchanged. Unset means every image is enhanced.
  std::optional<float> skip_above;
};

Tensor enhance(const Tensor& image, const EnhancerParams& params, const EnhanceOptions& options);

struct TrainOptions {
  int steps = 200;
  AdamWOptions optimizer{};
};

struct TrainReport {
  std::vector<float> losses;  // mean L1 before each step
  float final_loss = 0.0f;    // after the last step
};

/// Full-batch L1 reconstruction training of the trainable "mlle." entries.
TrainReport train_enhancer(const std::vector<std::pair<Tensor, Tensor>>& pairs, ParamStore& store,
                           const TrainOptions& options = {});

/// Mean |enhance(dark) - bright| over the pairs, without recording.
float reconstruction_l1(const std::vector<std::pair<Tensor, Tensor>>& pairs, const EnhancerParams& params);

}  // namespace nightrack::mlle
