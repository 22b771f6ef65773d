#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nightrack/geometry.hpp"
#include "nightrack/losses.hpp"
#include "nightrack/mlle.hpp"
#include "nightrack/optim.hpp"
#include "nightrack/ssm.hpp"

// Vision-language tracker: crop geometry, visual and language encoders,
// cross-modal fusion, the center-based head and the per-sequence loop.
namespace nightrack::vltrack {

struct TrackerConfig {
  int64_t d_visual = 384;
  int64_t d_language = 768;
  int64_t patch_size = 16;
  int64_t template_size = 128;
  int64_t search_size = 256;
  double template_factor = 2.0;
  double search_factor = 4.0;
  int64_t visual_depth = 4;
  int64_t language_depth = 2;
  int64_t d_state = 16;
  int64_t head_channels = 64;
  int64_t max_prompt_bytes = 64;
  bool enhance = true;
  /// Crops brighter than this mean illumination skip enhancement; unset enhances every crop.
  std::optional<float> enhance_skip_above;
  ssm::ScanMode scan_mode = ssm::ScanMode::Sequential;

  int64_t grid() const { return search_size / patch_size; }
  int64_t template_tokens() const { return (template_size / patch_size) * (template_size / patch_size); }
  int64_t search_tokens() const { return grid() * grid(); }
  /// Throws ValueError when sizes, factors or depths are inconsistent.
  void validate() const;
};

inline constexpr int64_t kVocabSize = 256;
inline constexpr int64_t kClsId = 256;

// ---------------------------------------------------------------- geometry

/// Side of the square crop in frame pixels: round(factor * sqrt(w * h)), at least 1.
int64_t crop_side(const BBox& box, double factor);

struct Crop {
  Tensor patch;  // [3, out_size, out_size]
  CropTransform transform;
};

/// Square crop centered on the box, pixels outside the frame filled with the
/// frame's per-channel mean, resized to out_size. frame is [3, H, W].
Crop crop_region(const Tensor& frame, const BBox& box, double factor, int64_t out_size);

// ---------------------------------------------------------------- parameters

struct Linear {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]
};

struct Norm {
  Tensor gamma;
  Tensor beta;
};

struct VisualLayer {
  Norm norm;
  ssm::MambaBlockParams fwd;
  ssm::MambaBlockParams bwd;
};

struct LanguageLayer {
  Norm norm;
  ssm::MambaBlockParams mamba;
};

struct CmmBranch {
  Norm norm;
  Linear proj;  // D1 -> D_inner
  ssm::ScanBranchParams scan;
};

struct CmmParams {
  ssm::MambaConfig config;  // d_model = D1
  CmmBranch v;
  CmmBranch vl;
  Tensor out_proj;  // [D1, D_inner]
};

struct HeadBranch {
  Linear conv1;  // weight [C, D1, 3, 3]
  Linear conv2;  // weight [k, C, 1, 1]
};

struct HeadParams {
  HeadBranch score;   // k = 1
  HeadBranch offset;  // k = 2
  HeadBranch size;    // k = 2
};

struct TrackerParams {
  TrackerConfig config;
  Linear patch_embed;  // [D1, patch*patch*3]
  std::vector<VisualLayer> visual;
  Norm visual_norm;
  Tensor language_embed;  // [kVocabSize + 1, D2]
  std::vector<LanguageLayer> language;
  Norm language_norm;
  Linear language_proj;  // D2 -> D1
  CmmParams cmm;
  HeadParams head;
};

/// Declares every tracker parameter under "vltrack." (create with a
/// generator, bind without one).
TrackerParams tracker_params(ParamBuilder builder, const TrackerConfig& config);

// ---------------------------------------------------------------- encoders

/// Non-overlapping patch x patch x 3 blocks of patch[3, S, S], each flattened
/// row-major with channels innermost, projected to D1. Returns [(S/patch)^2, D1].
Tensor patch_embed(const Tensor& patch, const Linear& proj, int64_t patch_size);

struct VisualEmbeddings {
  Tensor z;  // [N_z, D1]
  Tensor x;  // [N_x, D1]
};

/// Joint encoding of [z; x] through the bidirectional stack, split back at N_z.
VisualEmbeddings visual_encode(const Tensor& tokens_z, const Tensor& tokens_x, const TrackerParams& params);

/// Byte-level ids with the class token first; the prompt is truncated to
/// max_bytes bytes. Throws ValueError on an empty prompt.
std::vector<int64_t> tokenize_prompt(const std::string& prompt, int64_t max_bytes = 64);

/// [N_t, D1] language embeddings, row 0 being the class token. The stack runs
/// from the last token towards the first so the class row summarizes the prompt.
Tensor language_encode(const std::vector<int64_t>& ids, const TrackerParams& params);

// ---------------------------------------------------------------- fusion

/// H_x scaled row-wise by the class-token row H_t[0].
Tensor inject_language(const Tensor& h_x, const Tensor& h_t);

struct Fused {
  Tensor z;  // [N_z, D1]
  Tensor x;  // [N_x, D1]
};

/// Gated cross-modal fusion over H_vl = [inject(H_x); H_z] and H_v = [H_x; H_z]:
/// h_m = Linear_m(Norm_m(H_m)), y_m = SSM(SiLU(Conv(h_m))), z_m = y_m * SiLU(h_v),
/// output = out_proj(z_v + z_vl) + H_v.
Fused cmm_fuse(const Tensor& h_z, const Tensor& h_x, const Tensor& h_t, const CmmParams& params,
               ssm::ScanMode mode = ssm::ScanMode::Sequential);

// ---------------------------------------------------------------- head

struct HeadOutput {
  Tensor score;   // [G, G], post-sigmoid
  Tensor offset;  // [2, G, G], (x, y) cell fractions
  Tensor size;    // [2, G, G], (w, h) as fractions of the search side
};

/// h_x is [G*G, D1] in row-major grid order.
HeadOutput head_forward(const Tensor& h_x, const HeadParams& params, int64_t grid);

struct Cell {
  int64_t row = 0;
  int64_t col = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

/// Argmax of a [G, G] score map; ties go to the lowest row-major index.
Cell peak_cell(const Tensor& score);

/// Box target on the head's grid: peak cell, in-cell offsets and normalized size.
struct EncodedBox {
  Cell cell;
  double off_x = 0.0, off_y = 0.0;
  double w = 0.0, h = 0.0;  // fractions of the search side
};

/// Inverse of decode_cell for a box in search-crop pixels.
EncodedBox encode_box(const BBox& crop_box, int64_t grid, int64_t search_size);
BBox decode_cell(const EncodedBox& e, int64_t grid, int64_t search_size);

/// Box in search-crop pixels read at the score peak.
BBox decode_head(const HeadOutput& out, int64_t search_size);

// ---------------------------------------------------------------- model

struct Model {
  TrackerParams tracker;
  std::optional<mlle::EnhancerParams> enhancer;  // present when config.enhance
};

/// Fresh, seeded weights for the tracker and, when enabled, the enhancer.
ParamStore init_weights(uint64_t seed, const TrackerConfig& config);
/// Binds a model to a store that holds the required entries.
Model bind_model(ParamStore& store, const TrackerConfig& config);

struct TrackState {
  Tensor template_tokens;  // [N_z, D1]
  Tensor language;         // [N_t, D1]
  BBox box;
  CropTransform last_transform;
};

class Tracker {
 public:
  explicit Tracker(const Model& model) : model_(&model) {}

  void init(const Tensor& frame, const BBox& box, const std::string& prompt);
  /// Predicts the box in the next frame and updates the state.
  BBox update(const Tensor& frame);
  const TrackState& state() const { return state_; }

 private:
  Tensor prepare(const Tensor& patch) const;

  const Model* model_;
  TrackState state_;
  int64_t frame_w_ = 0, frame_h_ = 0;
};

/// Clamps a box into a W x H frame, keeping at least one pixel of extent.
BBox clamp_box(const BBox& box, int64_t width, int64_t height);

/// Runs the tracker over frame_count frames; load(i) returns frame i as
/// [3, H, W]. Element 0 of the result is init_box.
std::vector<BBox> track_sequence(size_t frame_count, const std::function<Tensor(size_t)>& load,
                                 const BBox& init_box, const std::string& prompt, const Model& model);

// ---------------------------------------------------------------- training

struct TrainOptions {
  int steps = 500;
  AdamWOptions optimizer{.lr = 3e-4f};
  losses::LossWeights weights{};
  /// Search crops are centered on the ground truth shifted by up to this
  /// fraction of sqrt(w h) per axis.
  double center_jitter = 0.5;
  /// The crop box side is scaled by exp(u), u uniform in [-scale_jitter, scale_jitter].
  double scale_jitter = 0.3;
  uint64_t seed = 1;
};

struct TrainReport {
  std::vector<float> losses;
};

/// Per-sample training loss on one (template, search) pair; gt_crop is the
/// target in search-crop pixels.
Tensor sample_loss(const Tensor& template_patch, const Tensor& search_patch, const BBox& gt_crop,
                   const std::vector<int64_t>& prompt_ids, const TrackerParams& params,
                   const losses::LossWeights& weights = {});

/// Fits the "vltrack." entries of the store to one annotated sequence with
/// one sample per step. Enhancement is not applied.
TrainReport train_tracker(const std::vector<Tensor>& frames, const std::vector<BBox>& boxes,
                          const std::string& prompt, ParamStore& store, const TrackerConfig& config,
                          const TrainOptions& options = {});

// ---------------------------------------------------------------- synthetic data

struct SyntheticSequence {
  std::vector<Tensor> frames;  // [3, H, W] in [0, 1]
  std::vector<BBox> boxes;
  std::string prompt;
};

struct SyntheticOptions {
  int64_t frames = 20;
  int64_t width = 160;
  int64_t height = 160;
  double target_size = 32.0;
  double start_x = 40.0, start_y = 48.0;
  double step_x = 3.0, step_y = 2.0;
  /// Multiplies every pixel, mimicking a dark scene.
  float brightness = 1.0f;
  uint64_t seed = 3;
};

/// Textured square moving linearly over a noise background.
SyntheticSequence make_synthetic_sequence(const SyntheticOptions& options = {});

}  // namespace nightrack::vltrack
