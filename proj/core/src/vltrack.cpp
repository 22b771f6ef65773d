#include "nightrack/vltrack.hpp"

#include <algorithm>
#include <cmath>

#include "nightrack/ops.hpp"

namespace nightrack::vltrack {

void TrackerConfig::validate() const {
  if (d_visual < 1 || d_language < 1 || d_state < 1 || head_channels < 1) {
    throw ValueError("tracker config: dimensions must be positive");
  }
  if (patch_size < 1 || template_size % patch_size != 0 || search_size % patch_size != 0) {
    throw ValueError("tracker config: template " + std::to_string(template_size) + " and search " +
                     std::to_string(search_size) + " sizes must be multiples of the patch size " +
                     std::to_string(patch_size));
  }
  if (template_size % 4 != 0 || search_size % 4 != 0) {
    throw ValueError("tracker config: crop sizes must be divisible by 4");
  }
  if (!(template_factor > 0.0) || !(search_factor > 0.0)) {
    throw ValueError("tracker config: crop factors must be positive");
  }
  if (visual_depth < 0 || language_depth < 0) throw ValueError("tracker config: negative depth");
  if (max_prompt_bytes < 1) throw ValueError("tracker config: max_prompt_bytes must be positive");
}

// ---------------------------------------------------------------- geometry

int64_t crop_side(const BBox& box, double factor) {
  if (!box.valid()) throw ValueError("crop_region: degenerate box");
  if (!(factor > 0.0)) throw ValueError("crop_region: factor must be positive");
  return std::max<int64_t>(1, std::llround(factor * std::sqrt(box.w * box.h)));
}

Crop crop_region(const Tensor& frame, const BBox& box, double factor, int64_t out_size) {
  if (frame.rank() != 3 || frame.dim(0) != 3) {
    throw ShapeError("crop_region: frame must be [3, H, W], got " + shape_str(frame.shape()));
  }
  if (out_size < 1) throw ValueError("crop_region: out_size must be positive");
  const int64_t side = crop_side(box, factor);
  const int64_t fh = frame.dim(1), fw = frame.dim(2), plane = fh * fw;
  const int64_t x0 = std::llround(box.cx() - 0.5 * static_cast<double>(side));
  const int64_t y0 = std::llround(box.cy() - 0.5 * static_cast<double>(side));

  auto src = frame.data();
  float fill[3];
  for (int64_t c = 0; c < 3; ++c) {
    double s = 0.0;
    for (int64_t i = 0; i < plane; ++i) s += src[static_cast<size_t>(c * plane + i)];
    fill[c] = static_cast<float>(s / static_cast<double>(plane));
  }

  std::vector<float> region(static_cast<size_t>(3 * side * side));
  for (int64_t c = 0; c < 3; ++c) {
    for (int64_t r = 0; r < side; ++r) {
      const int64_t y = y0 + r;
      for (int64_t q = 0; q < side; ++q) {
        const int64_t x = x0 + q;
        const bool inside = y >= 0 && y < fh && x >= 0 && x < fw;
        region[static_cast<size_t>((c * side + r) * side + q)] =
            inside ? src[static_cast<size_t>(c * plane + y * fw + x)] : fill[c];
      }
    }
  }
  NoGradGuard guard;
  Tensor patch = Tensor({3, side, side}, std::move(region));
  if (side != out_size) patch = resize_bilinear(patch, out_size, out_size);
  const CropTransform t{static_cast<double>(x0), static_cast<double>(y0),
                        static_cast<double>(out_size) / static_cast<double>(side)};
  return {patch, t};
}

// ---------------------------------------------------------------- parameters

namespace {

Norm norm_params(ParamBuilder b, int64_t dim) {
  return {b.constant("gamma", {dim}, 1.0f), b.constant("beta", {dim}, 0.0f)};
}

Linear linear_params(ParamBuilder b, int64_t out, int64_t in) {
  return {b.uniform("weight", {out, in}, in), b.constant("bias", {out}, 0.0f)};
}

HeadBranch head_branch(ParamBuilder b, int64_t d, int64_t c, int64_t k, float out_bias) {
  HeadBranch h;
  h.conv1 = {b.uniform("conv1.weight", {c, d, 3, 3}, d * 9), b.constant("conv1.bias", {c}, 0.0f)};
  h.conv2 = {b.uniform("conv2.weight", {k, c, 1, 1}, c), b.constant("conv2.bias", {k}, out_bias)};
  return h;
}

CmmBranch cmm_branch(ParamBuilder b, const ssm::MambaConfig& cfg) {
  CmmBranch br;
  br.norm = norm_params(b.scope("norm"), cfg.d_model);
  br.proj = linear_params(b.scope("proj"), cfg.d_inner(), cfg.d_model);
  br.scan = ssm::scan_branch_params(b.scope("scan"), cfg);
  return br;
}

}  // namespace

TrackerParams tracker_params(ParamBuilder root, const TrackerConfig& cfg) {
  cfg.validate();
  ParamBuilder b = root.scope("vltrack");
  const int64_t d1 = cfg.d_visual, d2 = cfg.d_language;
  TrackerParams p;
  p.config = cfg;
  p.patch_embed = linear_params(b.scope("patch_embed"), d1, cfg.patch_size * cfg.patch_size * 3);

  ssm::MambaConfig vcfg;
  vcfg.d_model = d1;
  vcfg.d_state = cfg.d_state;
  for (int64_t i = 0; i < cfg.visual_depth; ++i) {
    ParamBuilder l = b.scope("vim").scope("layer" + std::to_string(i));
    p.visual.push_back({norm_params(l.scope("norm"), d1), ssm::mamba_block_params(l.scope("fwd"), vcfg),
                        ssm::mamba_block_params(l.scope("bwd"), vcfg)});
  }
  p.visual_norm = norm_params(b.scope("vim").scope("norm"), d1);

  ParamBuilder lang = b.scope("lang");
  p.language_embed = lang.uniform("embed", {kVocabSize + 1, d2}, 1);
  ssm::MambaConfig lcfg;
  lcfg.d_model = d2;
  lcfg.d_state = cfg.d_state;
  for (int64_t i = 0; i < cfg.language_depth; ++i) {
    ParamBuilder l = lang.scope("layer" + std::to_string(i));
    p.language.push_back({norm_params(l.scope("norm"), d2), ssm::mamba_block_params(l.scope("mamba"), lcfg)});
  }
  p.language_norm = norm_params(lang.scope("norm"), d2);
  p.language_proj = linear_params(lang.scope("proj"), d1, d2);

  ParamBuilder cmm = b.scope("cmm");
  p.cmm.config = vcfg;
  p.cmm.v = cmm_branch(cmm.scope("v"), vcfg);
  p.cmm.vl = cmm_branch(cmm.scope("vl"), vcfg);
  p.cmm.out_proj = cmm.uniform("out_proj", {d1, vcfg.d_inner()}, vcfg.d_inner());

  ParamBuilder head = b.scope("head");
  const int64_t c = cfg.head_channels;
  // Score bias starts at logit(0.01) so the untrained map is mostly background.
  p.head.score = head_branch(head.scope("score"), d1, c, 1, -4.595f);
  p.head.offset = head_branch(head.scope("offset"), d1, c, 2, 0.0f);
  p.head.size = head_branch(head.scope("size"), d1, c, 2, 0.0f);
  return p;
}

// ---------------------------------------------------------------- encoders

Tensor patch_embed(const Tensor& patch, const Linear& proj, int64_t ps) {
  if (patch.rank() != 3 || patch.dim(0) != 3) {
    throw ShapeError("patch_embed: patch must be [3, S, S], got " + shape_str(patch.shape()));
  }
  const int64_t hgt = patch.dim(1), wid = patch.dim(2);
  if (hgt % ps != 0 || wid % ps != 0) {
    throw ValueError("patch_embed: side " + std::to_string(hgt) + "x" + std::to_string(wid) +
                     " is not divisible by the patch size " + std::to_string(ps));
  }
  const int64_t gh = hgt / ps, gw = wid / ps;
  std::vector<int64_t> idx;
  idx.reserve(static_cast<size_t>(3 * hgt * wid));
  for (int64_t i = 0; i < gh; ++i) {
    for (int64_t j = 0; j < gw; ++j) {
      for (int64_t py = 0; py < ps; ++py) {
        for (int64_t px = 0; px < ps; ++px) {
          for (int64_t c = 0; c < 3; ++c) idx.push_back((c * hgt + i * ps + py) * wid + j * ps + px);
        }
      }
    }
  }
  Tensor rows = reshape(gather(patch, idx), {gh * gw, ps * ps * 3});
  return linear(rows, proj.weight, proj.bias);
}

VisualEmbeddings visual_encode(const Tensor& tokens_z, const Tensor& tokens_x, const TrackerParams& p) {
  const int64_t d1 = p.config.d_visual;
  if (tokens_z.rank() != 2 || tokens_z.dim(1) != d1 || tokens_x.rank() != 2 || tokens_x.dim(1) != d1) {
    throw ShapeError("visual_encode: tokens must be [N, " + std::to_string(d1) + "], got " +
                     shape_str(tokens_z.shape()) + " and " + shape_str(tokens_x.shape()));
  }
  const int64_t nz = tokens_z.dim(0), total = nz + tokens_x.dim(0);
  Tensor t = concat({tokens_z, tokens_x});
  for (const auto& layer : p.visual) {
    Tensor normed = layer_norm(t, layer.norm.gamma, layer.norm.beta);
    t = add(t, ssm::bidirectional_mamba(normed, layer.fwd, layer.bwd, p.config.scan_mode));
  }
  t = layer_norm(t, p.visual_norm.gamma, p.visual_norm.beta);
  return {slice(t, 0, nz), slice(t, nz, total)};
}

std::vector<int64_t> tokenize_prompt(const std::string& prompt, int64_t max_bytes) {
  if (prompt.empty()) throw ValueError("tokenize_prompt: empty prompt");
  std::vector<int64_t> ids{kClsId};
  const size_t n = std::min(prompt.size(), static_cast<size_t>(max_bytes));
  for (size_t i = 0; i < n; ++i) ids.push_back(static_cast<unsigned char>(prompt[i]));
  return ids;
}

Tensor language_encode(const std::vector<int64_t>& ids, const TrackerParams& p) {
  if (ids.empty()) throw ValueError("language_encode: no tokens");
  for (int64_t id : ids) {
    if (id < 0 || id > kVocabSize) {
      throw ValueError("language_encode: token id " + std::to_string(id) + " is outside the vocabulary");
    }
  }
  Tensor t = reverse(embedding(p.language_embed, ids));
  for (const auto& layer : p.language) {
    Tensor normed = layer_norm(t, layer.norm.gamma, layer.norm.beta);
    t = add(t, ssm::mamba_block(normed, layer.mamba, p.config.scan_mode));
  }
  t = reverse(layer_norm(t, p.language_norm.gamma, p.language_norm.beta));
  return linear(t, p.language_proj.weight, p.language_proj.bias);
}

// ---------------------------------------------------------------- fusion

Tensor inject_language(const Tensor& h_x, const Tensor& h_t) {
  if (h_t.rank() != 2 || h_x.rank() != 2 || h_t.dim(1) != h_x.dim(1)) {
    throw ShapeError("inject_language: search " + shape_str(h_x.shape()) + " and language " +
                     shape_str(h_t.shape()) + " embeddings disagree");
  }
  return mul_rows(h_x, reshape(slice(h_t, 0, 1), {h_t.dim(1)}));
}

Fused cmm_fuse(const Tensor& h_z, const Tensor& h_x, const Tensor& h_t, const CmmParams& p, ssm::ScanMode mode) {
  const int64_t d1 = p.config.d_model;
  if (h_z.rank() != 2 || h_z.dim(1) != d1 || h_x.rank() != 2 || h_x.dim(1) != d1) {
    throw ShapeError("cmm_fuse: embeddings must be [N, " + std::to_string(d1) + "], got " +
                     shape_str(h_z.shape()) + " and " + shape_str(h_x.shape()));
  }
  const int64_t nx = h_x.dim(0), total = nx + h_z.dim(0);
  Tensor h_vis = concat({h_x, h_z});
  Tensor h_vl = concat({inject_language(h_x, h_t), h_z});

  auto project = [](const Tensor& h, const CmmBranch& br) {
    return linear(layer_norm(h, br.norm.gamma, br.norm.beta), br.proj.weight, br.proj.bias);
  };
  Tensor f_v = project(h_vis, p.v);
  Tensor f_vl = project(h_vl, p.vl);
  Tensor gate = silu(f_v);
  Tensor z_v = mul(ssm::scan_branch(f_v, p.config, p.v.scan, mode), gate);
  Tensor z_vl = mul(ssm::scan_branch(f_vl, p.config, p.vl.scan, mode), gate);
  Tensor out = add(linear(add(z_v, z_vl), p.out_proj), h_vis);
  return {slice(out, nx, total), slice(out, 0, nx)};
}

// ---------------------------------------------------------------- head

namespace {

Tensor branch_forward(const Tensor& map, const HeadBranch& b) {
  Tensor hidden = relu(conv2d(map, b.conv1.weight, b.conv1.bias, {.stride = 1, .padding = 1, .groups = 1}));
  return sigmoid(conv2d(hidden, b.conv2.weight, b.conv2.bias));
}

}  // namespace

HeadOutput head_forward(const Tensor& h_x, const HeadParams& p, int64_t grid) {
  if (h_x.rank() != 2 || h_x.dim(0) != grid * grid) {
    throw ShapeError("head_forward: expected " + std::to_string(grid * grid) + " search tokens, got " +
                     shape_str(h_x.shape()));
  }
  Tensor map = reshape(transpose(h_x), {h_x.dim(1), grid, grid});
  return {reshape(branch_forward(map, p.score), {grid, grid}), branch_forward(map, p.offset),
          branch_forward(map, p.size)};
}

Cell peak_cell(const Tensor& score) {
  if (score.rank() != 2) throw ShapeError("peak_cell: score must be [G, G]");
  auto v = score.data();
  size_t best = 0;
  for (size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  const int64_t g = score.dim(1);
  return {static_cast<int64_t>(best) / g, static_cast<int64_t>(best) % g};
}

EncodedBox encode_box(const BBox& b, int64_t grid, int64_t search_size) {
  const double cell = static_cast<double>(search_size) / static_cast<double>(grid);
  const double gx = b.cx() / cell, gy = b.cy() / cell;
  EncodedBox e;
  e.cell.col = std::clamp<int64_t>(static_cast<int64_t>(std::floor(gx)), 0, grid - 1);
  e.cell.row = std::clamp<int64_t>(static_cast<int64_t>(std::floor(gy)), 0, grid - 1);
  e.off_x = gx - static_cast<double>(e.cell.col);
  e.off_y = gy - static_cast<double>(e.cell.row);
  e.w = b.w / static_cast<double>(search_size);
  e.h = b.h / static_cast<double>(search_size);
  return e;
}

BBox decode_cell(const EncodedBox& e, int64_t grid, int64_t search_size) {
  const double s = static_cast<double>(search_size), g = static_cast<double>(grid);
  const double cx = (static_cast<double>(e.cell.col) + e.off_x) / g * s;
  const double cy = (static_cast<double>(e.cell.row) + e.off_y) / g * s;
  return BBox::from_center(cx, cy, e.w * s, e.h * s);
}

BBox decode_head(const HeadOutput& out, int64_t search_size) {
  const int64_t g = out.score.dim(0);
  EncodedBox e;
  e.cell = peak_cell(out.score);
  e.off_x = out.offset.at({0, e.cell.row, e.cell.col});
  e.off_y = out.offset.at({1, e.cell.row, e.cell.col});
  e.w = out.size.at({0, e.cell.row, e.cell.col});
  e.h = out.size.at({1, e.cell.row, e.cell.col});
  return decode_cell(e, g, search_size);
}

// ---------------------------------------------------------------- model

ParamStore init_weights(uint64_t seed, const TrackerConfig& config) {
  ParamStore store;
  Rng rng(seed);
  if (config.enhance) mlle::enhancer_params(ParamBuilder(store, &rng));
  tracker_params(ParamBuilder(store, &rng), config);
  return store;
}

Model bind_model(ParamStore& store, const TrackerConfig& config) {
  Model m;
  m.tracker = tracker_params(ParamBuilder(store, nullptr), config);
  if (config.enhance) m.enhancer = mlle::enhancer_params(ParamBuilder(store, nullptr));
  return m;
}

BBox clamp_box(const BBox& b, int64_t width, int64_t height) {
  const double fw = static_cast<double>(width), fh = static_cast<double>(height);
  BBox out;
  out.w = std::clamp(b.w, 1.0, fw);
  out.h = std::clamp(b.h, 1.0, fh);
  out.x = std::clamp(b.x, 0.0, fw - out.w);
  out.y = std::clamp(b.y, 0.0, fh - out.h);
  return out;
}

Tensor Tracker::prepare(const Tensor& patch) const {
  if (!model_->enhancer) return patch;
  return mlle::enhance(patch, *model_->enhancer, {model_->tracker.config.enhance_skip_above});
}

void Tracker::init(const Tensor& frame, const BBox& box, const std::string& prompt) {
  const TrackerParams& p = model_->tracker;
  NoGradGuard guard;
  Crop z = crop_region(frame, box, p.config.template_factor, p.config.template_size);
  state_.template_tokens = patch_embed(prepare(z.patch), p.patch_embed, p.config.patch_size);
  state_.language = language_encode(tokenize_prompt(prompt, p.config.max_prompt_bytes), p);
  state_.box = box;
  state_.last_transform = z.transform;
  frame_h_ = frame.dim(1);
  frame_w_ = frame.dim(2);
}

BBox Tracker::update(const Tensor& frame) {
  if (!state_.template_tokens.defined()) throw ValueError("Tracker::update called before init");
  const TrackerParams& p = model_->tracker;
  NoGradGuard guard;
  Crop x = crop_region(frame, state_.box, p.config.search_factor, p.config.search_size);
  Tensor tokens_x = patch_embed(prepare(x.patch), p.patch_embed, p.config.patch_size);
  VisualEmbeddings v = visual_encode(state_.template_tokens, tokens_x, p);
  Fused f = cmm_fuse(v.z, v.x, state_.language, p.cmm, p.config.scan_mode);
  HeadOutput head = head_forward(f.x, p.head, p.config.grid());
  const BBox box = clamp_box(x.transform.to_frame(decode_head(head, p.config.search_size)), frame.dim(2),
                             frame.dim(1));
  state_.box = box;
  state_.last_transform = x.transform;
  return box;
}

std::vector<BBox> track_sequence(size_t frame_count, const std::function<Tensor(size_t)>& load,
                                 const BBox& init_box, const std::string& prompt, const Model& model) {
  if (frame_count == 0) throw ValueError("track_sequence: no frames");
  if (!init_box.valid()) throw ValueError("track_sequence: initial box is degenerate");
  Tracker tracker(model);
  tracker.init(load(0), init_box, prompt);
  std::vector<BBox> boxes{init_box};
  for (size_t i = 1; i < frame_count; ++i) boxes.push_back(tracker.update(load(i)));
  return boxes;
}

// ---------------------------------------------------------------- training

Tensor sample_loss(const Tensor& template_patch, const Tensor& search_patch, const BBox& gt_crop,
                   const std::vector<int64_t>& prompt_ids, const TrackerParams& p,
                   const losses::LossWeights& weights) {
  const TrackerConfig& cfg = p.config;
  const int64_t g = cfg.grid();
  const double s = static_cast<double>(cfg.search_size);

  Tensor tz = patch_embed(template_patch, p.patch_embed, cfg.patch_size);
  Tensor tx = patch_embed(search_patch, p.patch_embed, cfg.patch_size);
  VisualEmbeddings v = visual_encode(tz, tx, p);
  Fused f = cmm_fuse(v.z, v.x, language_encode(prompt_ids, p), p.cmm, cfg.scan_mode);
  HeadOutput head = head_forward(f.x, p.head, g);

  const EncodedBox e = encode_box(gt_crop, g, cfg.search_size);
  const double cell = s / static_cast<double>(g);
  const double sigma = losses::gaussian_sigma(gt_crop.w / cell, gt_crop.h / cell);
  Tensor focal = losses::focal_loss(head.score, losses::gaussian_target(e.cell.row, e.cell.col, sigma, g));

  // Box read at the ground-truth cell, in units of the search side.
  const int64_t at = e.cell.row * g + e.cell.col;
  Tensor off = gather(head.offset, {at, g * g + at});
  // A saturated sigmoid can reach exactly zero in float; keep the extent positive.
  Tensor size = add_scalar(gather(head.size, {at, g * g + at}), 1e-6f);
  Tensor cell_origin({2}, {static_cast<float>(e.cell.col), static_cast<float>(e.cell.row)});
  Tensor center = scale(add(off, cell_origin), 1.0f / static_cast<float>(g));
  Tensor corner = sub(center, scale(size, 0.5f));
  Tensor pred = concat({corner, size});
  const BBox gt_norm{gt_crop.x / s, gt_crop.y / s, gt_crop.w / s, gt_crop.h / s};

  return losses::total_loss(losses::l1_loss(pred, gt_norm), losses::giou_loss(pred, gt_norm), focal, weights);
}

TrainReport train_tracker(const std::vector<Tensor>& frames, const std::vector<BBox>& boxes,
                          const std::string& prompt, ParamStore& store, const TrackerConfig& config,
                          const TrainOptions& options) {
  if (frames.size() < 2 || frames.size() != boxes.size()) {
    throw ValueError("train_tracker: need at least two frames with one box each");
  }
  const TrackerParams p = tracker_params(ParamBuilder(store, nullptr), config);
  const std::vector<int64_t> ids = tokenize_prompt(prompt, config.max_prompt_bytes);
  const Crop z = crop_region(frames[0], boxes[0], config.template_factor, config.template_size);
  Rng rng(options.seed);
  TrainReport report;
  for (int step = 0; step < options.steps; ++step) {
    const size_t k = 1 + static_cast<size_t>(rng.below(static_cast<int64_t>(frames.size() - 1)));
    const BBox& gt = boxes[k];
    const double reach = options.center_jitter * std::sqrt(gt.w * gt.h);
    const double zoom = std::exp(options.scale_jitter * rng.uniform(-1.0f, 1.0f));
    BBox center = BBox::from_center(gt.cx() + rng.uniform(-1.0f, 1.0f) * reach,
                                    gt.cy() + rng.uniform(-1.0f, 1.0f) * reach, gt.w * zoom, gt.h * zoom);
    const Crop x = crop_region(frames[k], center, config.search_factor, config.search_size);
    Tensor loss = sample_loss(z.patch, x.patch, x.transform.to_crop(gt), ids, p, options.weights);
    report.losses.push_back(loss.item());
    adamw_step(store, grad_of(loss), options.optimizer, "vltrack.");
  }
  return report;
}

// ---------------------------------------------------------------- synthetic data

SyntheticSequence make_synthetic_sequence(const SyntheticOptions& o) {
  if (o.frames < 1 || o.width < 1 || o.height < 1 || !(o.target_size > 0.0)) {
    throw ValueError("make_synthetic_sequence: invalid options");
  }
  Rng rng(o.seed);
  const int64_t ts = static_cast<int64_t>(std::llround(o.target_size));
  // Checkerboard-like texture with random cell colors, fixed over time.
  constexpr int64_t kCells = 4;
  std::vector<float> palette(static_cast<size_t>(kCells * kCells * 3));
  for (float& c : palette) c = rng.uniform(0.55f, 1.0f);

  SyntheticSequence seq;
  seq.prompt = "a bright checkered square moving across a noisy dark field";
  const int64_t plane = o.width * o.height;
  for (int64_t f = 0; f < o.frames; ++f) {
    const double x = o.start_x + o.step_x * static_cast<double>(f);
    const double y = o.start_y + o.step_y * static_cast<double>(f);
    const int64_t xi = std::llround(x), yi = std::llround(y);
    std::vector<float> img(static_cast<size_t>(3 * plane));
    for (float& v : img) v = rng.uniform(0.0f, 0.35f);
    for (int64_t r = 0; r < ts; ++r) {
      for (int64_t q = 0; q < ts; ++q) {
        const int64_t py = yi + r, px = xi + q;
        if (py < 0 || py >= o.height || px < 0 || px >= o.width) continue;
        const int64_t cell = (r * kCells / ts) * kCells + q * kCells / ts;
        for (int64_t c = 0; c < 3; ++c) {
          img[static_cast<size_t>(c * plane + py * o.width + px)] = palette[static_cast<size_t>(cell * 3 + c)];
        }
      }
    }
    for (float& v : img) v *= o.brightness;
    seq.frames.push_back(Tensor({3, o.height, o.width}, std::move(img)));
    seq.boxes.push_back({static_cast<double>(xi), static_cast<double>(yi), static_cast<double>(ts),
                         static_cast<double>(ts)});
  }
  return seq;
}

}  // namespace nightrack::vltrack
