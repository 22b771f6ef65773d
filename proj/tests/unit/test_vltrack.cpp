#include <gtest/gtest.h>

#include <cmath>

#include "nightrack/ops.hpp"
#include "nightrack/vltrack.hpp"

using namespace nightrack;
using namespace nightrack::vltrack;

namespace {

TrackerConfig tiny_config() {
  TrackerConfig c;
  c.d_visual = 16;
  c.d_language = 24;
  c.template_size = 32;
  c.search_size = 64;
  c.visual_depth = 1;
  c.language_depth = 1;
  c.d_state = 4;
  c.head_channels = 8;
  c.enhance = false;
  return c;
}

struct TinyModel {
  ParamStore store;
  Model model;
  explicit TinyModel(TrackerConfig cfg = tiny_config(), uint64_t seed = 3) {
    store = init_weights(seed, cfg);
    model = bind_model(store, cfg);
  }
  void zero(const std::string& prefix) {
    for (const auto& [name, t] : store.entries()) {
      if (name.rfind(prefix, 0) != 0) continue;
      auto v = store.get(name).mutable_data();
      std::fill(v.begin(), v.end(), 0.0f);
    }
  }
  void fill(const std::string& prefix, float value) {
    for (const auto& [name, t] : store.entries()) {
      if (name.rfind(prefix, 0) != 0) continue;
      auto v = store.get(name).mutable_data();
      std::fill(v.begin(), v.end(), value);
    }
  }
};

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.data().size(); ++i) m = std::max(m, std::fabs(double(a.data()[i]) - b.data()[i]));
  return m;
}

Tensor random_frame(int64_t h, int64_t w, Rng& rng) { return random_uniform({3, h, w}, 0, 1, rng); }

}  // namespace

// ---------------------------------------------------------------- geometry

TEST(Crop, TemplateAndSearchScale) {
  Rng rng(1);
  Tensor frame = random_frame(400, 400, rng);
  const BBox box{184, 184, 32, 32};
  EXPECT_EQ(crop_side(box, 2.0), 64);
  Crop z = crop_region(frame, box, 2.0, 128);
  EXPECT_EQ(z.patch.shape(), (Shape{3, 128, 128}));
  EXPECT_EQ(z.transform.scale, 2.0);
  EXPECT_EQ(crop_side(box, 4.0), 128);
  Crop x = crop_region(frame, box, 4.0, 256);
  EXPECT_EQ(x.transform.scale, 2.0);
  EXPECT_EQ(x.transform.origin_x, 200.0 - 64.0);
}

TEST(Crop, ContentMatchesResizedRegion) {
  Rng rng(2);
  Tensor frame = random_frame(100, 120, rng);
  const BBox box{50, 40, 20, 20};
  Crop c = crop_region(frame, box, 2.0, 64);  // side 40 at (40, 30)
  std::vector<float> region;
  for (int64_t ch = 0; ch < 3; ++ch) {
    for (int64_t y = 30; y < 70; ++y) {
      for (int64_t x = 40; x < 80; ++x) region.push_back(frame.at({ch, y, x}));
    }
  }
  Tensor oracle = resize_bilinear(Tensor({3, 40, 40}, region), 64, 64);
  EXPECT_TRUE(bit_equal(c.patch, oracle));
}

TEST(Crop, CornerBoxPaddedWithChannelMean) {
  Rng rng(3);
  Tensor frame = random_frame(60, 80, rng);
  const BBox box{0, 0, 10, 10};
  Crop c = crop_region(frame, box, 4.0, 40);  // side 40 centred at (5, 5): origin (-15, -15)
  for (int64_t ch = 0; ch < 3; ++ch) {
    double mean = 0.0;
    for (int64_t y = 0; y < 60; ++y) {
      for (int64_t x = 0; x < 80; ++x) mean += frame.at({ch, y, x});
    }
    mean /= 60.0 * 80.0;
    for (int64_t y = 0; y < 15; ++y) {
      for (int64_t x = 0; x < 40; ++x) EXPECT_NEAR(c.patch.at({ch, y, x}), mean, 1e-6);
    }
  }
  const BBox back = c.transform.to_frame(BBox::from_center(20, 20, 1, 1));
  EXPECT_LE(std::fabs(back.cx() - box.cx()), 0.5);
  EXPECT_LE(std::fabs(back.cy() - box.cy()), 0.5);
}

TEST(Crop, TransformRoundTripOnRandomBoxes) {
  Rng rng(4);
  const Tensor frame = random_frame(32, 32, rng);
  for (int i = 0; i < 1000; ++i) {
    const BBox box{rng.uniform(-10, 30), rng.uniform(-10, 30), rng.uniform(1, 20), rng.uniform(1, 20)};
    const double factor = rng.uniform(1, 5);
    const int64_t side = crop_side(box, factor);
    const int64_t x0 = std::llround(box.cx() - 0.5 * side), y0 = std::llround(box.cy() - 0.5 * side);
    const CropTransform t{double(x0), double(y0), 64.0 / double(side)};
    const double u = 32.0;  // centre of a 64-pixel crop
    EXPECT_LE(std::fabs(t.to_frame_x(u) - box.cx()), 0.5);
    EXPECT_LE(std::fabs(t.to_frame_y(u) - box.cy()), 0.5);
    const BBox rt = t.to_frame(t.to_crop(box));
    EXPECT_NEAR(rt.x, box.x, 1e-9);
    EXPECT_NEAR(rt.w, box.w, 1e-9);
  }
  Crop c = crop_region(frame, {3.3, 7.9, 5.5, 2.5}, 3.0, 64);
  EXPECT_LE(std::fabs(c.transform.to_frame_x(32.0) - (3.3 + 2.75)), 0.5);
}

TEST(Crop, Errors) {
  Tensor frame = Tensor::zeros({3, 10, 10});
  EXPECT_THROW(crop_region(frame, {0, 0, 0, 5}, 2.0, 16), ValueError);
  EXPECT_THROW(crop_region(frame, {0, 0, 5, 5}, 0.0, 16), ValueError);
  EXPECT_THROW(crop_region(Tensor::zeros({1, 10, 10}), {0, 0, 5, 5}, 2.0, 16), ShapeError);
}

// ---------------------------------------------------------------- embeddings

TEST(PatchEmbed, TokenCounts) {
  TrackerConfig cfg;
  EXPECT_EQ(cfg.template_tokens(), 64);
  EXPECT_EQ(cfg.search_tokens(), 256);
  EXPECT_EQ(cfg.d_visual, 384);
  EXPECT_EQ(cfg.d_language, 768);
  Rng rng(5);
  ParamStore s;
  ParamBuilder b(s, &rng);
  Linear proj{b.uniform("w", {8, 16 * 16 * 3}, 768), b.constant("b", {8}, 0.0f)};
  EXPECT_EQ(patch_embed(random_uniform({3, 128, 128}, 0, 1, rng), proj, 16).shape(), (Shape{64, 8}));
  EXPECT_EQ(patch_embed(random_uniform({3, 256, 256}, 0, 1, rng), proj, 16).shape(), (Shape{256, 8}));
  EXPECT_THROW(patch_embed(Tensor::zeros({3, 100, 100}), proj, 16), ValueError);
  const Tensor zero_tokens = patch_embed(Tensor::zeros({3, 32, 32}), proj, 16);
  for (float v : zero_tokens.data()) EXPECT_EQ(v, 0.0f);
}

TEST(PatchEmbed, FlattenOrderHwcInnermost) {
  // Each token is the projection of its patch flattened as (row, col, channel).
  Rng rng(6);
  Tensor img = random_uniform({3, 4, 4}, 0, 1, rng);
  std::vector<float> eye(48 * 48, 0.0f);
  for (int i = 0; i < 48; ++i) eye[static_cast<size_t>(i * 48 + i)] = 1.0f;
  Tensor tokens = patch_embed(img, {Tensor({48, 48}, eye), Tensor::zeros({48})}, 4);
  ASSERT_EQ(tokens.shape(), (Shape{1, 48}));
  for (int64_t r = 0; r < 4; ++r) {
    for (int64_t q = 0; q < 4; ++q) {
      for (int64_t c = 0; c < 3; ++c) EXPECT_EQ(tokens.at({0, (r * 4 + q) * 3 + c}), img.at({c, r, q}));
    }
  }
  // constant patch, identity-like projection -> constant rows
  Tensor flat = patch_embed(Tensor::full({3, 8, 8}, 0.25f), {Tensor({48, 48}, eye), Tensor::zeros({48})}, 4);
  for (float v : flat.data()) EXPECT_EQ(v, 0.25f);
}

TEST(VisualEncode, ShapesSplitAndZero) {
  TinyModel m;
  const TrackerParams& p = m.model.tracker;
  Rng rng(7);
  Tensor z = random_uniform({4, 16}, -1, 1, rng), x = random_uniform({16, 16}, -1, 1, rng);
  VisualEmbeddings v = visual_encode(z, x, p);
  EXPECT_EQ(v.z.shape(), z.shape());
  EXPECT_EQ(v.x.shape(), x.shape());
  // Joint oracle: the same stack applied to the concatenation, sliced at N_z.
  Tensor h = concat({z, x});
  for (const VisualLayer& l : p.visual) {
    h = add(h, ssm::bidirectional_mamba(layer_norm(h, l.norm.gamma, l.norm.beta), l.fwd, l.bwd));
  }
  h = layer_norm(h, p.visual_norm.gamma, p.visual_norm.beta);
  EXPECT_LT(max_abs_diff(v.z, slice(h, 0, 4)), 1e-6);
  EXPECT_LT(max_abs_diff(v.x, slice(h, 4, 20)), 1e-6);
  VisualEmbeddings zero = visual_encode(Tensor::zeros({4, 16}), Tensor::zeros({16, 16}), p);
  for (float val : zero.x.data()) EXPECT_EQ(val, 0.0f);
  EXPECT_THROW(visual_encode(Tensor::zeros({4, 15}), x, p), ShapeError);
}

TEST(VisualEncode, DefaultSizes) {
  TrackerConfig cfg;
  cfg.enhance = false;
  cfg.visual_depth = 1;
  cfg.language_depth = 1;
  TinyModel m(cfg);
  NoGradGuard guard;
  Rng rng(8);
  VisualEmbeddings v = visual_encode(random_uniform({64, 384}, -1, 1, rng), random_uniform({256, 384}, -1, 1, rng),
                                     m.model.tracker);
  EXPECT_EQ(v.z.shape(), (Shape{64, 384}));
  EXPECT_EQ(v.x.shape(), (Shape{256, 384}));
  Tensor lang = language_encode(tokenize_prompt("a red car"), m.model.tracker);
  EXPECT_EQ(lang.shape(), (Shape{10, 384}));
  EXPECT_EQ(m.model.tracker.language_embed.shape(), (Shape{257, 768}));
}

TEST(Tokenize, ByteLevelWithClass) {
  EXPECT_EQ(tokenize_prompt("a"), (std::vector<int64_t>{256, 97}));
  EXPECT_EQ(tokenize_prompt("ab"), (std::vector<int64_t>{256, 97, 98}));
  const std::vector<int64_t> long_ids = tokenize_prompt(std::string(100, 'x'));
  EXPECT_EQ(long_ids.size(), 65u);
  EXPECT_EQ(long_ids[0], kClsId);
  EXPECT_EQ(tokenize_prompt("\xc3\xa9")[1], 0xc3);
  EXPECT_THROW(tokenize_prompt(""), ValueError);
}

TEST(LanguageEncode, ShapeZeroDeterminismAndErrors) {
  TinyModel m;
  const TrackerParams& p = m.model.tracker;
  Tensor a = language_encode(tokenize_prompt("the car"), p);
  EXPECT_EQ(a.shape(), (Shape{8, 16}));
  EXPECT_TRUE(bit_equal(a, language_encode(tokenize_prompt("the car"), p)));
  EXPECT_THROW(language_encode({256, 257}, p), ValueError);
  m.zero("vltrack.lang.embed");
  const Tensor zero_out = language_encode(tokenize_prompt("the car"), p);
  for (float v : zero_out.data()) EXPECT_EQ(v, 0.0f);
}

TEST(LanguageEncode, ClassRowDependsOnPrompt) {
  TinyModel m;
  const TrackerParams& p = m.model.tracker;
  Tensor a = language_encode(tokenize_prompt("a small boat"), p);
  Tensor b = language_encode(tokenize_prompt("a small bird"), p);
  EXPECT_GT(max_abs_diff(slice(a, 0, 1), slice(b, 0, 1)), 0.0);
}

// ---------------------------------------------------------------- fusion

TEST(Cmm, AllOnesClassIsInjectionIdentity) {
  Rng rng(9);
  Tensor hx = random_uniform({6, 5}, -1, 1, rng);
  Tensor ht = concat({Tensor::full({1, 5}, 1.0f), random_uniform({3, 5}, -1, 1, rng)});
  EXPECT_TRUE(bit_equal(inject_language(hx, ht), hx));
  Tensor scaled = inject_language(hx, concat({Tensor::full({1, 5}, 2.0f), ht}));
  EXPECT_EQ(scaled.at({2, 3}), 2.0f * hx.at({2, 3}));
}

TEST(Cmm, ZeroInnerBranchAndOutputIsResidual) {
  TinyModel m;
  m.zero("vltrack.cmm.v.scan");
  m.zero("vltrack.cmm.vl.scan");
  m.zero("vltrack.cmm.out_proj");
  Rng rng(10);
  Tensor hz = random_uniform({4, 16}, -1, 1, rng), hx = random_uniform({16, 16}, -1, 1, rng);
  Tensor ht = random_uniform({5, 16}, -1, 1, rng);
  Fused f = cmm_fuse(hz, hx, ht, m.model.tracker.cmm);
  EXPECT_TRUE(bit_equal(f.x, hx));
  EXPECT_TRUE(bit_equal(f.z, hz));
}

TEST(Cmm, ZeroGateAnnihilatesBothBranches) {
  TinyModel m;
  m.zero("vltrack.cmm.v.proj");  // h_v = 0, so SiLU(h_v) = 0 gates both branches
  Rng rng(11);
  Tensor hz = random_uniform({4, 16}, -1, 1, rng), hx = random_uniform({16, 16}, -1, 1, rng);
  Tensor ht = random_uniform({5, 16}, -1, 1, rng);
  Fused f = cmm_fuse(hz, hx, ht, m.model.tracker.cmm);
  EXPECT_TRUE(bit_equal(f.x, hx));
  EXPECT_TRUE(bit_equal(f.z, hz));
}

TEST(Cmm, LanguageChangesSearchFeatures) {
  TinyModel m;
  Rng rng(12);
  Tensor hz = random_uniform({4, 16}, -1, 1, rng), hx = random_uniform({16, 16}, -1, 1, rng);
  Tensor a = cmm_fuse(hz, hx, random_uniform({5, 16}, -1, 1, rng), m.model.tracker.cmm).x;
  Tensor b = cmm_fuse(hz, hx, random_uniform({5, 16}, -1, 1, rng), m.model.tracker.cmm).x;
  EXPECT_GT(max_abs_diff(a, b), 0.0);
  NoGradGuard guard;
  Tensor par = cmm_fuse(hz, hx, Tensor::full({5, 16}, 0.5f), m.model.tracker.cmm, ssm::ScanMode::Parallel).x;
  Tensor seq = cmm_fuse(hz, hx, Tensor::full({5, 16}, 0.5f), m.model.tracker.cmm).x;
  EXPECT_LT(max_abs_diff(par, seq), 1e-5);
}

// ---------------------------------------------------------------- head

TEST(Head, DecodeArithmetic) {
  HeadOutput out{Tensor::zeros({16, 16}), Tensor::full({2, 16, 16}, 0.5f), Tensor::full({2, 16, 16}, 0.25f)};
  out.score.mutable_data()[8 * 16 + 8] = 1.0f;
  const BBox b = decode_head(out, 256);
  EXPECT_DOUBLE_EQ(b.cx(), 136.0);
  EXPECT_DOUBLE_EQ(b.cy(), 136.0);
  EXPECT_DOUBLE_EQ(b.w, 64.0);
  EXPECT_DOUBLE_EQ(b.h, 64.0);
}

TEST(Head, UniformMapPeaksAtOrigin) {
  EXPECT_EQ(peak_cell(Tensor::full({16, 16}, 0.3f)), (Cell{0, 0}));
  Tensor two = Tensor::zeros({16, 16});
  two.mutable_data()[5 * 16 + 2] = 0.9f;
  two.mutable_data()[7 * 16 + 1] = 0.9f;
  EXPECT_EQ(peak_cell(two), (Cell{5, 2}));
}

TEST(Head, EncodeDecodeRoundTrip) {
  Rng rng(13);
  for (int i = 0; i < 200; ++i) {
    const BBox box = BBox::from_center(rng.uniform(0, 255.9f), rng.uniform(0, 255.9f), rng.uniform(4, 200),
                                       rng.uniform(4, 200));
    const EncodedBox e = encode_box(box, 16, 256);
    HeadOutput out{Tensor::zeros({16, 16}), Tensor::zeros({2, 16, 16}), Tensor::zeros({2, 16, 16})};
    const int64_t at = e.cell.row * 16 + e.cell.col;
    out.score.mutable_data()[at] = 0.9f;
    out.offset.mutable_data()[at] = float(e.off_x);
    out.offset.mutable_data()[256 + at] = float(e.off_y);
    out.size.mutable_data()[at] = float(e.w);
    out.size.mutable_data()[256 + at] = float(e.h);
    const BBox back = decode_head(out, 256);
    EXPECT_LE(std::fabs(back.cx() - box.cx()), 0.5);
    EXPECT_LE(std::fabs(back.cy() - box.cy()), 0.5);
    EXPECT_LE(std::fabs(back.w - box.w), 0.5);
    EXPECT_LE(std::fabs(back.h - box.h), 0.5);
  }
}

TEST(Head, ScoreScalingLeavesBoxUnchanged) {
  TinyModel m;
  Rng rng(14);
  HeadOutput out = head_forward(random_uniform({16, 16}, -1, 1, rng), m.model.tracker.head, 4);
  EXPECT_EQ(out.score.shape(), (Shape{4, 4}));
  EXPECT_EQ(out.offset.shape(), (Shape{2, 4, 4}));
  for (float v : out.score.data()) EXPECT_TRUE(v > 0.0f && v < 1.0f);
  for (float v : out.size.data()) EXPECT_TRUE(v > 0.0f && v <= 1.0f);
  const BBox b = decode_head(out, 64);
  for (float k : {0.01f, 0.5f, 3.0f}) {
    HeadOutput scaled = out;
    scaled.score = scale(out.score, k);
    EXPECT_EQ(decode_head(scaled, 64), b);
  }
}

// ---------------------------------------------------------------- tracking

TEST(Track, LengthDeterminismAndFirstBox) {
  TinyModel m;
  SyntheticOptions so;
  so.frames = 5;
  so.width = so.height = 96;
  so.target_size = 16;
  so.start_x = so.start_y = 30;
  const SyntheticSequence seq = make_synthetic_sequence(so);
  auto load = [&](size_t i) { return seq.frames[i]; };
  const std::vector<BBox> a = track_sequence(5, load, seq.boxes[0], seq.prompt, m.model);
  const std::vector<BBox> b = track_sequence(5, load, seq.boxes[0], seq.prompt, m.model);
  ASSERT_EQ(a.size(), 5u);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a[0], seq.boxes[0]);
  for (const BBox& box : a) {
    EXPECT_TRUE(box.valid());
    EXPECT_GE(box.x, 0.0);
    EXPECT_LE(box.x + box.w, 96.0 + 1e-9);
  }
  EXPECT_THROW(track_sequence(0, load, seq.boxes[0], seq.prompt, m.model), ValueError);
  EXPECT_THROW(track_sequence(5, load, seq.boxes[0], "", m.model), ValueError);
}

TEST(Track, TemplateAndLanguageFixedAfterInit) {
  TinyModel m;
  const SyntheticSequence seq = make_synthetic_sequence({.frames = 3, .width = 96, .height = 96,
                                                         .target_size = 16, .start_x = 30, .start_y = 30});
  Tracker t(m.model);
  t.init(seq.frames[0], seq.boxes[0], seq.prompt);
  const Tensor z = t.state().template_tokens.clone(), l = t.state().language.clone();
  t.update(seq.frames[1]);
  t.update(seq.frames[2]);
  EXPECT_TRUE(bit_equal(t.state().template_tokens, z));
  EXPECT_TRUE(bit_equal(t.state().language, l));
  Tracker fresh(m.model);
  EXPECT_THROW(fresh.update(seq.frames[1]), ValueError);
}

TEST(Track, EnhancedModelRuns) {
  TrackerConfig cfg = tiny_config();
  cfg.enhance = true;
  TinyModel m(cfg);
  ASSERT_TRUE(m.model.enhancer.has_value());
  SyntheticOptions so;
  so.frames = 2;
  so.width = so.height = 64;
  so.target_size = 12;
  so.start_x = so.start_y = 20;
  so.brightness = 0.2f;
  const SyntheticSequence seq = make_synthetic_sequence(so);
  const auto boxes = track_sequence(2, [&](size_t i) { return seq.frames[i]; }, seq.boxes[0], seq.prompt, m.model);
  EXPECT_TRUE(boxes[1].valid());
}

TEST(Track, ClampKeepsBoxInFrame) {
  const BBox b = clamp_box({-5, 90, 30, 30}, 100, 100);
  EXPECT_EQ(b.x, 0.0);
  EXPECT_EQ(b.y, 70.0);
  EXPECT_EQ(clamp_box({10, 10, 500, 0.1}, 100, 80).w, 100.0);
  EXPECT_EQ(clamp_box({10, 10, 500, 0.1}, 100, 80).h, 1.0);
}

TEST(Synthetic, BoxesFollowLinearMotion) {
  const SyntheticSequence seq = make_synthetic_sequence();
  ASSERT_EQ(seq.frames.size(), 20u);
  EXPECT_EQ(seq.boxes[0], (BBox{40, 48, 32, 32}));
  EXPECT_EQ(seq.boxes[19], (BBox{40 + 57, 48 + 38, 32, 32}));
  EXPECT_FALSE(seq.prompt.empty());
  for (float v : seq.frames[3].data()) EXPECT_TRUE(v >= 0.0f && v <= 1.0f);
}

TEST(Train, StaticSceneStaysOnTarget) {
  TrackerConfig cfg = tiny_config();
  TinyModel m(cfg);
  SyntheticOptions so;
  so.frames = 6;
  so.width = so.height = 64;
  so.target_size = 16;
  so.start_x = so.start_y = 24;
  so.step_x = so.step_y = 0.0;
  const SyntheticSequence seq = make_synthetic_sequence(so);
  TrainOptions to;
  to.steps = 3000;
  to.optimizer.lr = 3e-3f;
  to.center_jitter = 0.1;
  to.scale_jitter = 0.05;
  const TrainReport r = train_tracker(seq.frames, seq.boxes, seq.prompt, m.store, cfg, to);
  ASSERT_EQ(r.losses.size(), 3000u);
  for (float l : r.losses) ASSERT_TRUE(std::isfinite(l));
  const auto boxes = track_sequence(seq.frames.size(), [&](size_t i) { return seq.frames[i]; }, seq.boxes[0],
                                    seq.prompt, m.model);
  for (size_t i = 0; i < boxes.size(); ++i) {
    EXPECT_LE(std::fabs(boxes[i].x - seq.boxes[i].x), 1.0) << "frame " << i;
    EXPECT_LE(std::fabs(boxes[i].y - seq.boxes[i].y), 1.0) << "frame " << i;
    EXPECT_LE(std::fabs(boxes[i].w - seq.boxes[i].w), 1.0) << "frame " << i;
    EXPECT_LE(std::fabs(boxes[i].h - seq.boxes[i].h), 1.0) << "frame " << i;
  }
}

TEST(Train, SampleLossIsFiniteAndDifferentiable) {
  TrackerConfig cfg = tiny_config();
  TinyModel m(cfg);
  Rng rng(15);
  Tensor loss = sample_loss(random_uniform({3, 32, 32}, 0, 1, rng), random_uniform({3, 64, 64}, 0, 1, rng),
                            {20, 22, 16, 16}, tokenize_prompt("x"), m.model.tracker);
  EXPECT_TRUE(std::isfinite(loss.item()));
  const auto grads = grad_of(loss);
  EXPECT_TRUE(grads.count("vltrack.head.score.conv2.weight"));
  EXPECT_TRUE(grads.count("vltrack.lang.embed"));
  EXPECT_TRUE(grads.count("vltrack.cmm.out_proj"));
}
