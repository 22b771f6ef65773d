#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "golden.hpp"
#include "nightrack/commands.hpp"
#include "nightrack/io.hpp"
#include "nightrack/mlle.hpp"

using namespace nightrack;
using namespace nightrack::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  fs::path dir =
      fs::temp_directory_path() / "nightrack_cmd" / (std::string(info->test_suite_name()) + "." + info->name());
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::string read_file(const fs::path& p) { return io::read_text(p); }

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

template <typename F>
Outcome capture(F&& f) {
  std::ostringstream out, err;
  const int code = f(out, err);
  return {code, out.str(), err.str()};
}

// A reduced tracker keeps the track tests quick; the default sizes run in
// the golden test.
RunConfig small_config() {
  RunConfig c;
  c.template_size = 64;
  c.search_size = 128;
  c.visual_depth = 1;
  c.language_depth = 1;
  c.enhance = false;
  return c;
}

fs::path copy_sequence(const fs::path& dir) {
  const fs::path seq = dir / "seq";
  fs::copy(nightrack::testing::data_path("seq10"), seq, fs::copy_options::recursive);
  return seq;
}

fs::path save_enhancer(const fs::path& path, bool zero_restorer) {
  ParamStore store;
  Rng rng(7);
  mlle::enhancer_params(ParamBuilder(store, &rng));
  if (zero_restorer) {
    for (const char* name : {"mlle.dr.out.weight", "mlle.dr.out.bias"}) {
      auto v = store.get(name).mutable_data();
      std::fill(v.begin(), v.end(), 0.0f);
    }
  }
  save_params(store, path);
  return path;
}

}  // namespace

// ---------------------------------------------------------------- enhance

TEST(Enhance, EmptyDirectoryWarnsAndSucceeds) {
  const fs::path dir = scratch_dir();
  fs::create_directories(dir / "in");
  const Outcome r = capture([&](auto& o, auto& e) { return cmd_enhance(dir / "in", dir / "out", RunConfig{}, o, e); });
  EXPECT_EQ(r.code, kOk);
  EXPECT_NE(r.err.find("warning"), std::string::npos);
  EXPECT_TRUE(r.out.empty());
  EXPECT_FALSE(fs::exists(dir / "out") && !fs::is_empty(dir / "out"));
}

TEST(Enhance, ZeroRestorerOutputsLightUpImages) {
  const fs::path dir = scratch_dir();
  fs::create_directories(dir / "in");
  fs::copy(nightrack::testing::data_path("enhance/dark64.ppm"), dir / "in" / "a.ppm");
  Rng rng(2);
  io::write_image(dir / "in" / "b.ppm", random_uniform({3, 16, 20}, 0.0f, 0.4f, rng));
  RunConfig cfg;
  cfg.weights = save_enhancer(dir / "zero_dr.mtwt", true);
  const Outcome r = capture([&](auto& o, auto& e) { return cmd_enhance(dir / "in", dir / "out", cfg, o, e); });
  ASSERT_EQ(r.code, kOk) << r.err;

  ParamStore store = load_params(*cfg.weights);
  const mlle::EnhancerParams p = mlle::enhancer_params(ParamBuilder(store, nullptr));
  NoGradGuard guard;
  for (const char* name : {"a.ppm", "b.ppm"}) {
    const Tensor img = io::read_image(dir / "in" / name).pixels;
    const Tensor lit = mlle::illumination_estimator(img, mlle::illumination_prior(img), p).lit;
    io::write_image(dir / "expected.ppm", lit);
    EXPECT_EQ(read_file(dir / "out" / name), read_file(dir / "expected.ppm")) << name;
  }
}

TEST(Enhance, BundledImageMatchesGolden) {
  const fs::path dir = scratch_dir();
  fs::create_directories(dir / "in");
  fs::copy(nightrack::testing::data_path("enhance/dark64.ppm"), dir / "in" / "dark64.ppm");
  const Outcome r = capture([&](auto& o, auto& e) { return cmd_enhance(dir / "in", dir / "out", RunConfig{}, o, e); });
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_NE(r.out.find("enhanced 1 image"), std::string::npos);
  const fs::path golden = nightrack::testing::data_path("golden/dark64_enhanced.ppm");
  if (const char* u = std::getenv("NIGHTRACK_UPDATE_GOLDEN"); u && std::string(u) == "1") {
    fs::copy_file(dir / "out" / "dark64.ppm", golden, fs::copy_options::overwrite_existing);
    GTEST_SKIP() << "rewrote " << golden;
  }
  EXPECT_EQ(read_file(dir / "out" / "dark64.ppm"), read_file(golden));
}

TEST(Enhance, WorkerCountDoesNotChangeOutputs) {
  const fs::path dir = scratch_dir();
  fs::create_directories(dir / "in");
  Rng rng(3);
  for (int i = 0; i < 4; ++i) {
    io::write_image(dir / "in" / ("f" + std::to_string(i) + ".ppm"), random_uniform({3, 12, 8}, 0.0f, 0.5f, rng));
  }
  ::setenv("NIGHTRACK_THREADS", "1", 1);
  EXPECT_EQ(enhance_workers(), 1);
  ASSERT_EQ(capture([&](auto& o, auto& e) { return cmd_enhance(dir / "in", dir / "one", RunConfig{}, o, e); }).code,
            kOk);
  ::setenv("NIGHTRACK_THREADS", "3", 1);
  EXPECT_EQ(enhance_workers(), 3);
  ASSERT_EQ(capture([&](auto& o, auto& e) { return cmd_enhance(dir / "in", dir / "three", RunConfig{}, o, e); }).code,
            kOk);
  ::unsetenv("NIGHTRACK_THREADS");
  for (int i = 0; i < 4; ++i) {
    const std::string n = "f" + std::to_string(i) + ".ppm";
    EXPECT_EQ(read_file(dir / "one" / n), read_file(dir / "three" / n));
  }
}

TEST(Enhance, ErrorCodes) {
  const fs::path dir = scratch_dir();
  EXPECT_EQ(capture([&](auto& o, auto& e) { return cmd_enhance(dir / "none", dir / "o", RunConfig{}, o, e); }).code,
            kUnreadable);

  fs::create_directories(dir / "bad");
  write_file(dir / "bad" / "x.ppm", "P6\n4 4\n255\n");
  const Outcome truncated =
      capture([&](auto& o, auto& e) { return cmd_enhance(dir / "bad", dir / "o", RunConfig{}, o, e); });
  EXPECT_EQ(truncated.code, kUnreadable);
  EXPECT_NE(truncated.err.find("x.ppm"), std::string::npos);

  fs::create_directories(dir / "odd");
  io::write_image(dir / "odd" / "y.ppm", Tensor::zeros({3, 6, 8}));
  EXPECT_EQ(capture([&](auto& o, auto& e) { return cmd_enhance(dir / "odd", dir / "o", RunConfig{}, o, e); }).code,
            kUnreadable);

  fs::create_directories(dir / "ok");
  io::write_image(dir / "ok" / "z.ppm", Tensor::zeros({3, 8, 8}));
  RunConfig cfg;
  cfg.weights = dir / "garbage.mtwt";
  write_file(*cfg.weights, "not weights");
  EXPECT_EQ(capture([&](auto& o, auto& e) { return cmd_enhance(dir / "ok", dir / "o", cfg, o, e); }).code,
            kBadWeights);
  ParamStore wrong;
  wrong.add("mlle.ie.fuse.weight", Tensor::zeros({1}));
  save_params(wrong, dir / "wrong.mtwt");
  cfg.weights = dir / "wrong.mtwt";
  EXPECT_EQ(capture([&](auto& o, auto& e) { return cmd_enhance(dir / "ok", dir / "o", cfg, o, e); }).code,
            kBadWeights);
}

TEST(Enhance, BrightThresholdCopiesBrightImages) {
  const fs::path dir = scratch_dir();
  fs::create_directories(dir / "in");
  const Tensor bright = Tensor::full({3, 8, 8}, 200.0f / 255.0f);
  io::write_image(dir / "in" / "b.ppm", bright);
  RunConfig cfg;
  cfg.bright_threshold = 0.5f;
  ASSERT_EQ(capture([&](auto& o, auto& e) { return cmd_enhance(dir / "in", dir / "out", cfg, o, e); }).code, kOk);
  EXPECT_EQ(read_file(dir / "out" / "b.ppm"), read_file(dir / "in" / "b.ppm"));
}

// ---------------------------------------------------------------- track

TEST(Track, TenFramesTenLinesDeterministic) {
  const fs::path dir = scratch_dir();
  const fs::path seq = copy_sequence(dir);
  const RunConfig cfg = small_config();
  const Outcome a = capture([&](auto& o, auto& e) { return cmd_track(seq, dir / "a.txt", cfg, o, e); });
  ASSERT_EQ(a.code, kOk) << a.err;
  const Outcome b = capture([&](auto& o, auto& e) { return cmd_track(seq, dir / "b.txt", cfg, o, e); });
  ASSERT_EQ(b.code, kOk) << b.err;
  const std::string text = read_file(dir / "a.txt");
  EXPECT_EQ(text, read_file(dir / "b.txt"));
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 10);
  EXPECT_EQ(text.substr(0, text.find('\n')), "20.0000,24.0000,20.0000,20.0000");
  for (const BBox& box : io::read_boxes(dir / "a.txt")) EXPECT_TRUE(box.valid());
  EXPECT_NE(a.err.find("frames/s"), std::string::npos);
  EXPECT_NE(a.err.find("not reproducible"), std::string::npos);
  EXPECT_NE(a.out.find("wrote 10 boxes"), std::string::npos);
}

TEST(Track, SavedWeightsGiveTheSameResultsAsSeeded) {
  const fs::path dir = scratch_dir();
  const fs::path seq = copy_sequence(dir);
  RunConfig cfg = small_config();
  cfg.seed = 21;
  ASSERT_EQ(capture([&](auto& o, auto& e) { return cmd_init_weights(dir / "w.mtwt", cfg, o, e); }).code, kOk);
  ASSERT_EQ(capture([&](auto& o, auto& e) { return cmd_track(seq, dir / "seeded.txt", cfg, o, e); }).code, kOk);
  cfg.weights = dir / "w.mtwt";
  cfg.seed = 999;  // ignored when a weights file is given
  ASSERT_EQ(capture([&](auto& o, auto& e) { return cmd_track(seq, dir / "loaded.txt", cfg, o, e); }).code, kOk);
  EXPECT_EQ(read_file(dir / "seeded.txt"), read_file(dir / "loaded.txt"));
}

TEST(Track, PromptFlagOverridesSequencePrompt) {
  const fs::path dir = scratch_dir();
  const fs::path seq = copy_sequence(dir);
  RunConfig cfg = small_config();
  ASSERT_EQ(capture([&](auto& o, auto& e) { return cmd_track(seq, dir / "a.txt", cfg, o, e); }).code, kOk);
  write_file(dir / "same.txt", "  the small checkered square \n\n");
  cfg.prompt = dir / "same.txt";
  ASSERT_EQ(capture([&](auto& o, auto& e) { return cmd_track(seq, dir / "b.txt", cfg, o, e); }).code, kOk);
  EXPECT_EQ(read_file(dir / "a.txt"), read_file(dir / "b.txt"));
}

TEST(Track, ErrorCodes) {
  const fs::path dir = scratch_dir();
  const fs::path seq = copy_sequence(dir);
  const RunConfig cfg = small_config();

  fs::remove(seq / "prompt.txt");
  Outcome r = capture([&](auto& o, auto& e) { return cmd_track(seq, dir / "r.txt", cfg, o, e); });
  EXPECT_EQ(r.code, kMissingPrompt);
  EXPECT_NE(r.err.find("prompt"), std::string::npos);
  write_file(seq / "prompt.txt", " \n");
  EXPECT_EQ(capture([&](auto& o, auto& e) { return cmd_track(seq, dir / "r.txt", cfg, o, e); }).code,
            kMissingPrompt);
  write_file(seq / "prompt.txt", "square\n");

  write_file(seq / "0004.ppm", "P6\n96 80\n255\n");
  r = capture([&](auto& o, auto& e) { return cmd_track(seq, dir / "r.txt", cfg, o, e); });
  EXPECT_EQ(r.code, kUnreadable);
  EXPECT_NE(r.err.find("0004.ppm"), std::string::npos);

  EXPECT_EQ(capture([&](auto& o, auto& e) { return cmd_track(dir / "missing", dir / "r.txt", cfg, o, e); }).code,
            kUnreadable);

  fs::copy_file(nightrack::testing::data_path("seq10/0004.ppm"), seq / "0004.ppm",
                fs::copy_options::overwrite_existing);
  RunConfig bad = cfg;
  bad.weights = dir / "nope.mtwt";
  EXPECT_EQ(capture([&](auto& o, auto& e) { return cmd_track(seq, dir / "r.txt", bad, o, e); }).code, kBadWeights);

  write_file(seq / "groundtruth.txt", "1,2,3\n");
  r = capture([&](auto& o, auto& e) { return cmd_track(seq, dir / "r.txt", cfg, o, e); });
  EXPECT_EQ(r.code, kParseError);
}

// ---------------------------------------------------------------- eval

TEST(Eval, PerfectResults) {
  const fs::path dir = scratch_dir();
  const fs::path gt = nightrack::testing::data_path("seq10/groundtruth.txt");
  fs::copy_file(gt, dir / "results.txt");
  const Outcome r = capture([&](auto& o, auto& e) { return cmd_eval(dir / "results.txt", gt, std::nullopt, o, e); });
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_EQ(r.out, "auc=1.0000\np=1.0000\np_norm=1.0000\n");
  EXPECT_TRUE(r.err.empty());
  for (const char* n : {"results.success.csv", "results.precision.csv", "results.norm_precision.csv"}) {
    EXPECT_TRUE(fs::exists(dir / n)) << n;
  }
  const std::string curve = read_file(dir / "results.success.csv");
  EXPECT_EQ(curve.substr(0, curve.find('\n')), "threshold,value");
  EXPECT_EQ(std::count(curve.begin(), curve.end(), '\n'), 22);
}

TEST(Eval, HandcraftedIousMatchThresholdCounts) {
  // IoUs 1, 0.8, 0.5, 0.2, 0 against a 10x10 ground truth. Over the 21 IoU
  // thresholds they pass 21, 17, 11, 5 and 1 times: 55 / 105. Center errors
  // are 0, 1, 2.5, 4 and 100 px; normalized by the 10 px extent only the
  // first two are within 0.2.
  const fs::path dir = scratch_dir();
  std::string gt;
  for (int i = 0; i < 5; ++i) gt += "0,0,10,10\n";
  const std::string pred = "0,0,10,10\n0,0,8,10\n0,0,5,10\n0,0,2,10\n100,0,10,10\n";
  write_file(dir / "gt.txt", gt);
  write_file(dir / "pred.txt", pred);
  const Outcome r = capture([&](auto& o, auto& e) { return cmd_eval(dir / "pred.txt", dir / "gt.txt", dir / "curves", o, e); });
  ASSERT_EQ(r.code, kOk) << r.err;
  char expected[96];
  std::snprintf(expected, sizeof expected, "auc=%.4f\np=%.4f\np_norm=%.4f\n", 55.0 / 105.0, 4.0 / 5.0, 2.0 / 5.0);
  EXPECT_EQ(r.out, expected);
  EXPECT_EQ(r.out, "auc=0.5238\np=0.8000\np_norm=0.4000\n");
  EXPECT_TRUE(fs::exists(dir / "curves" / "pred.precision.csv"));
}

TEST(Eval, ErrorCodes) {
  const fs::path dir = scratch_dir();
  write_file(dir / "gt.txt", "0,0,10,10\n0,0,10,10\n0,0,10,10\n");
  write_file(dir / "bad.txt", "0,0,10,10\n0,0,10,10\n0,0,ten,10\n");
  Outcome r = capture([&](auto& o, auto& e) { return cmd_eval(dir / "bad.txt", dir / "gt.txt", std::nullopt, o, e); });
  EXPECT_EQ(r.code, kParseError);
  EXPECT_NE(r.err.find("bad.txt:3"), std::string::npos) << r.err;
  EXPECT_TRUE(r.out.empty());

  write_file(dir / "short.txt", "0,0,10,10\n");
  r = capture([&](auto& o, auto& e) { return cmd_eval(dir / "short.txt", dir / "gt.txt", std::nullopt, o, e); });
  EXPECT_EQ(r.code, kCountMismatch);
  EXPECT_EQ(capture([&](auto& o, auto& e) { return cmd_eval(dir / "none.txt", dir / "gt.txt", std::nullopt, o, e); }).code,
            kUnreadable);

  // A zero-extent prediction is a miss, not a parse error.
  write_file(dir / "degenerate.txt", "0,0,10,10\n0,0,0,10\n0,0,10,10\n");
  r = capture([&](auto& o, auto& e) { return cmd_eval(dir / "degenerate.txt", dir / "gt.txt", std::nullopt, o, e); });
  EXPECT_EQ(r.code, kOk);
  EXPECT_EQ(r.out.substr(0, 10), "auc=0.6825");  // (21 + 1 + 21) / 63
}

// ---------------------------------------------------------------- selftest

TEST(Selftest, PristineBuildPasses) {
  const Outcome r = capture([&](auto& o, auto& e) { return cmd_selftest(std::nullopt, o, e); });
  EXPECT_EQ(r.code, kOk) << r.err;
  for (const char* g : {"scan-equivalence", "retinex-identity", "gradients", "metric-oracle", "weights-roundtrip"}) {
    EXPECT_NE(r.out.find(std::string("PASS ") + g), std::string::npos) << g;
  }
}

TEST(Selftest, WeightsFileRoundTrip) {
  const fs::path dir = scratch_dir();
  ParamStore store;
  Rng rng(4);
  mlle::enhancer_params(ParamBuilder(store, &rng));
  save_params(store, dir / "w.mtwt");
  EXPECT_EQ(capture([&](auto& o, auto& e) { return cmd_selftest(dir / "w.mtwt", o, e); }).code, kOk);

  std::string bytes = read_file(dir / "w.mtwt");
  bytes.resize(bytes.size() - 3);
  write_file(dir / "corrupt.mtwt", bytes);
  const Outcome r = capture([&](auto& o, auto& e) { return cmd_selftest(dir / "corrupt.mtwt", o, e); });
  EXPECT_EQ(r.code, kSelftestFailed);
  EXPECT_NE(r.out.find("FAIL weights-roundtrip"), std::string::npos);
  EXPECT_NE(r.err.find("weights-roundtrip"), std::string::npos);
}

// ---------------------------------------------------------------- config

TEST(Config, FileValuesAndErrors) {
  const fs::path dir = scratch_dir();
  write_file(dir / "run.cfg",
             "# toy run\nseed = 11\nenhance = off\ntemplate_factor=2.5\nsearch_size=128\nbright_threshold=0.6\n"
             "prompt=p.txt\nvisual_depth=2\n");
  RunConfig c;
  apply_config_file(dir / "run.cfg", c);
  EXPECT_EQ(c.seed, 11u);
  EXPECT_FALSE(c.enhance);
  EXPECT_EQ(c.template_factor, 2.5);
  EXPECT_EQ(c.search_size, 128);
  EXPECT_EQ(c.bright_threshold, 0.6f);
  EXPECT_EQ(c.prompt, fs::path("p.txt"));
  EXPECT_EQ(c.visual_depth, 2);
  EXPECT_EQ(c.tracker_config().search_size, 128);

  write_file(dir / "unknown.cfg", "seed=1\ncolour=blue\n");
  try {
    apply_config_file(dir / "unknown.cfg", c);
    FAIL() << "expected a parse error";
  } catch (const io::ParseError& e) {
    EXPECT_EQ(e.line(), 2);
  }
  write_file(dir / "nan.cfg", "\nsearch_factor=wide\n");
  try {
    apply_config_file(dir / "nan.cfg", c);
    FAIL() << "expected a parse error";
  } catch (const io::ParseError& e) {
    EXPECT_EQ(e.line(), 2);
  }
  write_file(dir / "bool.cfg", "enhance=maybe\n");
  EXPECT_THROW(apply_config_file(dir / "bool.cfg", c), io::ParseError);
}

TEST(Config, ValidationRejectsInconsistentSizes) {
  RunConfig c;
  c.search_size = 250;
  EXPECT_THROW(c.validate(), ValueError);
  c = RunConfig{};
  c.template_factor = 0.0;
  EXPECT_THROW(c.validate(), ValueError);
  const fs::path dir = scratch_dir();
  c = small_config();
  c.search_size = 100;
  EXPECT_EQ(capture([&](auto& o, auto& e) { return cmd_track(dir, dir / "r.txt", c, o, e); }).code, kParseError);
}

TEST(InitWeights, WritesLoadableStore) {
  const fs::path dir = scratch_dir();
  RunConfig cfg = small_config();
  cfg.enhance = true;
  const Outcome r = capture([&](auto& o, auto& e) { return cmd_init_weights(dir / "w.mtwt", cfg, o, e); });
  ASSERT_EQ(r.code, kOk) << r.err;
  ParamStore store = load_params(dir / "w.mtwt");
  EXPECT_NO_THROW(vltrack::bind_model(store, cfg.tracker_config()));
  EXPECT_TRUE(store.contains("mlle.ie.fuse.weight"));
  EXPECT_EQ(r.out.find("wrote " + std::to_string(store.size()) + " tensors"), 0u);
}
