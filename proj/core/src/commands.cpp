#include "nightrack/commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <mutex>
#include <ostream>
#include <thread>

#include "nightrack/io.hpp"
#include "nightrack/metrics.hpp"
#include "nightrack/ops.hpp"

namespace nightrack::cli {

namespace fs = std::filesystem;

vltrack::TrackerConfig RunConfig::tracker_config() const {
  vltrack::TrackerConfig c;
  c.template_factor = template_factor;
  c.search_factor = search_factor;
  c.template_size = template_size;
  c.search_size = search_size;
  c.enhance = enhance;
  c.enhance_skip_above = bright_threshold;
  c.visual_depth = visual_depth;
  c.language_depth = language_depth;
  return c;
}

void RunConfig::validate() const { tracker_config().validate(); }

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

int line_of(const fs::path& path, const std::string& key) {
  std::ifstream in(path);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto eq = line.find('=');
    if (eq != std::string::npos && trim(line.substr(0, eq)) == key) return n;
  }
  return 0;
}

double parse_double(const std::string& v, const fs::path& path, const std::string& key) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || !std::isfinite(d)) {
    throw io::ParseError(path.string(), line_of(path, key), key + ": \"" + v + "\" is not a number");
  }
  return d;
}

int64_t parse_int(const std::string& v, const fs::path& path, const std::string& key) {
  char* end = nullptr;
  const long long i = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0') {
    throw io::ParseError(path.string(), line_of(path, key), key + ": \"" + v + "\" is not an integer");
  }
  return i;
}

bool parse_bool(const std::string& v, const fs::path& path, const std::string& key) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw io::ParseError(path.string(), line_of(path, key), key + ": \"" + v + "\" is not a boolean");
}

// Store holding the weights a configuration needs: loaded when a file is
// given, seeded otherwise.
ParamStore obtain_weights(const RunConfig& config) {
  if (config.weights) return load_params(*config.weights);
  return vltrack::init_weights(config.seed, config.tracker_config());
}

ParamStore obtain_enhancer_weights(const RunConfig& config) {
  if (config.weights) return load_params(*config.weights);
  // Same draws as the enhancer part of init_weights, which creates it first.
  ParamStore store;
  Rng rng(config.seed);
  mlle::enhancer_params(ParamBuilder(store, &rng));
  return store;
}

void write_curve(const fs::path& path, const metrics::EvalCurve& c) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "threshold,value\n";
  char buf[64];
  for (size_t i = 0; i < c.thresholds.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.4f,%.6f\n", c.thresholds[i], c.values[i]);
    out << buf;
  }
}

}  // namespace

void apply_config_file(const fs::path& path, RunConfig& config) {
  for (const auto& [key, value] : io::read_key_values(path)) {
    if (key == "weights") {
      config.weights = value;
    } else if (key == "template_factor") {
      config.template_factor = parse_double(value, path, key);
    } else if (key == "search_factor") {
      config.search_factor = parse_double(value, path, key);
    } else if (key == "template_size") {
      config.template_size = parse_int(value, path, key);
    } else if (key == "search_size") {
      config.search_size = parse_int(value, path, key);
    } else if (key == "enhance") {
      config.enhance = parse_bool(value, path, key);
    } else if (key == "bright_threshold") {
      config.bright_threshold = static_cast<float>(parse_double(value, path, key));
    } else if (key == "prompt") {
      config.prompt = value;
    } else if (key == "seed") {
      config.seed = static_cast<uint64_t>(parse_int(value, path, key));
    } else if (key == "out") {
      config.out = value;
    } else if (key == "visual_depth") {
      config.visual_depth = static_cast<int>(parse_int(value, path, key));
    } else if (key == "language_depth") {
      config.language_depth = static_cast<int>(parse_int(value, path, key));
    } else {
      throw io::ParseError(path.string(), line_of(path, key), "unknown key \"" + key + "\"");
    }
  }
}

SequenceDir read_sequence(const fs::path& dir, const std::optional<fs::path>& prompt) {
  SequenceDir seq;
  seq.frames = io::list_images(dir);
  if (seq.frames.empty()) throw IoError(dir.string() + " contains no frames");
  seq.groundtruth = io::read_boxes(dir / "groundtruth.txt");
  if (seq.groundtruth.empty()) throw IoError((dir / "groundtruth.txt").string() + " is empty");
  if (seq.groundtruth.size() > seq.frames.size()) {
    throw IoError("groundtruth.txt has more lines than there are frames");
  }
  const fs::path prompt_path = prompt ? *prompt : dir / "prompt.txt";
  std::error_code ec;
  if (!fs::is_regular_file(prompt_path, ec)) throw ValueError("missing prompt file " + prompt_path.string());
  seq.prompt = trim(io::read_text(prompt_path));
  if (seq.prompt.empty()) throw ValueError("prompt file " + prompt_path.string() + " is empty");
  return seq;
}

int enhance_workers() {
  if (const char* env = std::getenv("NIGHTRACK_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

int cmd_enhance(const fs::path& input_dir, const fs::path& output_dir, const RunConfig& config, std::ostream& out,
                std::ostream& err) {
  std::vector<fs::path> files;
  try {
    files = io::list_images(input_dir);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kUnreadable;
  }
  if (files.empty()) {
    err << "warning: no .ppm/.pgm images in " << input_dir.string() << '\n';
    return kOk;
  }

  mlle::EnhancerParams params;
  ParamStore store;
  try {
    store = obtain_enhancer_weights(config);
    params = mlle::enhancer_params(ParamBuilder(store, nullptr));
  } catch (const Error& e) {
    err << "error: bad weights: " << e.what() << '\n';
    return kBadWeights;
  }

  std::error_code ec;
  fs::create_directories(output_dir, ec);
  if (ec) {
    err << "error: cannot create " << output_dir.string() << ": " << ec.message() << '\n';
    return kUnreadable;
  }

  // Images are independent; each worker claims the next index.
  std::atomic<size_t> next{0};
  std::mutex failure_mutex;
  std::optional<std::pair<size_t, std::string>> failure;
  auto work = [&] {
    NoGradGuard guard;
    for (size_t i = next++; i < files.size(); i = next++) {
      try {
        const io::Image img = io::read_image(files[i]);
        if (img.pixels.dim(1) % 4 != 0 || img.pixels.dim(2) % 4 != 0) {
          throw IoError(files[i].string() + ": sides must be divisible by 4");
        }
        io::write_image(output_dir / files[i].filename(), mlle::enhance(img.pixels, params, {config.bright_threshold}), img.grayscale);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure || i < failure->first) failure = {i, e.what()};
      }
    }
  };
  const int workers = std::min<int>(enhance_workers(), static_cast<int>(files.size()));
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  if (failure) {
    err << "error: " << failure->second << '\n';
    return kUnreadable;
  }
  out << "enhanced " << files.size() << " image(s) into " << output_dir.string() << '\n';
  return kOk;
}

int cmd_track(const fs::path& sequence_dir, const fs::path& output_file, const RunConfig& config, std::ostream& out,
              std::ostream& err) {
  try {
    config.validate();
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kParseError;
  }
  SequenceDir seq;
  try {
    seq = read_sequence(sequence_dir, config.prompt);
  } catch (const io::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kParseError;
  } catch (const ValueError& e) {
    err << "error: " << e.what() << '\n';
    return kMissingPrompt;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kUnreadable;
  }

  ParamStore store;
  vltrack::Model model;
  try {
    store = obtain_weights(config);
    model = vltrack::bind_model(store, config.tracker_config());
  } catch (const Error& e) {
    err << "error: bad weights: " << e.what() << '\n';
    return kBadWeights;
  }

  std::optional<size_t> bad_frame;
  auto load = [&](size_t i) {
    try {
      return io::read_image(seq.frames[i]).pixels;
    } catch (const Error&) {
      bad_frame = i;
      throw;
    }
  };
  std::vector<BBox> boxes;
  const auto start = std::chrono::steady_clock::now();
  try {
    boxes = vltrack::track_sequence(seq.frames.size(), load, seq.groundtruth.front(), seq.prompt, model);
  } catch (const Error& e) {
    if (bad_frame) {
      err << "error: frame " << *bad_frame << " (" << seq.frames[*bad_frame].filename().string()
          << "): " << e.what() << '\n';
      return kUnreadable;
    }
    err << "error: " << e.what() << '\n';
    return kUnreadable;
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  try {
    io::write_boxes(output_file, boxes);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kUnreadable;
  }
  char buf[256];
  const double fps = seconds > 0.0 ? static_cast<double>(boxes.size()) / seconds : 0.0;
  std::snprintf(buf, sizeof buf, "throughput: %zu frames in %.2f s (%.2f frames/s, CPU, toy scale, enhance %s)\n",
                boxes.size(), seconds, fps, config.enhance ? "on" : "off");
  err << buf
      << "throughput: the 42 frames/s real-time figure of the full-scale GPU model is not reproducible here\n";
  out << "wrote " << boxes.size() << " boxes to " << output_file.string() << '\n';
  return kOk;
}

int cmd_eval(const fs::path& results_file, const fs::path& groundtruth_file,
             const std::optional<fs::path>& curve_dir, std::ostream& out, std::ostream& err) {
  std::vector<BBox> pred, gt;
  try {
    pred = io::read_boxes(results_file);
    gt = io::read_boxes(groundtruth_file);
  } catch (const io::ParseError& e) {
    err << "error: parse error at " << e.what() << '\n';
    return kParseError;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kUnreadable;
  }
  if (pred.size() != gt.size() || gt.empty()) {
    err << "error: " << pred.size() << " result lines but " << gt.size() << " ground-truth lines\n";
    return kCountMismatch;
  }
  metrics::EvalCurve success, prec, norm;
  try {
    success = metrics::success_auc(pred, gt);
    prec = metrics::precision(pred, gt);
    norm = metrics::norm_precision(pred, gt);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kParseError;
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "auc=%.4f\np=%.4f\np_norm=%.4f\n", success.summary, prec.summary, norm.summary);
  out << buf;

  const fs::path dir = curve_dir ? *curve_dir : results_file.parent_path();
  const std::string stem = results_file.stem().string();
  try {
    std::error_code ec;
    if (!dir.empty()) fs::create_directories(dir, ec);
    write_curve(dir / (stem + ".success.csv"), success);
    write_curve(dir / (stem + ".precision.csv"), prec);
    write_curve(dir / (stem + ".norm_precision.csv"), norm);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kUnreadable;
  }
  return kOk;
}

int cmd_init_weights(const fs::path& output_file, const RunConfig& config, std::ostream& out, std::ostream& err) {
  try {
    config.validate();
    const ParamStore store = vltrack::init_weights(config.seed, config.tracker_config());
    save_params(store, output_file);
    out << "wrote " << store.size() << " tensors (" << store.parameter_count() << " values) to "
        << output_file.string() << '\n';
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kUnreadable;
  }
  return kOk;
}

}  // namespace nightrack::cli
