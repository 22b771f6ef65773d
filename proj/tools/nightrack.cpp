// nightrack: enhance | track | eval | selftest | init-weights
#include <iostream>

#include "CLI11.hpp"
#include "nightrack/commands.hpp"
#include "nightrack/io.hpp"

namespace fs = std::filesystem;
using nightrack::cli::RunConfig;

int main(int argc, char** argv) {
  CLI::App app{"Night-time vision-language tracking toolkit"};
  app.require_subcommand(1);

  std::string weights, config_file, out;
  bool no_enhance = false;
  uint64_t seed = 0;
  float bright_threshold = 0.0f;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--weights", weights, "weights file (seeded weights when omitted)");
    cmd->add_option("--config", config_file, "key=value configuration file");
    cmd->add_option("--out", out, "output path");
    cmd->add_flag("--no-enhance", no_enhance, "skip low-light enhancement");
    cmd->add_option("--seed", seed, "seed for generated weights");
    cmd->add_option("--bright-threshold", bright_threshold,
                    "leave images whose mean illumination exceeds this value unenhanced");
  };

  std::string input;
  auto* enhance = app.add_subcommand("enhance", "enhance every PPM/PGM image of a directory");
  enhance->add_option("input_dir", input)->required();
  add_common(enhance);

  auto* track = app.add_subcommand("track", "track the target through a sequence directory");
  track->add_option("sequence_dir", input)->required();
  add_common(track);

  std::string groundtruth;
  auto* eval = app.add_subcommand("eval", "score a results file against ground truth");
  eval->add_option("results", input)->required();
  eval->add_option("groundtruth", groundtruth)->required();
  eval->add_option("--out", out, "directory for the CSV curves (default: next to the results)");

  auto* selftest = app.add_subcommand("selftest", "run the built-in invariant checks");
  selftest->add_option("--weights", weights, "also check that this weights file round trips");

  auto* init = app.add_subcommand("init-weights", "write freshly seeded weights");
  add_common(init);

  CLI11_PARSE(app, argc, argv);

  RunConfig config;
  if (!config_file.empty()) {
    try {
      nightrack::cli::apply_config_file(config_file, config);
    } catch (const nightrack::io::ParseError& e) {
      std::cerr << "error: " << e.what() << '\n';
      return nightrack::cli::kParseError;
    } catch (const nightrack::Error& e) {
      std::cerr << "error: " << e.what() << '\n';
      return nightrack::cli::kUnreadable;
    }
  }
  // Flags override the file.
  for (auto* cmd : {enhance, track, init}) {
    if (!cmd->parsed()) continue;
    if (cmd->count("--weights")) config.weights = weights;
    if (cmd->count("--out")) config.out = out;
    if (cmd->count("--seed")) config.seed = seed;
    if (cmd->count("--bright-threshold")) config.bright_threshold = bright_threshold;
    if (no_enhance) config.enhance = false;
  }

  if (enhance->parsed()) {
    const fs::path dest = config.out ? *config.out : fs::path(input) / "enhanced";
    return nightrack::cli::cmd_enhance(input, dest, config, std::cout, std::cerr);
  }
  if (track->parsed()) {
    const fs::path dest = config.out ? *config.out : fs::path(input) / "results.txt";
    return nightrack::cli::cmd_track(input, dest, config, std::cout, std::cerr);
  }
  if (eval->parsed()) {
    std::optional<fs::path> curves;
    if (!out.empty()) curves = out;
    return nightrack::cli::cmd_eval(input, groundtruth, curves, std::cout, std::cerr);
  }
  if (selftest->parsed()) {
    std::optional<fs::path> file;
    if (!weights.empty()) file = weights;
    return nightrack::cli::cmd_selftest(file, std::cout, std::cerr);
  }
  const fs::path dest = config.out ? *config.out : fs::path("weights.mtwt");
  return nightrack::cli::cmd_init_weights(dest, config, std::cout, std::cerr);
}
