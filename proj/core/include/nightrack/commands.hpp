#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "nightrack/vltrack.hpp"

namespace nightrack::cli {

enum ExitCode : int {
  kOk = 0,
  kSelftestFailed = 1,
  kUnreadable = 2,
  kBadWeights = 3,
  kMissingPrompt = 4,
  kCountMismatch = 5,
  kParseError = 6,
};

struct RunConfig {
  std::optional<std::filesystem::path> weights;  // seeded weights when absent
  double template_factor = 2.0;
  double search_factor = 4.0;
  int64_t template_size = 128;
  int64_t search_size = 256;
  bool enhance = true;
  std::optional<float> bright_threshold;  // skip enhancement above this mean illumination
  std::optional<std::filesystem::path> prompt;  // defaults to <sequence>/prompt.txt
  uint64_t seed = 7;
  std::optional<std::filesystem::path> out;
  int visual_depth = 4;
  int language_depth = 2;

  vltrack::TrackerConfig tracker_config() const;
  /// Throws ValueError on inconsistent values.
  void validate() const;
};

/// Applies key=value settings over `config`. Unknown keys and malformed
/// values throw io::ParseError naming the line.
void apply_config_file(const std::filesystem::path& path, RunConfig& config);

struct SequenceDir {
  std::vector<std::filesystem::path> frames;
  std::vector<BBox> groundtruth;
  std::string prompt;
};

/// Reads frames, groundtruth.txt and the prompt (trimmed). Throws IoError,
/// io::ParseError, or ValueError for a missing or empty prompt.
SequenceDir read_sequence(const std::filesystem::path& dir, const std::optional<std::filesystem::path>& prompt);

/// Number of enhancement workers: NIGHTRACK_THREADS if set and positive,
/// otherwise the hardware concurrency.
int enhance_workers();

int cmd_enhance(const std::filesystem::path& input_dir, const std::filesystem::path& output_dir,
                const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_track(const std::filesystem::path& sequence_dir, const std::filesystem::path& output_file,
              const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_eval(const std::filesystem::path& results_file, const std::filesystem::path& groundtruth_file,
             const std::optional<std::filesystem::path>& curve_dir, std::ostream& out, std::ostream& err);
/// Runs the built-in invariant groups. When weights_file is set its
/// serialization round trip is checked too.
int cmd_selftest(const std::optional<std::filesystem::path>& weights_file, std::ostream& out, std::ostream& err);
/// Writes freshly seeded weights for the configuration.
int cmd_init_weights(const std::filesystem::path& output_file, const RunConfig& config, std::ostream& out,
                     std::ostream& err);

}  // namespace nightrack::cli
