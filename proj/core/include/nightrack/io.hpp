#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "nightrack/geometry.hpp"
#include "nightrack/tensor.hpp"

namespace nightrack::io {

/// Malformed text input; line() is 1-based.
class ParseError : public Error {
 public:
  ParseError(const std::string& file, int line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

struct Image {
  Tensor pixels;  // [3, h, w] in [0, 1]; grayscale input is replicated
  bool grayscale = false;
};

/// Binary 8-bit PPM (P6) or PGM (P5); samples map to [0, 1] by /255.
Image read_image(const std::filesystem::path& path);
/// Writes P6, or P5 with the channel mean when grayscale is set. Values are
/// clamped to [0, 1] and rounded to 8 bits.
void write_image(const std::filesystem::path& path, const Tensor& pixels, bool grayscale = false);

bool is_image_file(const std::filesystem::path& path);
/// Image files of a directory, sorted lexicographically by file name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

/// "x,y,w,h" per line; blank lines are not allowed.
std::vector<BBox> read_boxes(const std::filesystem::path& path);
BBox parse_box(const std::string& line, const std::string& file, int line_no);
std::string format_box(const BBox& box);
void write_boxes(const std::filesystem::path& path, const std::vector<BBox>& boxes);

std::string read_text(const std::filesystem::path& path);

/// key=value lines; '#' starts a comment; surrounding whitespace is ignored.
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);

}  // namespace nightrack::io
