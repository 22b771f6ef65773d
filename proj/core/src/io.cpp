#include "nightrack/io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace nightrack::io {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Netpbm header token, skipping whitespace and comments.
int64_t header_int(const std::vector<uint8_t>& b, size_t& pos, const fs::path& path) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(b[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  int64_t v = 0;
  size_t digits = 0;
  while (pos < b.size() && std::isdigit(b[pos])) {
    v = v * 10 + (b[pos] - '0');
    ++pos;
    if (++digits > 9) throw IoError(path.string() + ": header value too large");
  }
  if (digits == 0) throw IoError(path.string() + ": malformed header");
  return v;
}

}  // namespace

Image read_image(const fs::path& path) {
  const std::vector<uint8_t> b = read_bytes(path);
  if (b.size() < 2 || b[0] != 'P' || (b[1] != '6' && b[1] != '5')) {
    throw IoError(path.string() + ": not a binary PPM/PGM file");
  }
  const bool gray = b[1] == '5';
  size_t pos = 2;
  const int64_t w = header_int(b, pos, path);
  const int64_t h = header_int(b, pos, path);
  const int64_t maxval = header_int(b, pos, path);
  if (w < 1 || h < 1) throw IoError(path.string() + ": empty image");
  if (maxval != 255) throw IoError(path.string() + ": only 8-bit images are supported");
  if (pos >= b.size() || !std::isspace(b[pos])) throw IoError(path.string() + ": malformed header");
  ++pos;
  const int64_t plane = w * h;
  const size_t need = static_cast<size_t>(plane * (gray ? 1 : 3));
  if (b.size() - pos < need) throw IoError(path.string() + ": truncated pixel data");

  std::vector<float> px(static_cast<size_t>(3 * plane));
  for (int64_t i = 0; i < plane; ++i) {
    for (int64_t c = 0; c < 3; ++c) {
      const uint8_t v = gray ? b[pos + static_cast<size_t>(i)] : b[pos + static_cast<size_t>(3 * i + c)];
      px[static_cast<size_t>(c * plane + i)] = static_cast<float>(v) / 255.0f;
    }
  }
  return {Tensor({3, h, w}, std::move(px)), gray};
}

void write_image(const fs::path& path, const Tensor& pixels, bool grayscale) {
  if (pixels.rank() != 3 || pixels.dim(0) != 3) {
    throw ShapeError("write_image: pixels must be [3, h, w], got " + shape_str(pixels.shape()));
  }
  const int64_t h = pixels.dim(1), w = pixels.dim(2), plane = h * w;
  auto v = pixels.data();
  auto quantize = [](double x) {
    return static_cast<uint8_t>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0));
  };
  std::string out = std::string(grayscale ? "P5" : "P6") + "\n" + std::to_string(w) + " " + std::to_string(h) +
                    "\n255\n";
  for (int64_t i = 0; i < plane; ++i) {
    if (grayscale) {
      const double m = (static_cast<double>(v[static_cast<size_t>(i)]) + v[static_cast<size_t>(plane + i)] +
                        v[static_cast<size_t>(2 * plane + i)]) / 3.0;
      out.push_back(static_cast<char>(quantize(m)));
    } else {
      for (int64_t c = 0; c < 3; ++c) out.push_back(static_cast<char>(quantize(v[static_cast<size_t>(c * plane + i)])));
    }
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("failed writing " + path.string());
}

bool is_image_file(const fs::path& path) {
  const std::string ext = path.extension().string();
  return ext == ".ppm" || ext == ".pgm";
}

std::vector<fs::path> list_images(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError(dir.string() + " is not a readable directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
  return files;
}

BBox parse_box(const std::string& raw, const std::string& file, int line_no) {
  const std::string line = trim(raw);
  double v[4];
  size_t start = 0;
  for (int k = 0; k < 4; ++k) {
    const size_t comma = line.find(',', start);
    if ((k < 3) == (comma == std::string::npos)) {
      throw ParseError(file, line_no, "expected four comma-separated numbers \"x,y,w,h\"");
    }
    const std::string field = trim(line.substr(start, k < 3 ? comma - start : std::string::npos));
    const char* first = field.data();
    const char* last = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(first, last, v[k]);
    if (ec != std::errc() || ptr != last || field.empty() || !std::isfinite(v[k])) {
      throw ParseError(file, line_no, "field " + std::to_string(k + 1) + " \"" + field + "\" is not a number");
    }
    start = comma + 1;
  }
  return {v[0], v[1], v[2], v[3]};
}

std::vector<BBox> read_boxes(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<BBox> boxes;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    boxes.push_back(parse_box(line, path.string(), n));
  }
  return boxes;
}

std::string format_box(const BBox& b) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.4f,%.4f,%.4f,%.4f", b.x, b.y, b.w, b.h);
  return buf;
}

void write_boxes(const fs::path& path, const std::vector<BBox>& boxes) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& b : boxes) out << format_box(b) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> read_key_values(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(path.string(), n, "expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError(path.string(), n, "empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

}  // namespace nightrack::io
