#include "nightrack/param_store.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <set>

namespace nightrack {

namespace {

bool is_optimizer_state(const std::string& name) { return name.rfind(kOptimizerPrefix, 0) == 0; }

bool valid_utf8(const std::string& s) {
  size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    size_t extra;
    uint32_t cp;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= s.size()) return false;
    for (size_t k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    static constexpr uint32_t kMin[] = {0, 0x80, 0x800, 0x10000};
    if (cp < kMin[extra] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += extra + 1;
  }
  return true;
}

void check_name(const std::string& name) {
  if (name.empty()) throw WeightsError(WeightsError::Kind::BadName, "parameter name is empty");
  if (name.size() > 0xFFFF) throw WeightsError(WeightsError::Kind::BadName, "parameter name too long");
  if (!valid_utf8(name)) {
    throw WeightsError(WeightsError::Kind::BadName, "parameter name is not valid UTF-8");
  }
}

}  // namespace

void ParamStore::add(const std::string& name, Tensor tensor, bool trainable) {
  check_name(name);
  if (index_.count(name)) {
    throw WeightsError(WeightsError::Kind::DuplicateName, "duplicate parameter name '" + name + "'");
  }
  tensor.set_name(name);
  tensor.set_requires_grad(trainable && !is_optimizer_state(name));
  index_[name] = entries_.size();
  entries_.emplace_back(name, std::move(tensor));
}

void ParamStore::set(const std::string& name, Tensor tensor, bool trainable) {
  auto it = index_.find(name);
  if (it == index_.end()) {
    add(name, std::move(tensor), trainable);
    return;
  }
  tensor.set_name(name);
  tensor.set_requires_grad(trainable && !is_optimizer_state(name));
  entries_[it->second].second = std::move(tensor);
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("missing parameter '" + name + "'");
  return entries_[it->second].second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("missing parameter '" + name + "'");
  return entries_[it->second].second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [n, _] : entries_) out.push_back(n);
  return out;
}

void ParamStore::set_trainable(const std::string& prefix, bool trainable) {
  for (auto& [n, t] : entries_) {
    if (n.rfind(prefix, 0) == 0 && !is_optimizer_state(n)) t.set_requires_grad(trainable);
  }
}

std::vector<std::string> ParamStore::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& [n, t] : entries_) {
    if (t.requires_grad()) out.push_back(n);
  }
  return out;
}

int64_t ParamStore::parameter_count(const std::string& prefix) const {
  int64_t n = 0;
  for (const auto& [name, t] : entries_) {
    if (name.rfind(prefix, 0) == 0 && !is_optimizer_state(name)) n += t.numel();
  }
  return n;
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& [n, t] : entries_) out.add(n, t.detach(), t.requires_grad());
  return out;
}

namespace {

void put_u16(std::vector<uint8_t>& b, uint16_t v) {
  b.push_back(static_cast<uint8_t>(v));
  b.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<uint8_t>& bytes) : bytes_(bytes) {}

  void need(size_t n, const char* what) const {
    if (pos_ + n > bytes_.size()) {
      throw WeightsError(WeightsError::Kind::Truncated,
                         std::string("weights file truncated while reading ") + what);
    }
  }
  uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  uint16_t u16(const char* what) {
    need(2, what);
    uint16_t v = static_cast<uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes_[pos_ + static_cast<size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  const uint8_t* take(size_t n, const char* what) {
    need(n, what);
    const uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<uint8_t>& bytes_;
  size_t pos_ = 0;
};

}  // namespace

std::vector<uint8_t> serialize_params(const ParamStore& store) {
  std::vector<uint8_t> b{'M', 'T', 'W', 'T'};
  put_u32(b, kWeightsVersion);
  put_u32(b, static_cast<uint32_t>(store.size()));
  for (const auto& [name, t] : store.entries()) {
    put_u16(b, static_cast<uint16_t>(name.size()));
    b.insert(b.end(), name.begin(), name.end());
    b.push_back(0);  // f32
    b.push_back(static_cast<uint8_t>(t.rank()));
    for (int64_t e : t.shape()) put_u32(b, static_cast<uint32_t>(e));
    for (float v : t.data()) {
      uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put_u32(b, bits);
    }
  }
  return b;
}

ParamStore deserialize_params(const std::vector<uint8_t>& bytes) {
  Reader r(bytes);
  r.need(4, "magic");
  if (r.str(4, "magic") != "MTWT") throw WeightsError(WeightsError::Kind::BadMagic, "bad magic bytes");
  const uint32_t version = r.u32("version");
  if (version != kWeightsVersion) {
    throw WeightsError(WeightsError::Kind::VersionMismatch,
                       "unsupported weights version " + std::to_string(version));
  }
  const uint32_t count = r.u32("tensor count");
  ParamStore store;
  std::set<std::string> seen;
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t len = r.u16("name length");
    std::string name = r.str(len, "name");
    if (!seen.insert(name).second) {
      throw WeightsError(WeightsError::Kind::DuplicateName, "duplicate tensor name '" + name + "'");
    }
    const uint8_t dtype = r.u8("dtype");
    if (dtype != 0) {
      throw WeightsError(WeightsError::Kind::BadDtype, "unsupported dtype " + std::to_string(dtype));
    }
    const uint8_t rank = r.u8("rank");
    Shape shape;
    size_t n = 1;
    for (uint8_t k = 0; k < rank; ++k) {
      const uint32_t e = r.u32("extent");
      if (e == 0) throw WeightsError(WeightsError::Kind::Truncated, "zero extent in '" + name + "'");
      shape.push_back(e);
      n *= e;
    }
    const uint8_t* p = r.take(n * 4, "payload");
    std::vector<float> data(n);
    for (size_t j = 0; j < n; ++j) {
      const uint32_t bits = static_cast<uint32_t>(p[4 * j]) | (static_cast<uint32_t>(p[4 * j + 1]) << 8) |
                            (static_cast<uint32_t>(p[4 * j + 2]) << 16) |
                            (static_cast<uint32_t>(p[4 * j + 3]) << 24);
      std::memcpy(&data[j], &bits, 4);
    }
    store.add(name, Tensor(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw WeightsError(WeightsError::Kind::TrailingData, "trailing bytes after last tensor");
  return store;
}

void save_params(const ParamStore& store, const std::filesystem::path& path) {
  auto bytes = serialize_params(store);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw WeightsError(WeightsError::Kind::Io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw WeightsError(WeightsError::Kind::Io, "write failed for " + path.string());
}

ParamStore load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WeightsError(WeightsError::Kind::Io, "cannot open " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_params(bytes);
}

float Rng::normal() {
  // Box-Muller on our own uniforms keeps the sequence library-independent.
  float u1 = uniform01();
  while (u1 <= 0.0f) u1 = uniform01();
  const float u2 = uniform01();
  return std::sqrt(-2.0f * std::log(u1)) * std::cos(2.0f * std::numbers::pi_v<float> * u2);
}

Tensor random_uniform(const Shape& shape, float lo, float hi, Rng& rng) {
  std::vector<float> data(static_cast<size_t>(numel(shape)));
  for (auto& v : data) v = rng.uniform(lo, hi);
  return Tensor(shape, std::move(data));
}

ParamBuilder ParamBuilder::scope(const std::string& name) const {
  return ParamBuilder(*store_, rng_, prefix_.empty() ? name : prefix_ + "." + name);
}

Tensor ParamBuilder::declare(const std::string& name, const Shape& shape, std::vector<float> data) {
  const std::string full = prefix_.empty() ? name : prefix_ + "." + name;
  if (rng_) {
    store_->add(full, Tensor(shape, std::move(data)));
    return store_->get(full);
  }
  const Tensor& t = store_->get(full);
  if (t.shape() != shape) {
    throw ShapeError("parameter '" + full + "' has shape " + shape_str(t.shape()) + ", expected " +
                     shape_str(shape));
  }
  return t;
}

Tensor ParamBuilder::uniform(const std::string& name, const Shape& shape, int64_t fan_in) {
  std::vector<float> data;
  if (rng_) {
    const float bound = std::sqrt(1.0f / static_cast<float>(fan_in));
    data.resize(static_cast<size_t>(numel(shape)));
    for (auto& v : data) v = rng_->uniform(-bound, bound);
  }
  return declare(name, shape, std::move(data));
}

Tensor ParamBuilder::constant(const std::string& name, const Shape& shape, float value) {
  std::vector<float> data;
  if (rng_) data.assign(static_cast<size_t>(numel(shape)), value);
  return declare(name, shape, std::move(data));
}

Tensor ParamBuilder::values(const std::string& name, const Shape& shape, std::vector<float> data) {
  return declare(name, shape, rng_ ? std::move(data) : std::vector<float>{});
}

}  // namespace nightrack
