#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "nightrack/tensor.hpp"

namespace nightrack {

/// Named, insertion-ordered collection of tensors. Trainable entries carry
/// requires_grad and their own name, so grad_of() keys match store keys.
class ParamStore {
 public:
  void add(const std::string& name, Tensor tensor, bool trainable = true);
  /// Replaces the storage of an existing entry, or adds it.
  void set(const std::string& name, Tensor tensor, bool trainable = true);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);

  size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::string> names() const;

  /// Marks every entry whose name starts with `prefix` (optionally) trainable.
  void set_trainable(const std::string& prefix, bool trainable);
  std::vector<std::string> trainable_names() const;
  int64_t parameter_count(const std::string& prefix = "") const;

  /// Deep copy.
  ParamStore clone() const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, size_t> index_;
};

/// Names under this prefix hold optimizer state and never train.
inline constexpr const char* kOptimizerPrefix = "adamw.";

class WeightsError : public Error {
 public:
  enum class Kind { Io, BadMagic, VersionMismatch, Truncated, DuplicateName, BadDtype, BadName, TrailingData };
  WeightsError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr uint32_t kWeightsVersion = 1;

/// Weights image: "MTWT", u32 version, u32 count, then per tensor u16 name
/// length, UTF-8 name, u8 dtype (0 = f32), u8 rank, rank x u32 extents and the
/// little-endian row-major f32 payload.
std::vector<uint8_t> serialize_params(const ParamStore& store);
ParamStore deserialize_params(const std::vector<uint8_t>& bytes);

void save_params(const ParamStore& store, const std::filesystem::path& path);
ParamStore load_params(const std::filesystem::path& path);

/// Seeded generator whose outputs depend only on the mt19937 sequence.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(static_cast<std::mt19937::result_type>(seed)) {}
  /// Uniform in [0, 1) with 24 bits of resolution.
  float uniform01() { return static_cast<float>(gen_() >> 8) * (1.0f / 16777216.0f); }
  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform01(); }
  float normal();
  uint32_t next_u32() { return static_cast<uint32_t>(gen_()); }
  int64_t below(int64_t n) { return static_cast<int64_t>(gen_() % static_cast<uint32_t>(n)); }

 private:
  std::mt19937 gen_;
};

Tensor random_uniform(const Shape& shape, float lo, float hi, Rng& rng);

/// Declares parameters. With a generator it creates and initializes them in
/// the store; without one it binds to existing entries, checking shapes.
class ParamBuilder {
 public:
  ParamBuilder(ParamStore& store, Rng* rng, std::string prefix = "")
      : store_(&store), rng_(rng), prefix_(std::move(prefix)) {}

  ParamBuilder scope(const std::string& name) const;
  const std::string& prefix() const { return prefix_; }
  bool creating() const { return rng_ != nullptr; }

  /// Uniform in +-sqrt(1/fan_in).
  Tensor uniform(const std::string& name, const Shape& shape, int64_t fan_in);
  Tensor constant(const std::string& name, const Shape& shape, float value);
  Tensor values(const std::string& name, const Shape& shape, std::vector<float> data);

 private:
  Tensor declare(const std::string& name, const Shape& shape, std::vector<float> data);

  ParamStore* store_;
  Rng* rng_;
  std::string prefix_;
};

}  // namespace nightrack
