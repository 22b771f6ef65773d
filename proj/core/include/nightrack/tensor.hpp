#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "nightrack/error.hpp"

namespace nightrack {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

// Node of the recorded graph. Leaves have no backward function.
struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until a backward pass touches the node
  bool requires_grad = false;
  std::string name;

  std::vector<ImplPtr> parents;
  // Reads `self.grad` and accumulates into the parents' grad buffers.
  std::function<void(TensorImpl& self)> backward;

  float* grad_buffer();
};

}  // namespace detail

/// Dense row-major float32 tensor. Copies share storage; use clone() for a
/// deep copy.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<float> data, bool requires_grad = false);

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, float value, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int64_t rank() const { return static_cast<int64_t>(shape().size()); }
  int64_t dim(int64_t i) const;
  int64_t numel() const;

  std::span<const float> data() const;
  std::span<float> mutable_data();
  float item() const;
  float at(std::initializer_list<int64_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  const std::string& name() const;
  void set_name(std::string name);

  /// Gradient from the most recent backward pass, undefined if none.
  Tensor grad() const;

  Tensor clone() const;
  /// Same storage semantics as clone(), but never part of a graph.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  const detail::ImplPtr& impl() const { return impl_; }
  explicit Tensor(detail::ImplPtr impl) : impl_(std::move(impl)) {}

 private:
  detail::ImplPtr impl_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

/// Reverse-mode gradients of a scalar with respect to every named leaf that
/// requires grad and was reached. The graph is released afterwards.
std::map<std::string, Tensor> grad_of(const Tensor& output);

/// As above, but every name in `wrt` must be a leaf on the recorded graph.
std::map<std::string, Tensor> grad_of(const Tensor& output, const std::vector<std::string>& wrt);

namespace detail {

/// Builds an op result, rejecting non-finite values. When recording is on and
/// any input requires grad, the result joins the graph with `backward`.
Tensor make_result(const char* op, Shape shape, std::vector<float> data, std::vector<Tensor> inputs,
                   std::function<void(TensorImpl& self)> backward);

/// Throws NumericError if any element is non-finite.
void check_finite(std::span<const float> values, const char* op);

}  // namespace detail

}  // namespace nightrack
