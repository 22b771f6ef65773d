#include "nightrack/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace nightrack {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

float* detail::TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0f);
  return grad.data();
}

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, std::vector<float> data, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] <= 0) {
      throw ShapeError("tensor extent " + std::to_string(i) + " must be positive, got " +
                       shape_str(shape));
    }
  }
  if (nightrack::numel(shape) != static_cast<int64_t>(data.size())) {
    throw ShapeError("shape " + shape_str(shape) + " does not match " +
                     std::to_string(data.size()) + " elements");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, 0.0f, requires_grad);
}

Tensor Tensor::full(const Shape& shape, float value, bool requires_grad) {
  return Tensor(shape, std::vector<float>(static_cast<size_t>(nightrack::numel(shape)), value),
                requires_grad);
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!impl_) throw Error("use of undefined tensor");
  return impl_->shape;
}

int64_t Tensor::dim(int64_t i) const {
  const Shape& s = shape();
  if (i < 0) i += static_cast<int64_t>(s.size());
  if (i < 0 || i >= static_cast<int64_t>(s.size())) {
    throw ShapeError("dimension index " + std::to_string(i) + " out of range for " + shape_str(s));
  }
  return s[static_cast<size_t>(i)];
}

int64_t Tensor::numel() const { return static_cast<int64_t>(impl_ ? impl_->data.size() : 0); }

std::span<const float> Tensor::data() const {
  if (!impl_) throw Error("use of undefined tensor");
  return impl_->data;
}

std::span<float> Tensor::mutable_data() {
  if (!impl_) throw Error("use of undefined tensor");
  return impl_->data;
}

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() needs a single element, got " + shape_str(shape()));
  return impl_->data[0];
}

float Tensor::at(std::initializer_list<int64_t> index) const {
  const Shape& s = shape();
  if (index.size() != s.size()) throw ShapeError("index rank mismatch for " + shape_str(s));
  int64_t flat = 0;
  size_t k = 0;
  for (int64_t i : index) {
    if (i < 0 || i >= s[k]) throw ShapeError("index out of range on dimension " + std::to_string(k));
    flat = flat * s[k] + i;
    ++k;
  }
  return impl_->data[static_cast<size_t>(flat)];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!impl_) throw Error("use of undefined tensor");
  impl_->requires_grad = flag;
}

const std::string& Tensor::name() const {
  if (!impl_) throw Error("use of undefined tensor");
  return impl_->name;
}

void Tensor::set_name(std::string name) {
  if (!impl_) throw Error("use of undefined tensor");
  impl_->name = std::move(name);
}

Tensor Tensor::grad() const {
  if (!impl_ || impl_->grad.empty()) return Tensor();
  return Tensor(impl_->shape, impl_->grad);
}

Tensor Tensor::clone() const {
  Tensor t(shape(), impl_->data, impl_->requires_grad);
  t.impl_->name = impl_->name;
  return t;
}

Tensor Tensor::detach() const { return Tensor(shape(), impl_->data); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_mode_enabled() { return g_grad_enabled; }

namespace detail {

void check_finite(std::span<const float> values, const char* op) {
  for (float v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + " produced a non-finite value");
  }
}

Tensor make_result(const char* op, Shape shape, std::vector<float> data,
                   std::vector<Tensor> inputs, std::function<void(TensorImpl& self)> backward) {
  check_finite(data, op);
  Tensor out(std::move(shape), std::move(data));
  if (!g_grad_enabled) return out;
  bool any = std::any_of(inputs.begin(), inputs.end(),
                         [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  auto& impl = *out.impl();
  impl.requires_grad = true;
  impl.parents.reserve(inputs.size());
  for (auto& t : inputs) impl.parents.push_back(t.impl());
  impl.backward = std::move(backward);
  return out;
}

}  // namespace detail

namespace {

std::vector<detail::TensorImpl*> topo_order(detail::TensorImpl* root) {
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> visited;
  // Iterative post-order DFS; graphs can be thousands of nodes deep.
  std::vector<std::pair<detail::TensorImpl*, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::TensorImpl* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // parents precede children
}

}  // namespace

std::map<std::string, Tensor> grad_of(const Tensor& output) {
  if (!output.defined() || output.numel() != 1) {
    throw GradError("grad_of needs a scalar output");
  }
  auto* root = output.impl().get();
  if (!root->requires_grad) throw GradError("output is not on a recorded graph");

  auto order = topo_order(root);
  for (auto* n : order) n->grad.assign(n->data.size(), 0.0f);
  root->grad[0] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }

  std::map<std::string, Tensor> grads;
  for (auto* n : order) {
    bool leaf = !n->backward;
    if (leaf) {
      if (!n->name.empty()) grads[n->name] = Tensor(n->shape, n->grad);
    } else {
      n->parents.clear();
      n->backward = nullptr;
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
  return grads;
}

std::map<std::string, Tensor> grad_of(const Tensor& output, const std::vector<std::string>& wrt) {
  auto grads = grad_of(output);
  for (const auto& name : wrt) {
    if (!grads.count(name)) throw GradError("leaf '" + name + "' is not on the recorded graph");
  }
  return grads;
}

}  // namespace nightrack
