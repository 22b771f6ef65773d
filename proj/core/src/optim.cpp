#include "nightrack/optim.hpp"

#include <cmath>

namespace nightrack {

void adamw_step(ParamStore& params, const std::map<std::string, Tensor>& grads,
                const AdamWOptions& opt, const std::string& prefix) {
  std::vector<std::string> names;
  for (auto& n : params.trainable_names()) {
    if (n.rfind(prefix, 0) == 0) names.push_back(std::move(n));
  }
  for (const auto& name : names) {
    auto it = grads.find(name);
    if (it == grads.end()) throw GradError("missing gradient for trainable parameter '" + name + "'");
    if (it->second.shape() != params.get(name).shape()) {
      throw ShapeError("gradient for '" + name + "' has shape " + shape_str(it->second.shape()) +
                       ", parameter has " + shape_str(params.get(name).shape()));
    }
  }

  const std::string step_name = std::string(kOptimizerPrefix) + "step";
  if (!params.contains(step_name)) params.add(step_name, Tensor::scalar(0.0f), false);
  const float step = params.get(step_name).item() + 1.0f;
  params.get(step_name).mutable_data()[0] = step;
  const double bc1 = 1.0 - std::pow(static_cast<double>(opt.beta1), step);
  const double bc2 = 1.0 - std::pow(static_cast<double>(opt.beta2), step);

  for (const auto& name : names) {
    const std::string m_name = std::string(kOptimizerPrefix) + "m." + name;
    const std::string v_name = std::string(kOptimizerPrefix) + "v." + name;
    if (!params.contains(m_name)) {
      const Shape shape = params.get(name).shape();  // copy: add() may reallocate the store
      params.add(m_name, Tensor::zeros(shape), false);
      params.add(v_name, Tensor::zeros(shape), false);
    }
    auto m = params.get(m_name).mutable_data();
    auto v = params.get(v_name).mutable_data();
    auto g = grads.at(name).data();
    auto w = params.get(name).mutable_data();
    for (size_t i = 0; i < w.size(); ++i) {
      w[i] -= opt.lr * opt.weight_decay * w[i];
      m[i] = opt.beta1 * m[i] + (1.0f - opt.beta1) * g[i];
      v[i] = opt.beta2 * v[i] + (1.0f - opt.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= static_cast<float>(opt.lr * mhat / (std::sqrt(vhat) + opt.eps));
    }
  }
}

}  // namespace nightrack
