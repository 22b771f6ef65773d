#include <cmath>
#include <fstream>
#include <functional>
#include <ostream>

#include "nightrack/commands.hpp"
#include "nightrack/losses.hpp"
#include "nightrack/metrics.hpp"
#include "nightrack/ops.hpp"

namespace nightrack::cli {

namespace fs = std::filesystem;

namespace {

// Each group returns an empty string on success, otherwise the reason.
using Group = std::function<std::string()>;

std::string scan_equivalence() {
  Rng rng(11);
  NoGradGuard guard;
  for (int trial = 0; trial < 20; ++trial) {
    const int64_t len = 1 + rng.below(200), d = 1 + rng.below(16), n = 1 + rng.below(16);
    ssm::SsmParams p;
    p.A = scale(random_uniform({d, n}, 0.1f, 2.0f, rng), -1.0f);
    p.B = random_uniform({len, n}, -1.0f, 1.0f, rng);
    p.C = random_uniform({len, n}, -1.0f, 1.0f, rng);
    p.D_skip = random_uniform({d}, -1.0f, 1.0f, rng);
    p.delta = random_uniform({len, d}, 0.01f, 0.5f, rng);
    Tensor u = random_uniform({len, d}, -1.0f, 1.0f, rng);
    const Tensor seq_t = ssm::selective_scan_seq(u, p), par_t = ssm::selective_scan_parallel(u, p, 2);
    auto seq = seq_t.data();
    auto par = par_t.data();
    double diff = 0.0, mag = 0.0;
    for (size_t i = 0; i < seq.size(); ++i) {
      diff = std::max(diff, static_cast<double>(std::fabs(seq[i] - par[i])));
      mag = std::max(mag, static_cast<double>(std::fabs(seq[i])));
    }
    if (diff > 1e-4 * std::max(mag, 1e-6)) return "trial " + std::to_string(trial) + " relative error too large";
  }
  return "";
}

std::string retinex_identity() {
  Rng rng(12);
  NoGradGuard guard;
  for (int trial = 0; trial < 10; ++trial) {
    Tensor r = random_uniform({3, 8, 8}, 0.0f, 1.0f, rng);
    Tensor l = random_uniform({8, 8}, 0.05f, 1.0f, rng);
    std::vector<float> inv;
    for (float v : l.data()) inv.push_back(1.0f / v);
    Tensor back = mlle::light_up(mul_spatial(r, l), Tensor({8, 8}, inv));
    for (size_t i = 0; i < back.data().size(); ++i) {
      if (std::fabs(back.data()[i] - r.data()[i]) > 1e-6f) return "light-up does not invert the illumination";
    }
  }
  ParamStore store;
  const mlle::EnhancerParams p = mlle::enhancer_params(ParamBuilder(store, &rng));
  const mlle::EnhanceResult e = mlle::enhance_detailed(random_uniform({3, 8, 8}, 0.0f, 0.3f, rng), p);
  Tensor sum_back = add(e.lit, e.restored);
  for (size_t i = 0; i < sum_back.data().size(); ++i) {
    if (sum_back.data()[i] != e.enhanced.data()[i]) return "enhanced image is not light-up plus residual";
  }
  return "";
}

// Central differences against the recorded gradient of sum(f(x) * w).
std::string check_gradient(const std::string& name, Tensor x, const std::function<Tensor(const Tensor&)>& f,
                           Rng& rng) {
  x.set_requires_grad(true);
  x.set_name("x");
  Tensor probe;
  {
    NoGradGuard guard;
    probe = random_uniform(f(x).shape(), -1.0f, 1.0f, rng);
  }
  auto objective = [&] { return sum(mul(f(x), probe)); };
  const Tensor g = grad_of(objective(), {"x"}).at("x");
  for (int k = 0; k < 4; ++k) {
    const size_t i = static_cast<size_t>(rng.below(x.numel()));
    auto v = x.mutable_data();
    const float orig = v[i];
    const float h = 1e-3f;
    double plus, minus;
    {
      NoGradGuard guard;
      v[i] = orig + h;
      plus = objective().item();
      v[i] = orig - h;
      minus = objective().item();
      v[i] = orig;
    }
    const double numeric = (plus - minus) / (2.0 * h);
    const double analytic = g.data()[i];
    if (std::fabs(numeric - analytic) > 1e-2 * std::max(1.0, std::fabs(numeric))) {
      return name + " gradient mismatch";
    }
  }
  return "";
}

std::string gradient_spot_checks() {
  Rng rng(13);
  const Tensor w = random_uniform({5, 6}, -1.0f, 1.0f, rng);
  const Tensor gamma = random_uniform({6}, 0.5f, 1.5f, rng), beta = random_uniform({6}, -0.5f, 0.5f, rng);
  const Tensor kernel = random_uniform({4, 2, 3, 3}, -0.5f, 0.5f, rng);
  const Tensor A = scale(random_uniform({6, 4}, 0.5f, 1.5f, rng), -1.0f);
  const Tensor B = random_uniform({7, 4}, -1.0f, 1.0f, rng), C = random_uniform({7, 4}, -1.0f, 1.0f, rng);
  const Tensor D = random_uniform({6}, -1.0f, 1.0f, rng), delta = random_uniform({7, 6}, 0.05f, 0.5f, rng);
  std::vector<std::pair<std::string, std::function<std::string()>>> checks = {
      {"linear", [&] { return check_gradient("linear", random_uniform({3, 6}, -1, 1, rng),
                                             [&](const Tensor& x) { return linear(x, w); }, rng); }},
      {"layer_norm", [&] { return check_gradient("layer_norm", random_uniform({3, 6}, -1, 1, rng),
                                                 [&](const Tensor& x) { return layer_norm(x, gamma, beta); }, rng); }},
      {"conv2d", [&] { return check_gradient("conv2d", random_uniform({2, 6, 6}, -1, 1, rng),
                                             [&](const Tensor& x) { return conv2d(x, kernel, std::nullopt, {1, 1, 1}); },
                                             rng); }},
      {"selective_scan", [&] { return check_gradient("selective_scan", random_uniform({7, 6}, -1, 1, rng),
                                                     [&](const Tensor& x) {
                                                       return ssm::selective_scan(x, delta, A, B, C, D);
                                                     }, rng); }},
  };
  for (auto& [name, run] : checks) {
    const std::string r = run();
    if (!r.empty()) return r;
  }
  return "";
}

std::string metric_oracle() {
  Rng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const int64_t len = 1 + rng.below(50);
    std::vector<BBox> pred, gt;
    for (int64_t i = 0; i < len; ++i) {
      gt.push_back({rng.uniform(0, 100), rng.uniform(0, 100), rng.uniform(5, 50), rng.uniform(5, 50)});
      pred.push_back({gt.back().x + rng.uniform(-20, 20), gt.back().y + rng.uniform(-20, 20), rng.uniform(5, 50),
                      rng.uniform(5, 50)});
    }
    // Brute force: count successes threshold by threshold.
    int64_t hits = 0;
    for (int k = 0; k <= 20; ++k) {
      for (int64_t i = 0; i < len; ++i) hits += losses::iou(pred[i], gt[i]) >= k / 20.0 ? 1 : 0;
    }
    if (metrics::success_auc(pred, gt).summary != static_cast<double>(hits) / static_cast<double>(21 * len)) {
      return "success AUC differs from the oracle";
    }
  }
  if (std::fabs(losses::giou({0, 0, 1, 1}, {2, 0, 1, 1}) + 1.0 / 3.0) > 1e-6) return "disjoint GIoU case";
  if (std::fabs(losses::giou({0, 0, 2, 2}, {0, 0, 2, 1}) - 0.5) > 1e-6) return "nested GIoU case";
  return "";
}

std::string weights_roundtrip(const std::optional<fs::path>& file) {
  ParamStore store;
  Rng rng(15);
  ParamBuilder(store, &rng).uniform("probe.weight", {3, 4}, 4);
  const std::vector<uint8_t> bytes = serialize_params(store);
  if (serialize_params(deserialize_params(bytes)) != bytes) return "in-memory round trip changed bytes";
  if (file) {
    std::ifstream in(*file, std::ios::binary);
    if (!in) return "cannot open " + file->string();
    const std::vector<uint8_t> raw{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    try {
      if (serialize_params(deserialize_params(raw)) != raw) return file->string() + " does not round trip";
    } catch (const Error& e) {
      return e.what();
    }
  }
  return "";
}

}  // namespace

int cmd_selftest(const std::optional<fs::path>& weights_file, std::ostream& out, std::ostream& err) {
  const std::vector<std::pair<std::string, Group>> groups = {
      {"scan-equivalence", scan_equivalence},
      {"retinex-identity", retinex_identity},
      {"gradients", gradient_spot_checks},
      {"metric-oracle", metric_oracle},
      {"weights-roundtrip", [&] { return weights_roundtrip(weights_file); }},
  };
  bool ok = true;
  for (const auto& [name, run] : groups) {
    std::string reason;
    try {
      reason = run();
    } catch (const std::exception& e) {
      reason = e.what();
    }
    if (reason.empty()) {
      out << "PASS " << name << '\n';
    } else {
      out << "FAIL " << name << '\n';
      err << name << ": " << reason << '\n';
      ok = false;
    }
  }
  return ok ? kOk : kSelftestFailed;
}

}  // namespace nightrack::cli
