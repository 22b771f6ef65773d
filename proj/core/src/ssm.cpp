#include "nightrack/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "nightrack/ops.hpp"
#include "gemm.hpp"

namespace nightrack::ssm {

using detail::TensorImpl;

namespace {

struct ScanDims {
  int64_t length, channels, state;
};

ScanDims check_scan_shapes(const Tensor& u, const Tensor& delta, const Tensor& A, const Tensor& B,
                           const Tensor& C, const Tensor& D_skip) {
  if (u.rank() != 2) throw ShapeError("selective_scan: u must be [L, D], got " + shape_str(u.shape()));
  const int64_t len = u.dim(0), d = u.dim(1);
  if (A.rank() != 2 || A.dim(0) != d) {
    throw ShapeError("selective_scan: A must be [D, N] with D = " + std::to_string(d) + ", got " +
                     shape_str(A.shape()));
  }
  const int64_t n = A.dim(1);
  if (delta.shape() != Shape{len, d}) {
    throw ShapeError("selective_scan: delta must be [L, D] = " + shape_str({len, d}) + ", got " +
                     shape_str(delta.shape()));
  }
  if (B.shape() != Shape{len, n}) {
    throw ShapeError("selective_scan: B must be [L, N] = " + shape_str({len, n}) + ", got " +
                     shape_str(B.shape()));
  }
  if (C.shape() != Shape{len, n}) {
    throw ShapeError("selective_scan: C must be [L, N] = " + shape_str({len, n}) + ", got " +
                     shape_str(C.shape()));
  }
  if (D_skip.shape() != Shape{d}) {
    throw ShapeError("selective_scan: D_skip must be [D] = [" + std::to_string(d) + "], got " +
                     shape_str(D_skip.shape()));
  }
  for (float v : delta.data()) {
    if (!(v > 0.0f)) throw ValueError("selective_scan: delta must be strictly positive");
  }
  return {len, d, n};
}

using Arr = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic>;  // column-major
using ArrMap = Eigen::Map<Arr>;
using ConstArrMap = Eigen::Map<const Arr>;
using Vec = Eigen::Array<float, Eigen::Dynamic, 1>;
using ConstVecMap = Eigen::Map<const Vec>;

// A [D, N] row-major read as an [N, D] column-major array, so a channel's
// states are contiguous.
ConstArrMap state_view(const float* p, const ScanDims& s) { return ConstArrMap(p, s.state, s.channels); }

// exp(delta_t[d] * A[d, n]) as [N, D]. The product is materialized first;
// Eigen only vectorizes exp over a plain array.
void decay(const ScanDims& s, const float* A, const float* delta_t, Arr& tmp, Arr& out) {
  tmp = state_view(A, s).rowwise() * ConstVecMap(delta_t, s.channels).transpose();
  out = tmp.exp();
}

// C_t . h_t in a fixed left-to-right order shared by both scan kernels, so
// their outputs agree bit for bit whenever the states do.
float readout(const float* h, const float* c, int64_t n) {
  float acc = 0.0f;
  for (int64_t k = 0; k < n; ++k) acc += c[k] * h[k];
  return acc;
}

// Runs the recurrence; if `states` is non-null it receives h_t for every t
// as [L, D, N].
void scan_forward(const ScanDims& s, const float* u, const float* delta, const float* A, const float* B,
                  const float* C, const float* D_skip, float* y, float* states) {
  const int64_t dn = s.channels * s.state;
  Arr h = Arr::Zero(s.state, s.channels);
  Arr a, tmp;
  for (int64_t t = 0; t < s.length; ++t) {
    const float* dt = delta + t * s.channels;
    const float* ut = u + t * s.channels;
    const ConstVecMap bt(B + t * s.state, s.state);
    decay(s, A, dt, tmp, a);
    h *= a;
    for (int64_t d = 0; d < s.channels; ++d) {
      h.col(d) += bt * (dt[d] * ut[d]);
      y[t * s.channels + d] = readout(h.col(d).data(), C + t * s.state, s.state) + D_skip[d] * ut[d];
    }
    if (states) std::copy(h.data(), h.data() + dn, states + t * dn);
  }
}

}  // namespace

Discretized discretize(const Tensor& A, const Tensor& B, const Tensor& delta) {
  if (A.rank() != 2) throw ShapeError("discretize: A must be [D, N], got " + shape_str(A.shape()));
  const int64_t d = A.dim(0), n = A.dim(1);
  if (delta.rank() != 2 || delta.dim(1) != d) {
    throw ShapeError("discretize: delta must be [L, D] with D = " + std::to_string(d));
  }
  const int64_t len = delta.dim(0);
  if (B.shape() != Shape{len, n}) throw ShapeError("discretize: B must be [L, N] = " + shape_str({len, n}));
  for (float v : delta.data()) {
    if (!(v > 0.0f)) throw ValueError("discretize: delta must be strictly positive");
  }
  auto av = A.data(), bv = B.data(), dv = delta.data();
  std::vector<float> a_bar(static_cast<size_t>(len * d * n)), b_bar(a_bar.size());
  for (int64_t t = 0; t < len; ++t) {
    for (int64_t c = 0; c < d; ++c) {
      const float dt = dv[static_cast<size_t>(t * d + c)];
      for (int64_t k = 0; k < n; ++k) {
        const size_t i = static_cast<size_t>((t * d + c) * n + k);
        a_bar[i] = std::exp(dt * av[static_cast<size_t>(c * n + k)]);
        b_bar[i] = dt * bv[static_cast<size_t>(t * n + k)];
      }
    }
  }
  return {Tensor({len, d, n}, std::move(a_bar)), Tensor({len, d, n}, std::move(b_bar))};
}

Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& A, const Tensor& B,
                      const Tensor& C, const Tensor& D_skip) {
  const ScanDims s = check_scan_shapes(u, delta, A, B, C, D_skip);
  std::vector<float> y(static_cast<size_t>(s.length * s.channels));
  scan_forward(s, u.data().data(), delta.data().data(), A.data().data(), B.data().data(), C.data().data(),
               D_skip.data().data(), y.data(), nullptr);

  return detail::make_result("selective_scan", {s.length, s.channels}, std::move(y), {u, delta, A, B, C, D_skip},
                             [s](TensorImpl& self) {
    const float* u = self.parents[0]->data.data();
    const float* delta = self.parents[1]->data.data();
    const float* A = self.parents[2]->data.data();
    const float* B = self.parents[3]->data.data();
    const float* C = self.parents[4]->data.data();
    const float* Dk = self.parents[5]->data.data();
    auto grad_ptr = [&](size_t i) {
      auto& p = self.parents[i];
      return p->requires_grad ? p->grad_buffer() : nullptr;
    };
    float* gu = grad_ptr(0);
    float* gdelta = grad_ptr(1);
    float* gA = grad_ptr(2);
    float* gB = grad_ptr(3);
    float* gC = grad_ptr(4);
    float* gD = grad_ptr(5);

    const int64_t dn = s.channels * s.state;
    // States are recomputed here so the forward pass keeps no [L, D, N] buffer.
    std::vector<float> states(static_cast<size_t>(s.length * dn));
    std::vector<float> y_unused(static_cast<size_t>(s.length * s.channels));
    scan_forward(s, u, delta, A, B, C, Dk, y_unused.data(), states.data());

    Arr gh = Arr::Zero(s.state, s.channels);  // carried dL/dh_t
    Arr a, tmp, ghn, ga;
    const ConstArrMap a_mat = state_view(A, s);
    const ConstVecMap dk(Dk, s.channels);
    const Arr zero = Arr::Zero(s.state, s.channels);
    for (int64_t t = s.length - 1; t >= 0; --t) {
      const int64_t row = t * s.channels;
      const ConstVecMap g(self.grad.data() + row, s.channels);
      const ConstVecMap dt(delta + row, s.channels);
      const ConstVecMap ut(u + row, s.channels);
      const ConstVecMap bt(B + t * s.state, s.state);
      const ConstVecMap ct(C + t * s.state, s.state);
      const ConstArrMap ht(states.data() + t * dn, s.state, s.channels);
      const ConstArrMap hprev(t > 0 ? states.data() + (t - 1) * dn : zero.data(), s.state, s.channels);

      decay(s, A, delta + row, tmp, a);
      ghn = gh;
      Vec bg(s.channels);  // sum_n B_n ghn[n, d]
      for (int64_t d = 0; d < s.channels; ++d) {
        ghn.col(d) += ct * g[d];
        bg[d] = (bt * ghn.col(d)).sum();
      }
      ga = ghn * hprev;
      if (gC) Eigen::Map<Vec>(gC + t * s.state, s.state) += (ht.matrix() * g.matrix()).array();
      if (gB) Eigen::Map<Vec>(gB + t * s.state, s.state) += (ghn.matrix() * (dt * ut).matrix()).array();
      if (gD) Eigen::Map<Vec>(gD, s.channels) += g * ut;
      if (gu) Eigen::Map<Vec>(gu + row, s.channels) += g * dk + dt * bg;
      if (gdelta) {
        tmp = ga * a * a_mat;
        Eigen::Map<Vec>(gdelta + row, s.channels) += tmp.colwise().sum().transpose() + bg * ut;
      }
      if (gA) {
        tmp = ga * a;
        ArrMap(gA, s.state, s.channels) += tmp.rowwise() * dt.transpose();
      }
      gh = ghn * a;
    }
  });
}

Tensor selective_scan_seq(const Tensor& u, const SsmParams& p) {
  return selective_scan(u, p.delta, p.A, p.B, p.C, p.D_skip);
}

namespace {

// Exclusive prefix of affine maps x -> a*x + b over one channel, in place.
// compose(first, second) = (second.a * first.a, second.a * first.b + second.b).
void blelloch_exclusive(std::vector<float>& a, std::vector<float>& b) {
  const size_t p = a.size();
  for (size_t s = 1; s < p; s <<= 1) {
    for (size_t i = 2 * s - 1; i < p; i += 2 * s) {
      b[i] = a[i] * b[i - s] + b[i];
      a[i] = a[i] * a[i - s];
    }
  }
  a[p - 1] = 1.0f;
  b[p - 1] = 0.0f;
  for (size_t s = p >> 1; s >= 1; s >>= 1) {
    for (size_t i = 2 * s - 1; i < p; i += 2 * s) {
      const float left_a = a[i - s], left_b = b[i - s];
      a[i - s] = a[i];
      b[i - s] = b[i];
      // prefix then left subtree
      b[i] = left_a * b[i] + left_b;
      a[i] = left_a * a[i];
    }
    if (s == 1) break;
  }
}

}  // namespace

Tensor selective_scan_parallel(const Tensor& u, const SsmParams& params, int workers) {
  const ScanDims s = check_scan_shapes(u, params.delta, params.A, params.B, params.C, params.D_skip);
  const float* up = u.data().data();
  const float* delta = params.delta.data().data();
  const float* A = params.A.data().data();
  const float* B = params.B.data().data();
  const float* C = params.C.data().data();
  const float* Dk = params.D_skip.data().data();

  size_t padded = 1;
  while (padded < static_cast<size_t>(s.length)) padded <<= 1;
  std::vector<float> y(static_cast<size_t>(s.length * s.channels), 0.0f);

  auto run_channels = [&](int64_t d_begin, int64_t d_end) {
    std::vector<float> a(padded), b(padded), states(static_cast<size_t>(s.length * s.state));
    for (int64_t d = d_begin; d < d_end; ++d) {
      for (int64_t n = 0; n < s.state; ++n) {
        const float an = A[d * s.state + n];
        for (size_t t = 0; t < padded; ++t) {
          if (t < static_cast<size_t>(s.length)) {
            const float dt = delta[static_cast<int64_t>(t) * s.channels + d];
            a[t] = std::exp(dt * an);
            b[t] = B[static_cast<int64_t>(t) * s.state + n] * (dt * up[static_cast<int64_t>(t) * s.channels + d]);
          } else {
            a[t] = 1.0f;
            b[t] = 0.0f;
          }
        }
        std::vector<float> a_elem(a.begin(), a.begin() + s.length);
        std::vector<float> b_elem(b.begin(), b.begin() + s.length);
        blelloch_exclusive(a, b);
        for (int64_t t = 0; t < s.length; ++t) {
          // inclusive state: element applied after the exclusive prefix, from h_0 = 0
          states[static_cast<size_t>(t * s.state + n)] =
              a_elem[static_cast<size_t>(t)] * b[static_cast<size_t>(t)] + b_elem[static_cast<size_t>(t)];
        }
      }
      for (int64_t t = 0; t < s.length; ++t) {
        y[static_cast<size_t>(t * s.channels + d)] =
            readout(states.data() + t * s.state, C + t * s.state, s.state) + Dk[d] * up[t * s.channels + d];
      }
    }
  };

  const int64_t n_workers = std::clamp<int64_t>(workers, 1, s.channels);
  if (n_workers == 1) {
    run_channels(0, s.channels);
  } else {
    std::vector<std::thread> pool;
    const int64_t per = (s.channels + n_workers - 1) / n_workers;
    for (int64_t w = 0; w < n_workers; ++w) {
      const int64_t lo = w * per, hi = std::min(s.channels, lo + per);
      if (lo < hi) pool.emplace_back(run_channels, lo, hi);
    }
    for (auto& th : pool) th.join();
  }
  detail::check_finite(y, "selective_scan_parallel");
  return Tensor({s.length, s.channels}, std::move(y));
}

ScanBranchParams scan_branch_params(ParamBuilder b, const MambaConfig& cfg) {
  const int64_t di = cfg.d_inner(), n = cfg.d_state, r = cfg.dt_rank();
  ScanBranchParams p;
  p.conv_w = b.uniform("conv_w", {di, 1, cfg.conv_width}, cfg.conv_width);
  p.conv_b = b.constant("conv_b", {di}, 0.0f);
  p.x_proj = b.uniform("x_proj", {r + 2 * n, di}, di);
  p.dt_proj_w = b.uniform("dt_proj_w", {di, r}, r);

  std::vector<float> dt_bias;
  std::vector<float> a_log;
  if (b.creating()) {
    // Step sizes start log-spaced in [1e-3, 1e-1]; bias is their inverse softplus.
    dt_bias.resize(static_cast<size_t>(di));
    for (int64_t c = 0; c < di; ++c) {
      const double frac = di > 1 ? static_cast<double>(c) / static_cast<double>(di - 1) : 0.5;
      const double dt = std::exp(std::log(1e-3) + frac * (std::log(1e-1) - std::log(1e-3)));
      dt_bias[static_cast<size_t>(c)] = static_cast<float>(dt + std::log(-std::expm1(-dt)));
    }
    a_log.resize(static_cast<size_t>(di * n));
    for (int64_t c = 0; c < di; ++c) {
      for (int64_t k = 0; k < n; ++k) a_log[static_cast<size_t>(c * n + k)] = std::log(static_cast<float>(k + 1));
    }
  }
  p.dt_proj_b = b.values("dt_proj_b", {di}, std::move(dt_bias));
  p.A_log = b.values("A_log", {di, n}, std::move(a_log));
  p.D_skip = b.constant("D_skip", {di}, 1.0f);
  return p;
}

MambaBlockParams mamba_block_params(ParamBuilder b, const MambaConfig& cfg) {
  if (cfg.d_model < 1) throw ValueError("mamba block needs d_model >= 1");
  const int64_t d = cfg.d_model, di = cfg.d_inner();
  MambaBlockParams p;
  p.config = cfg;
  p.in_proj = b.uniform("in_proj", {2 * di, d}, d);
  ScanBranchParams core = scan_branch_params(b, cfg);
  p.conv_w = core.conv_w;
  p.conv_b = core.conv_b;
  p.x_proj = core.x_proj;
  p.dt_proj_w = core.dt_proj_w;
  p.dt_proj_b = core.dt_proj_b;
  p.A_log = core.A_log;
  p.D_skip = core.D_skip;
  p.out_proj = b.uniform("out_proj", {d, di}, di);
  return p;
}

Tensor scan_branch(const Tensor& x, const MambaConfig& cfg, const ScanBranchParams& p, ScanMode mode) {
  const int64_t di = cfg.d_inner(), n = cfg.d_state, r = cfg.dt_rank();
  if (x.rank() != 2 || x.dim(1) != di) {
    throw ShapeError("scan_branch: input must be [L, " + std::to_string(di) + "], got " + shape_str(x.shape()));
  }
  Tensor u = silu(transpose(conv1d(transpose(x), p.conv_w, p.conv_b)));

  Tensor dt_in = linear(u, slice(p.x_proj, 0, r));
  Tensor B = linear(u, slice(p.x_proj, r, r + n));
  Tensor C = linear(u, slice(p.x_proj, r + n, r + 2 * n));
  Tensor delta = softplus(linear(dt_in, p.dt_proj_w, p.dt_proj_b));
  Tensor A = scale(exp(p.A_log), -1.0f);

  if (mode == ScanMode::Parallel && !grad_mode_enabled()) {
    return selective_scan_parallel(u, SsmParams{A, B, C, p.D_skip, delta});
  }
  return selective_scan(u, delta, A, B, C, p.D_skip);
}

namespace {

Tensor mamba_single(const Tensor& tokens, const MambaBlockParams& p, ScanMode mode) {
  const MambaConfig& cfg = p.config;
  if (tokens.rank() != 2 || tokens.dim(1) != cfg.d_model) {
    throw ShapeError("mamba_block: tokens must be [L, " + std::to_string(cfg.d_model) + "], got " +
                     shape_str(tokens.shape()));
  }
  const int64_t di = cfg.d_inner();
  Tensor x = linear(tokens, slice(p.in_proj, 0, di));
  Tensor gate = linear(tokens, slice(p.in_proj, di, 2 * di));
  const ScanBranchParams core{p.conv_w, p.conv_b, p.x_proj, p.dt_proj_w, p.dt_proj_b, p.A_log, p.D_skip};
  Tensor y = scan_branch(x, cfg, core, mode);
  return linear(mul(y, silu(gate)), p.out_proj);
}

}  // namespace

Tensor mamba_block(const Tensor& tokens, const MambaBlockParams& params, ScanMode mode) {
  if (tokens.rank() == 3) {
    const int64_t batch = tokens.dim(0), len = tokens.dim(1), d = tokens.dim(2);
    std::vector<Tensor> outs;
    outs.reserve(static_cast<size_t>(batch));
    Tensor flat = reshape(tokens, {batch * len, d});
    for (int64_t i = 0; i < batch; ++i) {
      outs.push_back(mamba_single(slice(flat, i * len, (i + 1) * len), params, mode));
    }
    return reshape(concat(outs), {batch, len, d});
  }
  return mamba_single(tokens, params, mode);
}

Tensor bidirectional_mamba(const Tensor& tokens, const MambaBlockParams& fwd, const MambaBlockParams& bwd,
                           ScanMode mode) {
  Tensor forward = mamba_block(tokens, fwd, mode);
  Tensor backward = reverse(mamba_block(reverse(tokens), bwd, mode));
  return scale(add(forward, backward), 0.5f);
}

}  // namespace nightrack::ssm
