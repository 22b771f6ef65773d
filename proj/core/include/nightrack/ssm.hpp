#pragma once

#include <vector>

#include "nightrack/param_store.hpp"
#include "nightrack/tensor.hpp"

namespace nightrack::ssm {

/// Inputs of one diagonal selective recurrence
///   h_t = exp(delta_t * A) * h_{t-1} + delta_t * B_t * u_t,   h_0 = 0
///   y_t = C_t . h_t + D_skip * u_t
/// for u of shape [L, D].
struct SsmParams {
  Tensor A;       // [D, N], strictly negative
  Tensor B;       // [L, N]
  Tensor C;       // [L, N]
  Tensor D_skip;  // [D]
  Tensor delta;   // [L, D], strictly positive
};

struct Discretized {
  Tensor a_bar;  // [L, D, N]
  Tensor b_bar;  // [L, D, N]
};

/// A_bar = exp(delta * A), B_bar = delta * B (Euler step for B).
Discretized discretize(const Tensor& A, const Tensor& B, const Tensor& delta);

/// Sequential recurrence. Differentiable with respect to every input.
Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& A, const Tensor& B,
                      const Tensor& C, const Tensor& D_skip);

Tensor selective_scan_seq(const Tensor& u, const SsmParams& params);

/// Same recurrence evaluated as a work-efficient (up-sweep/down-sweep)
/// associative scan over affine maps. Forward only. Channels are split over
/// `workers` threads; each channel's combine tree is fixed, so the result does
/// not depend on the worker count.
Tensor selective_scan_parallel(const Tensor& u, const SsmParams& params, int workers = 1);

enum class ScanMode { Sequential, Parallel };

struct MambaConfig {
  int64_t d_model = 0;
  int64_t d_state = 16;
  int64_t conv_width = 4;
  int64_t expand = 2;

  int64_t d_inner() const { return expand * d_model; }
  int64_t dt_rank() const { return (d_model + 15) / 16; }
};

struct MambaBlockParams {
  MambaConfig config;
  Tensor in_proj;     // [2*D_inner, D]; rows [0, D_inner) feed the scan, the rest the gate
  Tensor conv_w;      // [D_inner, 1, conv_width]
  Tensor conv_b;      // [D_inner]
  Tensor x_proj;      // [dt_rank + 2N, D_inner] -> (dt, B, C)
  Tensor dt_proj_w;   // [D_inner, dt_rank]
  Tensor dt_proj_b;   // [D_inner]
  Tensor A_log;       // [D_inner, N]; A = -exp(A_log)
  Tensor D_skip;      // [D_inner]
  Tensor out_proj;    // [D, D_inner]
};

/// The state-space core shared by the block and the cross-modal fusion:
/// causal conv1d -> SiLU -> input-dependent (delta, B, C) -> selective scan.
struct ScanBranchParams {
  Tensor conv_w;     // [D_inner, 1, conv_width]
  Tensor conv_b;     // [D_inner]
  Tensor x_proj;     // [dt_rank + 2N, D_inner]
  Tensor dt_proj_w;  // [D_inner, dt_rank]
  Tensor dt_proj_b;  // [D_inner]
  Tensor A_log;      // [D_inner, N]
  Tensor D_skip;     // [D_inner]
};

ScanBranchParams scan_branch_params(ParamBuilder builder, const MambaConfig& config);

/// x is [L, D_inner]; returns [L, D_inner].
Tensor scan_branch(const Tensor& x, const MambaConfig& config, const ScanBranchParams& params,
                   ScanMode mode = ScanMode::Sequential);

/// Creates (builder with generator) or binds (builder without) block
/// parameters under the builder's prefix. A starts at -[1..N] per channel.
MambaBlockParams mamba_block_params(ParamBuilder builder, const MambaConfig& config);

/// in-proj -> split -> (causal conv1d -> SiLU -> selective SSM) * SiLU(gate)
/// -> out-proj. tokens is [L, D] or a batch [B, L, D] of independent
/// sequences. No residual; callers add it.
Tensor mamba_block(const Tensor& tokens, const MambaBlockParams& params,
                   ScanMode mode = ScanMode::Sequential);

/// Mean of a forward pass and a pass over the reversed sequence.
Tensor bidirectional_mamba(const Tensor& tokens, const MambaBlockParams& fwd, const MambaBlockParams& bwd,
                           ScanMode mode = ScanMode::Sequential);

}  // namespace nightrack::ssm
