#pragma once

#include <map>
#include <string>

#include "nightrack/param_store.hpp"

namespace nightrack {

struct AdamWOptions {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 1e-4f;
};

/// One decoupled-weight-decay Adam update of every trainable entry, in place.
/// Moment buffers and the step counter live in the store under "adamw.".
/// Only trainable entries whose names start with `prefix` are touched.
/// Throws GradError if one of them has no gradient.
void adamw_step(ParamStore& params, const std::map<std::string, Tensor>& grads,
                const AdamWOptions& options = {}, const std::string& prefix = "");

}  // namespace nightrack
