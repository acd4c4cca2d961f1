#pragma once

#include <cstdint>
#include <vector>

#include "csn/backbone.hpp"
#include "csn/tensor.hpp"

namespace csn {

struct AdamConfig {
  double lr_last = 1e-4;
  double lr_rest = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;
  // false: L2 term added to the gradient before the moments (classic Adam).
  // true: decay applied directly to the weights (AdamW).
  bool decoupled = false;

  double lr_for(ParamGroup g) const { return g == ParamGroup::kLastLayer ? lr_last : lr_rest; }
};

struct OptimState {
  std::int64_t step = 0;
  std::vector<Tensor> m;  // aligned with ParamStore order
  std::vector<Tensor> v;

  // Checkpoint tensors "adam.step", "adam.m.<param>", "adam.v.<param>".
  std::vector<NamedTensor> to_named(const ParamStore& params) const;
  static OptimState from_named(const ParamStore& params, const std::vector<NamedTensor>& tensors);
};

OptimState init_optim_state(const ParamStore& params);

// One bias-corrected Adam update. `grads` align with params.params().
void adam_step(ParamStore& params, const std::vector<Tensor>& grads, OptimState& state, const AdamConfig& cfg);

}  // namespace csn
