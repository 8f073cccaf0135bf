#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "draftrevise/numeric/autograd.hpp"
#include "draftrevise/numeric/tensor.hpp"

namespace draftrevise::numeric {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 1e-4;
  double eps = 1e-8;
};

/// Moment accumulators aligned with a parameter list.
struct OptimizerState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;

  /// Zero moments shaped like `params`.
  static OptimizerState for_parameters(std::span<Parameter* const> params);
};

/// One AdamW update with decoupled weight decay and bias correction. Reads
/// Parameter::grad; does not clear it. Throws std::invalid_argument on lr < 0
/// or on shape disagreement between params and state.
void adamw_step(std::span<Parameter* const> params, OptimizerState& state,
                const AdamWConfig& config, double lr);

/// Half-cosine decay from lr_init at step 0 to lr_final at total_steps;
/// steps past the end clamp to lr_final.
double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double lr_init = 1e-4,
                 double lr_final = 0.0);

/// Rounds every element to the nearest float. Training runs keep persistent
/// state on the single-precision grid so checkpoints are lossless.
void round_to_float(Tensor& t);

}  // namespace draftrevise::numeric
