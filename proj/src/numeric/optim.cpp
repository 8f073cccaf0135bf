#include "draftrevise/numeric/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace draftrevise::numeric {

OptimizerState OptimizerState::for_parameters(std::span<Parameter* const> params) {
  OptimizerState state;
  for (const Parameter* p : params) {
    state.first_moment.emplace_back(p->value.shape(), 0.0);
    state.second_moment.emplace_back(p->value.shape(), 0.0);
  }
  return state;
}

void adamw_step(std::span<Parameter* const> params, OptimizerState& state,
                const AdamWConfig& config, double lr) {
  if (!(lr >= 0.0)) throw std::invalid_argument("adamw_step: learning rate must be >= 0");
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw std::invalid_argument("adamw_step: optimizer state does not match parameter list");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    if (!m.same_shape(p.value) || !v.same_shape(p.value)) {
      throw std::invalid_argument("adamw_step: moment shape mismatch for " + p.name);
    }
    if (p.grad.shape() != p.value.shape()) p.zero_grad();
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j];
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g;
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g;
      const double mhat = m[j] / correction1;
      const double vhat = v[j] / correction2;
      double w = p.value[j] * (1.0 - lr * config.weight_decay);
      w -= lr * mhat / (std::sqrt(vhat) + config.eps);
      p.value[j] = w;
    }
  }
}

double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double lr_init,
                 double lr_final) {
  if (total_steps == 0 || step >= total_steps) return lr_final;
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + std::cos(std::numbers::pi * progress));
}

void round_to_float(Tensor& t) {
  for (double& v : t.values()) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace draftrevise::numeric
