#include "scan/optim.hpp"

#include <cmath>

#include "scan/error.hpp"

namespace scan {

void adam_step(std::span<real> param, std::span<const real> grad, AdamState& state, real lr,
               const std::string& name) {
  if (grad.size() != param.size()) {
    throw ShapeError("adam: gradient size mismatch for " + name);
  }
  if (lr < 0.0f) throw UsageError("adam: negative learning rate");
  for (real g : grad) {
    if (!std::isfinite(g)) throw NumericError("non-finite gradient for parameter " + name);
  }
  if (state.m.size() != param.size()) {
    state.m.assign(param.size(), 0.0f);
    state.v.assign(param.size(), 0.0f);
  }
  ++state.step;
  const real b1 = state.beta1;
  const real b2 = state.beta2;
  const real correction1 = 1.0f - static_cast<real>(std::pow(static_cast<double>(b1), state.step));
  const real correction2 = 1.0f - static_cast<real>(std::pow(static_cast<double>(b2), state.step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    state.m[i] = b1 * state.m[i] + (1.0f - b1) * grad[i];
    state.v[i] = b2 * state.v[i] + (1.0f - b2) * grad[i] * grad[i];
    const real m_hat = state.m[i] / correction1;
    const real v_hat = state.v[i] / correction2;
    param[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

Adam::Adam(std::vector<std::pair<std::string, Tensor>> params, AdamOptions options)
    : params_(std::move(params)) {
  states_.resize(params_.size());
  for (auto& s : states_) {
    s.beta1 = options.beta1;
    s.beta2 = options.beta2;
    s.eps = options.eps;
  }
}

void Adam::step(real lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& [name, tensor] = params_[i];
    if (!tensor.has_grad()) continue;
    adam_step(tensor.data_mut(), tensor.grad_data(), states_[i], lr, name);
  }
}

void Adam::zero_grad() {
  for (auto& [name, tensor] : params_) tensor.zero_grad();
}

}  // namespace scan
