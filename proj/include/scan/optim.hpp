#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "scan/tensor.hpp"

namespace scan {

struct AdamOptions {
  real beta1 = 0.5f;
  real beta2 = 0.999f;
  real eps = 1e-8f;
};

/// Moment accumulators for one parameter.
struct AdamState {
  std::vector<real> m;
  std::vector<real> v;
  std::int64_t step = 0;
  real beta1 = 0.5f;
  real beta2 = 0.999f;
  real eps = 1e-8f;
};

/// One bias-corrected Adam update of `param` from `grad`. Throws NumericError
/// naming `name` when the gradient is not finite.
void adam_step(std::span<real> param, std::span<const real> grad, AdamState& state, real lr,
               const std::string& name);

/// Adam over a named parameter set. Parameters without a gradient after the
/// backward pass are left untouched (their step counter does not advance).
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, Tensor>> params, AdamOptions options = {});

  void step(real lr);
  void zero_grad();
  const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }
  const AdamState& state(std::size_t i) const { return states_.at(i); }

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<AdamState> states_;
};

}  // namespace scan
