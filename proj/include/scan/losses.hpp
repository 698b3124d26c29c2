#pragma once

#include <functional>

#include "scan/tensor.hpp"

namespace scan {

enum class GeneratorLossForm { non_saturating, literal_eq1 };

struct LossWeights {
  real lambda_cycle = 10.0f;
  real lambda_gp = 10.0f;

  void validate() const;
};

/// Maps an image batch to a raw score map (discriminator) or to an image
/// batch (generator).
using NetFn = std::function<Tensor(const Tensor&)>;

/// Probability floor/ceiling applied to sigmoid(score) before taking logs.
inline constexpr real kProbClamp = 1e-7f;

/// log(clamp(sigmoid(score), 1e-7, 1 - 1e-7)) and log(1 - ...).
Tensor log_prob_real(const Tensor& score);
Tensor log_prob_fake(const Tensor& score);

/// (||d mean(D(real)) / d real||_2 - 1)^2 at the real samples. Recorded on the
/// active tape (with a differentiable gradient) when there is one.
Tensor gradient_penalty(const NetFn& D, const Tensor& real);

struct DiscriminatorLoss {
  Tensor total;     // log_term + lambda_gp * penalty
  Tensor log_term;  // -[mean log s(D(real)) + mean log(1 - s(D(fake)))]
  Tensor penalty;   // unweighted
};

/// `fake` must not carry generator history; it is detached here regardless.
DiscriminatorLoss adversarial_loss_D(const NetFn& D, const Tensor& real, const Tensor& fake, float lambda_gp);

/// non_saturating: -mean log s(D(fake)); literal_eq1: mean log(1 - s(D(fake))).
Tensor adversarial_loss_G(const NetFn& D, const Tensor& fake, GeneratorLossForm form);

/// mean |x - back(fwd(x))|
Tensor cycle_loss(const NetFn& fwd, const NetFn& back, const Tensor& x);

}  // namespace scan
