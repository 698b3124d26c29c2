#include "scan/losses.hpp"

#include <cmath>

#include "scan/error.hpp"
#include "scan/ops.hpp"

namespace scan {

void LossWeights::validate() const {
  if (!(lambda_cycle >= 0.0f) || !(lambda_gp >= 0.0f)) throw ConfigError("loss weights must be non-negative");
}

namespace {

Tensor clamped_prob(const Tensor& score) { return clamp(sigmoid(score), kProbClamp, 1.0f - kProbClamp); }

void require_finite(const Tensor& t, const char* what) {
  for (real v : t.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string(what) + " is not finite");
  }
}

}  // namespace

Tensor log_prob_real(const Tensor& score) { return log(clamped_prob(score)); }

Tensor log_prob_fake(const Tensor& score) { return log(one_minus(clamped_prob(score))); }

Tensor gradient_penalty(const NetFn& D, const Tensor& real) {
  auto penalty_on = [&](Tape& tape, bool create_graph) {
    Tensor probe = real.detach().requires_grad_(true);
    const Tensor score = mean(D(probe));
    const Tensor probes[] = {probe};
    const Tensor g = grad(score, probes, tape, create_graph)[0];
    const Tensor norm = sqrt(add_scalar(sum(square(g)), 1e-12f));
    return square(add_scalar(norm, -1.0f));
  };
  if (Tape* tape = active_tape()) return penalty_on(*tape, true);
  // Evaluation only: the input gradient still needs a tape of its own.
  Tape local;
  Tensor value;
  {
    TapeScope scope(local);
    value = penalty_on(local, false);
  }
  return value.detach();
}

DiscriminatorLoss adversarial_loss_D(const NetFn& D, const Tensor& real, const Tensor& fake, float lambda_gp) {
  if (real.shape() != fake.shape()) {
    throw ShapeError("adversarial_loss_D: real " + real.shape().str() + " vs fake " + fake.shape().str());
  }
  DiscriminatorLoss out;
  const Tensor real_term = mean(log_prob_real(D(real)));
  const Tensor fake_term = mean(log_prob_fake(D(fake.detach())));
  out.log_term = neg(add(real_term, fake_term));
  out.penalty = lambda_gp != 0.0f ? gradient_penalty(D, real) : Tensor::scalar(0.0f);
  out.total = add(out.log_term, mul_scalar(out.penalty, lambda_gp));
  require_finite(out.total, "discriminator loss");
  return out;
}

Tensor adversarial_loss_G(const NetFn& D, const Tensor& fake, GeneratorLossForm form) {
  const Tensor score = D(fake);
  Tensor loss = form == GeneratorLossForm::non_saturating ? neg(mean(log_prob_real(score)))
                                                          : mean(log_prob_fake(score));
  require_finite(loss, "generator loss");
  return loss;
}

Tensor cycle_loss(const NetFn& fwd, const NetFn& back, const Tensor& x) {
  const Tensor rec = back(fwd(x));
  if (rec.shape() != x.shape()) {
    throw ShapeError("cycle_loss: reconstruction " + rec.shape().str() + " vs input " + x.shape().str());
  }
  return l1_mean(x, rec);
}

}  // namespace scan
