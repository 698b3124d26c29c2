#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "scan/tensor.hpp"

namespace scan {

struct GradCheckOptions {
  real step = 1e-3f;
  /// Coordinates probed per input; 0 probes every element.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0;
  /// Lower bound on the error denominator, so inputs whose true gradient is
  /// zero are compared absolutely rather than against rounding noise.
  double min_scale = 1e-5;
  /// A coordinate whose central differences at `step` and `step / 2` disagree
  /// by more than this (relative to the input's gradient scale) straddles a
  /// non-smooth point and is skipped. Negative disables skipping.
  double nonsmooth_threshold = 5e-4;
  /// Perturb the given leaf tensors themselves instead of copies, so `fn` can
  /// read them through handles it already holds (e.g. network parameters).
  /// Values are restored afterwards.
  bool in_place = false;
  /// Contract the output with ones instead of a random cotangent: `fn`
  /// returns the per-element terms of a scalar loss, which the numeric side
  /// then sums in double precision.
  bool sum_output = false;
  /// Keep relu/leaky_relu/abs/clamp on the branches taken at the unperturbed
  /// point, so differences measure the smooth piece the analytic gradient
  /// belongs to even when a step crosses a kink.
  bool replay_branches = true;
};

struct GradCheckResult {
  /// Max over probed coordinates of |analytic - numeric| divided by the
  /// largest gradient magnitude (analytic or numeric) of that input, floored
  /// at `min_scale`.
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t coords_skipped = 0;
  /// Checked coordinates whose perturbed evaluations crossed at least one
  /// kink (only counted with `replay_branches`).
  std::size_t coords_crossing_kinks = 0;
  /// Largest estimated rounding error of a finite difference relative to the
  /// gradient scale. Near or above the tolerance, float32 cannot resolve the
  /// check on this instance.
  double max_noise_ratio = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;

  bool ok(double tolerance) const { return max_rel_error <= tolerance; }
};

/// Any output shape is accepted. Outputs with more than one element are
/// contracted with a fixed random cotangent in [-1, 1]; the numeric side does
/// that contraction in double precision so the check is not limited by the
/// rounding of one large real sum.
using CheckedFn = std::function<Tensor(std::span<const Tensor>)>;
using ScalarFn = CheckedFn;

/// Compares reverse-mode gradients of `fn(inputs)` with central finite
/// differences. Unless `in_place` is set, `inputs` are copied and the
/// originals are not modified.
GradCheckResult gradcheck(const CheckedFn& fn, std::span<const Tensor> inputs, GradCheckOptions options = {});

}  // namespace scan
