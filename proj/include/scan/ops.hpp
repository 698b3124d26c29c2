#pragma once

#include <cstdint>
#include <vector>

#include <span>
#include <vector>

#include "scan/tensor.hpp"

// Differentiable tensor operators. Every op records itself on the active tape
// when an input requires a gradient, and every backward rule is written in
// terms of these same ops, so gradients can be differentiated again.
namespace scan {

// --- elementwise arithmetic (broadcasting over size-1 dims) -----------------

Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor add_scalar(const Tensor& x, real s);
Tensor mul_scalar(const Tensor& x, real s);
/// 1 - x
Tensor one_minus(const Tensor& x);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor rsqrt(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
Tensor clamp(const Tensor& x, real lo, real hi);

enum class Activation { relu, leaky_relu, sigmoid, tanh };

/// Sigmoid and tanh results are kept strictly inside their open ranges.
Tensor pointwise(const Tensor& x, Activation kind, real leaky_slope = 0.2f);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, real slope = 0.2f);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

// --- reductions and broadcasting ---------------------------------------------

/// Sums over every dim where `target` is 1 and `x` is not.
Tensor sum_to(const Tensor& x, const Shape& target);
Tensor expand(const Tensor& x, const Shape& target);
/// Single-element sum / mean.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Per (n, c) mean over the spatial plane; shape (N, C, 1, 1).
Tensor mean_spatial(const Tensor& x);

// --- layers --------------------------------------------------------------------

/// weight (outC, inC, kh, kw); bias (1, outC, 1, 1) or undefined.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int pad);
/// Gradient of conv2d w.r.t. its input, as a differentiable op.
Tensor conv2d_input_grad(const Tensor& grad_output, const Tensor& weight, const Shape& input_shape,
                         int stride, int pad);
/// Gradient of conv2d w.r.t. its weight, as a differentiable op.
Tensor conv2d_weight_grad(const Tensor& input, const Tensor& grad_output, const Shape& weight_shape,
                          int stride, int pad);

/// gamma * (x - mean) / sqrt(var + eps) + beta per (n, c) slice, population
/// variance. gamma/beta have shape (1, C, 1, 1).
Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps = 1e-5f);

/// out[n, c, h*r+i, w*r+j] = in[n, c*r*r + i*r + j, h, w]
Tensor pixel_shuffle(const Tensor& x, int r);
Tensor pixel_unshuffle(const Tensor& x, int r);

enum class Resample { nearest_up_2x, area_down_2x };
Tensor resample(const Tensor& x, Resample mode);
Tensor upsample_nearest2x(const Tensor& x);
Tensor downsample_area2x(const Tensor& x);

Tensor concat_channels(std::span<const Tensor> parts);
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& x, int start, int count);
/// Inverse of slice_channels: embeds x at channel `start` of a zero tensor
/// with `total` channels.
Tensor pad_channels(const Tensor& x, int total, int start);

/// a*(1-alpha) + b*alpha with alpha broadcast over channels (and batch/space
/// when alpha is (1,1,1,1)). Evaluated with std::lerp, so each result lies
/// between a and b and alpha == 0 returns a exactly.
Tensor lerp(const Tensor& a, const Tensor& b, const Tensor& alpha);

/// Mean of |a - b| over all elements.
Tensor l1_mean(const Tensor& a, const Tensor& b);

/// Branch taken by each element of every non-smooth elementwise op call
/// (relu, leaky_relu, abs, clamp), in call order.
struct BranchLog {
  std::vector<std::vector<std::uint8_t>> calls;
  std::size_t cursor = 0;
  /// Replayed elements whose own branch differed from the recorded one.
  std::size_t flips = 0;
};

enum class BranchMode { record, replay };

/// While alive, non-smooth ops on this thread append their branch choices to
/// `log`, or (replay) take them from it and extend the recorded branch
/// linearly. A replayed evaluation therefore stays on the smooth piece that
/// was active when the log was recorded.
class BranchScope {
 public:
  BranchScope(BranchLog& log, BranchMode mode);
  ~BranchScope();
  BranchScope(const BranchScope&) = delete;
  BranchScope& operator=(const BranchScope&) = delete;

 private:
  BranchLog* previous_log_;
  BranchMode previous_mode_;
};

}  // namespace scan
