#pragma once

#include <span>

#include "scan/tensor.hpp"

// Convolution kernels. The default namespace holds the OpenMP im2col/GEMM
// path used by the ops; `reference` holds direct serial loops kept for tests
// and benchmarks. Every parallel loop writes disjoint outputs and keeps a fixed
// reduction order, so results do not depend on the thread count.
namespace scan::kernels {

struct ConvGeometry {
  int batch = 0;
  int in_c = 0;
  int in_h = 0;
  int in_w = 0;
  int out_c = 0;
  int k_h = 0;
  int k_w = 0;
  int stride = 1;
  int pad = 0;
  int out_h = 0;
  int out_w = 0;

  /// Validates channel agreement and positive output size; throws ShapeError.
  static ConvGeometry make(const Shape& input, const Shape& weight, int stride, int pad);
  Shape input_shape() const { return {batch, in_c, in_h, in_w}; }
  Shape weight_shape() const { return {out_c, in_c, k_h, k_w}; }
  Shape output_shape() const { return {batch, out_c, out_h, out_w}; }
};

/// c[m x n] (+)= a[m x k] * b[k x n], all row-major.
void gemm(int m, int n, int k, std::span<const real> a, std::span<const real> b, std::span<real> c,
          bool accumulate);

/// `bias` may be empty.
void conv2d_forward(const ConvGeometry& g, std::span<const real> input, std::span<const real> weight,
                    std::span<const real> bias, std::span<real> output);
/// Overwrites `grad_input`.
void conv2d_backward_input(const ConvGeometry& g, std::span<const real> grad_output,
                           std::span<const real> weight, std::span<real> grad_input);
/// Overwrites `grad_weight` with the sum over the batch.
void conv2d_backward_weight(const ConvGeometry& g, std::span<const real> input,
                            std::span<const real> grad_output, std::span<real> grad_weight);

/// Number of threads used by the parallel kernels (1 without OpenMP).
int num_threads();
void set_num_threads(int n);

namespace reference {

void conv2d_forward(const ConvGeometry& g, std::span<const real> input, std::span<const real> weight,
                    std::span<const real> bias, std::span<real> output);
void conv2d_backward_input(const ConvGeometry& g, std::span<const real> grad_output,
                           std::span<const real> weight, std::span<real> grad_input);
void conv2d_backward_weight(const ConvGeometry& g, std::span<const real> input,
                            std::span<const real> grad_output, std::span<real> grad_weight);

}  // namespace reference
}  // namespace scan::kernels
