#include <algorithm>
#include <array>
#include <cstdint>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "scan/error.hpp"
#include "scan/kernels.hpp"

namespace scan::kernels {

namespace {

constexpr int kRowBlock = 4;
constexpr int kColBlock = 256;
// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::int64_t kParallelWork = 1 << 16;

void gemm_rows(int i0, int rows, int n, int k, const real* a, const real* b, real* c) {
  for (int j0 = 0; j0 < n; j0 += kColBlock) {
    const int jn = std::min(kColBlock, n - j0);
    if (rows == kRowBlock) {
      real* c0 = c + static_cast<std::int64_t>(i0) * n + j0;
      real* c1 = c0 + n;
      real* c2 = c1 + n;
      real* c3 = c2 + n;
      const real* a0 = a + static_cast<std::int64_t>(i0) * k;
      const real* a1 = a0 + k;
      const real* a2 = a1 + k;
      const real* a3 = a2 + k;
      for (int p = 0; p < k; ++p) {
        const real* bp = b + static_cast<std::int64_t>(p) * n + j0;
        const real v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
        for (int j = 0; j < jn; ++j) {
          const real bv = bp[j];
          c0[j] += v0 * bv;
          c1[j] += v1 * bv;
          c2[j] += v2 * bv;
          c3[j] += v3 * bv;
        }
      }
    } else {
      for (int r = 0; r < rows; ++r) {
        real* ci = c + static_cast<std::int64_t>(i0 + r) * n + j0;
        const real* ai = a + static_cast<std::int64_t>(i0 + r) * k;
        for (int p = 0; p < k; ++p) {
          const real* bp = b + static_cast<std::int64_t>(p) * n + j0;
          const real v = ai[p];
          for (int j = 0; j < jn; ++j) ci[j] += v * bp[j];
        }
      }
    }
  }
}

void transpose(const real* src, int rows, int cols, real* dst) {
  constexpr int kTile = 32;
  const int row_tiles = (rows + kTile - 1) / kTile;
#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(rows) * cols > kParallelWork)
  for (int t = 0; t < row_tiles; ++t) {
    const int r0 = t * kTile;
    const int r1 = std::min(rows, r0 + kTile);
    for (int c0 = 0; c0 < cols; c0 += kTile) {
      const int c1 = std::min(cols, c0 + kTile);
      for (int r = r0; r < r1; ++r) {
        for (int col = c0; col < c1; ++col) {
          dst[static_cast<std::int64_t>(col) * rows + r] = src[static_cast<std::int64_t>(r) * cols + col];
        }
      }
    }
  }
}

// Per-thread scratch reused across calls; fresh multi-megabyte vectors cost a
// page fault per 4 KiB on every convolution. Callers overwrite what they read.
std::span<real> scratch(int slot, std::size_t n) {
  thread_local std::array<std::vector<real>, 2> buffers;
  std::vector<real>& b = buffers[static_cast<std::size_t>(slot)];
  if (b.size() < n) b.resize(n);
  return {b.data(), n};
}

// col[(ic*kh + ky)*kw + kx][oy*ow + ox] = padded input sample.
void im2col(const ConvGeometry& g, const real* in, real* col) {
  const int plane = g.out_h * g.out_w;
  const int rows = g.in_c * g.k_h * g.k_w;
#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(rows) * plane > kParallelWork)
  for (int row = 0; row < rows; ++row) {
    const int kx = row % g.k_w;
    const int ky = (row / g.k_w) % g.k_h;
    const int ic = row / (g.k_w * g.k_h);
    const real* src = in + static_cast<std::int64_t>(ic) * g.in_h * g.in_w;
    real* dst = col + static_cast<std::int64_t>(row) * plane;
    for (int oy = 0; oy < g.out_h; ++oy) {
      const int iy = oy * g.stride - g.pad + ky;
      real* drow = dst + oy * g.out_w;
      if (iy < 0 || iy >= g.in_h) {
        std::fill(drow, drow + g.out_w, 0.0f);
        continue;
      }
      const real* srow = src + static_cast<std::int64_t>(iy) * g.in_w;
      for (int ox = 0; ox < g.out_w; ++ox) {
        const int ix = ox * g.stride - g.pad + kx;
        drow[ox] = (ix >= 0 && ix < g.in_w) ? srow[ix] : 0.0f;
      }
    }
  }
}

// Scatter-add of col back into the image; each input channel is owned by one
// iteration and its taps are visited in a fixed order.
void col2im(const ConvGeometry& g, const real* col, real* in) {
  const int plane = g.out_h * g.out_w;
  const int taps = g.k_h * g.k_w;
#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(g.in_c) * taps * plane > kParallelWork)
  for (int ic = 0; ic < g.in_c; ++ic) {
    real* dst = in + static_cast<std::int64_t>(ic) * g.in_h * g.in_w;
    std::fill(dst, dst + static_cast<std::int64_t>(g.in_h) * g.in_w, 0.0f);
    for (int t = 0; t < taps; ++t) {
      const int ky = t / g.k_w;
      const int kx = t % g.k_w;
      const real* src = col + (static_cast<std::int64_t>(ic) * taps + t) * plane;
      for (int oy = 0; oy < g.out_h; ++oy) {
        const int iy = oy * g.stride - g.pad + ky;
        if (iy < 0 || iy >= g.in_h) continue;
        real* drow = dst + static_cast<std::int64_t>(iy) * g.in_w;
        const real* srow = src + oy * g.out_w;
        for (int ox = 0; ox < g.out_w; ++ox) {
          const int ix = ox * g.stride - g.pad + kx;
          if (ix >= 0 && ix < g.in_w) drow[ix] += srow[ox];
        }
      }
    }
  }
}

}  // namespace

ConvGeometry ConvGeometry::make(const Shape& input, const Shape& weight, int stride, int pad) {
  if (stride < 1 || pad < 0) {
    throw ShapeError("conv2d needs stride >= 1 and pad >= 0");
  }
  if (input.c != weight.c) {
    throw ShapeError("conv2d input " + input.str() + " has " + std::to_string(input.c) +
                     " channels but weight " + weight.str() + " expects " + std::to_string(weight.c));
  }
  ConvGeometry g;
  g.batch = input.n;
  g.in_c = input.c;
  g.in_h = input.h;
  g.in_w = input.w;
  g.out_c = weight.n;
  g.k_h = weight.h;
  g.k_w = weight.w;
  g.stride = stride;
  g.pad = pad;
  const int span_h = input.h + 2 * pad - weight.h;
  const int span_w = input.w + 2 * pad - weight.w;
  if (span_h < 0 || span_w < 0) {
    throw ShapeError("conv2d output would be empty for input " + input.str() + " and kernel " +
                     weight.str());
  }
  g.out_h = span_h / stride + 1;
  g.out_w = span_w / stride + 1;
  return g;
}

void gemm(int m, int n, int k, std::span<const real> a, std::span<const real> b, std::span<real> c,
          bool accumulate) {
  if (!accumulate) std::fill(c.begin(), c.begin() + static_cast<std::int64_t>(m) * n, 0.0f);
  const int blocks = (m + kRowBlock - 1) / kRowBlock;
  const std::int64_t work = static_cast<std::int64_t>(m) * n * k;
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (int blk = 0; blk < blocks; ++blk) {
    const int i0 = blk * kRowBlock;
    gemm_rows(i0, std::min(kRowBlock, m - i0), n, k, a.data(), b.data(), c.data());
  }
}

void conv2d_forward(const ConvGeometry& g, std::span<const real> input, std::span<const real> weight,
                    std::span<const real> bias, std::span<real> output) {
  const int plane = g.out_h * g.out_w;
  const int depth = g.in_c * g.k_h * g.k_w;
  const std::span<real> col = scratch(0, static_cast<std::size_t>(depth) * plane);
  const std::int64_t in_stride = static_cast<std::int64_t>(g.in_c) * g.in_h * g.in_w;
  const std::int64_t out_stride = static_cast<std::int64_t>(g.out_c) * plane;
  for (int n = 0; n < g.batch; ++n) {
    im2col(g, input.data() + n * in_stride, col.data());
    std::span<real> out = output.subspan(n * out_stride, out_stride);
    gemm(g.out_c, plane, depth, weight, col, out, false);
    if (!bias.empty()) {
      for (int oc = 0; oc < g.out_c; ++oc) {
        const real b = bias[oc];
        for (int p = 0; p < plane; ++p) out[static_cast<std::size_t>(oc) * plane + p] += b;
      }
    }
  }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const real> grad_output,
                           std::span<const real> weight, std::span<real> grad_input) {
  const int plane = g.out_h * g.out_w;
  const int depth = g.in_c * g.k_h * g.k_w;
  std::vector<real> weight_t(static_cast<std::size_t>(depth) * g.out_c);
  transpose(weight.data(), g.out_c, depth, weight_t.data());
  const std::span<real> col = scratch(0, static_cast<std::size_t>(depth) * plane);
  const std::int64_t in_stride = static_cast<std::int64_t>(g.in_c) * g.in_h * g.in_w;
  const std::int64_t out_stride = static_cast<std::int64_t>(g.out_c) * plane;
  for (int n = 0; n < g.batch; ++n) {
    gemm(depth, plane, g.out_c, weight_t, grad_output.subspan(n * out_stride, out_stride), col, false);
    col2im(g, col.data(), grad_input.data() + n * in_stride);
  }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const real> input,
                            std::span<const real> grad_output, std::span<real> grad_weight) {
  const int plane = g.out_h * g.out_w;
  const int depth = g.in_c * g.k_h * g.k_w;
  const std::span<real> col = scratch(0, static_cast<std::size_t>(depth) * plane);
  const std::span<real> col_t = scratch(1, col.size());
  const std::int64_t in_stride = static_cast<std::int64_t>(g.in_c) * g.in_h * g.in_w;
  const std::int64_t out_stride = static_cast<std::int64_t>(g.out_c) * plane;
  for (int n = 0; n < g.batch; ++n) {
    im2col(g, input.data() + n * in_stride, col.data());
    transpose(col.data(), depth, plane, col_t.data());
    gemm(g.out_c, depth, plane, grad_output.subspan(n * out_stride, out_stride), col_t, grad_weight,
         n > 0);
  }
}

int num_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_num_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(std::max(1, n));
#else
  (void)n;
#endif
}

}  // namespace scan::kernels
