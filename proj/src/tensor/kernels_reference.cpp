#include <algorithm>
#include <cstdint>

#include "scan/kernels.hpp"

// Direct-loop convolution: one output element (or one gradient element) at a
// time, serial. Slow, simple, and independent of the im2col path.
namespace scan::kernels::reference {

namespace {

inline std::int64_t in_index(const ConvGeometry& g, int n, int c, int y, int x) {
  return ((static_cast<std::int64_t>(n) * g.in_c + c) * g.in_h + y) * g.in_w + x;
}
inline std::int64_t out_index(const ConvGeometry& g, int n, int c, int y, int x) {
  return ((static_cast<std::int64_t>(n) * g.out_c + c) * g.out_h + y) * g.out_w + x;
}
inline std::int64_t w_index(const ConvGeometry& g, int oc, int ic, int ky, int kx) {
  return ((static_cast<std::int64_t>(oc) * g.in_c + ic) * g.k_h + ky) * g.k_w + kx;
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const real> input, std::span<const real> weight,
                    std::span<const real> bias, std::span<real> output) {
  for (int n = 0; n < g.batch; ++n)
    for (int oc = 0; oc < g.out_c; ++oc)
      for (int oy = 0; oy < g.out_h; ++oy)
        for (int ox = 0; ox < g.out_w; ++ox) {
          real acc = bias.empty() ? 0.0f : bias[oc];
          for (int ic = 0; ic < g.in_c; ++ic)
            for (int ky = 0; ky < g.k_h; ++ky) {
              const int iy = oy * g.stride - g.pad + ky;
              if (iy < 0 || iy >= g.in_h) continue;
              for (int kx = 0; kx < g.k_w; ++kx) {
                const int ix = ox * g.stride - g.pad + kx;
                if (ix < 0 || ix >= g.in_w) continue;
                acc += input[in_index(g, n, ic, iy, ix)] * weight[w_index(g, oc, ic, ky, kx)];
              }
            }
          output[out_index(g, n, oc, oy, ox)] = acc;
        }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const real> grad_output,
                           std::span<const real> weight, std::span<real> grad_input) {
  std::fill(grad_input.begin(), grad_input.end(), 0.0f);
  for (int n = 0; n < g.batch; ++n)
    for (int oc = 0; oc < g.out_c; ++oc)
      for (int oy = 0; oy < g.out_h; ++oy)
        for (int ox = 0; ox < g.out_w; ++ox) {
          const real go = grad_output[out_index(g, n, oc, oy, ox)];
          for (int ic = 0; ic < g.in_c; ++ic)
            for (int ky = 0; ky < g.k_h; ++ky) {
              const int iy = oy * g.stride - g.pad + ky;
              if (iy < 0 || iy >= g.in_h) continue;
              for (int kx = 0; kx < g.k_w; ++kx) {
                const int ix = ox * g.stride - g.pad + kx;
                if (ix < 0 || ix >= g.in_w) continue;
                grad_input[in_index(g, n, ic, iy, ix)] += go * weight[w_index(g, oc, ic, ky, kx)];
              }
            }
        }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const real> input,
                            std::span<const real> grad_output, std::span<real> grad_weight) {
  std::fill(grad_weight.begin(), grad_weight.end(), 0.0f);
  for (int n = 0; n < g.batch; ++n)
    for (int oc = 0; oc < g.out_c; ++oc)
      for (int oy = 0; oy < g.out_h; ++oy)
        for (int ox = 0; ox < g.out_w; ++ox) {
          const real go = grad_output[out_index(g, n, oc, oy, ox)];
          for (int ic = 0; ic < g.in_c; ++ic)
            for (int ky = 0; ky < g.k_h; ++ky) {
              const int iy = oy * g.stride - g.pad + ky;
              if (iy < 0 || iy >= g.in_h) continue;
              for (int kx = 0; kx < g.k_w; ++kx) {
                const int ix = ox * g.stride - g.pad + kx;
                if (ix < 0 || ix >= g.in_w) continue;
                grad_weight[w_index(g, oc, ic, ky, kx)] += go * input[in_index(g, n, ic, iy, ix)];
              }
            }
        }
}

}  // namespace scan::kernels::reference
