#include "scan/ops.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>

#include "scan/error.hpp"
#include "scan/kernels.hpp"

namespace scan {

namespace {

Tape* recording_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = active_tape();
  if (tape == nullptr) return nullptr;
  for (const Tensor* in : inputs) {
    if (in->requires_grad()) return tape;
  }
  return nullptr;
}

void check_finite(const Tensor& out, const char* op) {
  for (real v : out.data()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
}

struct Strides {
  std::int64_t n, c, h, w;
};

// Strides of `s` when iterated over a broadcast target; size-1 dims stride 0.
Strides broadcast_strides(const Shape& s) {
  return {s.n == 1 ? 0 : static_cast<std::int64_t>(s.c) * s.h * s.w,
          s.c == 1 ? 0 : static_cast<std::int64_t>(s.h) * s.w, s.h == 1 ? 0 : s.w, s.w == 1 ? 0 : 1};
}

template <class F>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, F f) {
  const Shape s = broadcast_shape(a.shape(), b.shape());
  Tensor out(s);
  auto o = out.data_mut();
  const auto da = a.data();
  const auto db = b.data();
  if (a.shape() == s && b.shape() == s) {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(da[i], db[i]);
    return out;
  }
  const Strides sa = broadcast_strides(a.shape());
  const Strides sb = broadcast_strides(b.shape());
  std::size_t i = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int h = 0; h < s.h; ++h) {
        const std::int64_t ba = n * sa.n + c * sa.c + h * sa.h;
        const std::int64_t bb = n * sb.n + c * sb.c + h * sb.h;
        for (int w = 0; w < s.w; ++w, ++i) o[i] = f(da[ba + w * sa.w], db[bb + w * sb.w]);
      }
  return out;
}

template <class F>
Tensor map_unary(const Tensor& x, F f) {
  Tensor out(x.shape());
  auto o = out.data_mut();
  const auto d = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(d[i]);
  return out;
}

thread_local BranchLog* t_branch_log = nullptr;
thread_local BranchMode t_branch_mode = BranchMode::record;

// Elementwise op that is smooth within each branch: `classify` picks the
// branch, `apply` evaluates it (and its linear extension under replay) and
// `slope` gives its derivative. The slope mask is filled from the branch codes
// actually used, so under replay the backward pass stays on the same piece.
template <class Classify, class Apply, class Slope>
Tensor piecewise(const Tensor& x, Classify classify, Apply apply, Slope slope, Tensor* slope_mask) {
  Tensor out(x.shape());
  auto o = out.data_mut();
  const auto d = x.data();
  std::span<real> m;
  if (slope_mask != nullptr) {
    *slope_mask = Tensor(x.shape());
    m = slope_mask->data_mut();
  }
  auto emit = [&](std::size_t i, std::uint8_t code) {
    o[i] = apply(d[i], code);
    if (!m.empty()) m[i] = slope(d[i], code);
  };
  BranchLog* log = t_branch_log;
  if (log == nullptr) {
    for (std::size_t i = 0; i < o.size(); ++i) emit(i, classify(d[i]));
  } else if (t_branch_mode == BranchMode::record) {
    auto& codes = log->calls.emplace_back(d.size());
    for (std::size_t i = 0; i < o.size(); ++i) {
      codes[i] = classify(d[i]);
      emit(i, codes[i]);
    }
  } else {
    if (log->cursor >= log->calls.size() || log->calls[log->cursor].size() != d.size()) {
      throw UsageError("branch replay does not follow the recorded evaluation");
    }
    const auto& codes = log->calls[log->cursor++];
    for (std::size_t i = 0; i < o.size(); ++i) {
      if (codes[i] != classify(d[i])) ++log->flips;
      emit(i, codes[i]);
    }
  }
  return out;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
  }
}

constexpr real kOpenUpper = 0.99999994f;  // largest real below 1
constexpr real kOpenLower = std::numeric_limits<real>::min();

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  auto dim = [&](int x, int y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw ShapeError("cannot broadcast " + a.str() + " with " + b.str());
  };
  return {dim(a.n, b.n), dim(a.c, b.c), dim(a.h, b.h), dim(a.w, b.w)};
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = broadcast_binary(a, b, [](real x, real y) { return x + y; });
  check_finite(out, "add");
  if (Tape* tape = recording_tape({&a, &b})) {
    tape->record("add", {a, b}, out, [a, b](const Tensor& g) {
      return std::vector<Tensor>{a.requires_grad() ? sum_to(g, a.shape()) : Tensor{},
                                 b.requires_grad() ? sum_to(g, b.shape()) : Tensor{}};
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Tensor out = broadcast_binary(a, b, [](real x, real y) { return x - y; });
  check_finite(out, "sub");
  if (Tape* tape = recording_tape({&a, &b})) {
    tape->record("sub", {a, b}, out, [a, b](const Tensor& g) {
      return std::vector<Tensor>{a.requires_grad() ? sum_to(g, a.shape()) : Tensor{},
                                 b.requires_grad() ? sum_to(neg(g), b.shape()) : Tensor{}};
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Tensor out = broadcast_binary(a, b, [](real x, real y) { return x * y; });
  check_finite(out, "mul");
  if (Tape* tape = recording_tape({&a, &b})) {
    tape->record("mul", {a, b}, out, [a, b](const Tensor& g) {
      return std::vector<Tensor>{a.requires_grad() ? sum_to(mul(g, b), a.shape()) : Tensor{},
                                 b.requires_grad() ? sum_to(mul(g, a), b.shape()) : Tensor{}};
    });
  }
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  Tensor out = broadcast_binary(a, b, [](real x, real y) { return x / y; });
  check_finite(out, "div");
  if (Tape* tape = recording_tape({&a, &b})) {
    tape->record("div", {a, b}, out, [a, b, out](const Tensor& g) {
      return std::vector<Tensor>{
          a.requires_grad() ? sum_to(div(g, b), a.shape()) : Tensor{},
          b.requires_grad() ? sum_to(neg(mul(g, div(out, b))), b.shape()) : Tensor{}};
    });
  }
  return out;
}

Tensor neg(const Tensor& x) {
  Tensor out = map_unary(x, [](real v) { return -v; });
  if (Tape* tape = recording_tape({&x})) {
    tape->record("neg", {x}, out, [](const Tensor& g) { return std::vector<Tensor>{neg(g)}; });
  }
  return out;
}

Tensor add_scalar(const Tensor& x, real s) {
  Tensor out = map_unary(x, [s](real v) { return v + s; });
  check_finite(out, "add_scalar");
  if (Tape* tape = recording_tape({&x})) {
    tape->record("add_scalar", {x}, out, [](const Tensor& g) { return std::vector<Tensor>{g}; });
  }
  return out;
}

Tensor mul_scalar(const Tensor& x, real s) {
  Tensor out = map_unary(x, [s](real v) { return v * s; });
  check_finite(out, "mul_scalar");
  if (Tape* tape = recording_tape({&x})) {
    tape->record("mul_scalar", {x}, out,
                 [s](const Tensor& g) { return std::vector<Tensor>{mul_scalar(g, s)}; });
  }
  return out;
}

Tensor one_minus(const Tensor& x) {
  Tensor out = map_unary(x, [](real v) { return 1.0f - v; });
  if (Tape* tape = recording_tape({&x})) {
    tape->record("one_minus", {x}, out, [](const Tensor& g) { return std::vector<Tensor>{neg(g)}; });
  }
  return out;
}

Tensor exp(const Tensor& x) {
  Tensor out = map_unary(x, [](real v) { return std::exp(v); });
  check_finite(out, "exp");
  if (Tape* tape = recording_tape({&x})) {
    tape->record("exp", {x}, out, [out](const Tensor& g) { return std::vector<Tensor>{mul(g, out)}; });
  }
  return out;
}

Tensor log(const Tensor& x) {
  Tensor out = map_unary(x, [](real v) { return std::log(v); });
  check_finite(out, "log");
  if (Tape* tape = recording_tape({&x})) {
    tape->record("log", {x}, out, [x](const Tensor& g) { return std::vector<Tensor>{div(g, x)}; });
  }
  return out;
}

Tensor sqrt(const Tensor& x) {
  Tensor out = map_unary(x, [](real v) { return std::sqrt(v); });
  check_finite(out, "sqrt");
  if (Tape* tape = recording_tape({&x})) {
    tape->record("sqrt", {x}, out, [out](const Tensor& g) {
      return std::vector<Tensor>{mul_scalar(div(g, out), 0.5f)};
    });
  }
  return out;
}

Tensor rsqrt(const Tensor& x) {
  Tensor out = map_unary(x, [](real v) { return 1.0f / std::sqrt(v); });
  check_finite(out, "rsqrt");
  if (Tape* tape = recording_tape({&x})) {
    tape->record("rsqrt", {x}, out, [out](const Tensor& g) {
      return std::vector<Tensor>{mul(g, mul_scalar(mul(out, square(out)), -0.5f))};
    });
  }
  return out;
}

Tensor abs(const Tensor& x) {
  Tape* tape = recording_tape({&x});
  Tensor sign;
  // Subgradient 0 at exactly 0.
  Tensor out = piecewise(
      x, [](real v) -> std::uint8_t { return v < 0.0f ? 0 : 1; }, [](real v, std::uint8_t b) { return b ? v : -v; },
      [](real v, std::uint8_t b) { return v == 0.0f ? 0.0f : (b ? 1.0f : -1.0f); }, tape ? &sign : nullptr);
  if (tape) {
    tape->record("abs", {x}, out, [sign](const Tensor& g) { return std::vector<Tensor>{mul(g, sign)}; });
  }
  return out;
}

Tensor square(const Tensor& x) {
  Tensor out = map_unary(x, [](real v) { return v * v; });
  check_finite(out, "square");
  if (Tape* tape = recording_tape({&x})) {
    tape->record("square", {x}, out, [x](const Tensor& g) {
      return std::vector<Tensor>{mul(g, mul_scalar(x, 2.0f))};
    });
  }
  return out;
}

Tensor clamp(const Tensor& x, real lo, real hi) {
  Tape* tape = recording_tape({&x});
  Tensor inside;
  Tensor out = piecewise(
      x, [lo, hi](real v) -> std::uint8_t { return v < lo ? 0 : (v > hi ? 2 : 1); },
      [lo, hi](real v, std::uint8_t b) { return b == 0 ? lo : (b == 2 ? hi : v); },
      [](real, std::uint8_t b) { return b == 1 ? 1.0f : 0.0f; }, tape ? &inside : nullptr);
  if (tape) {
    tape->record("clamp", {x}, out, [inside](const Tensor& g) { return std::vector<Tensor>{mul(g, inside)}; });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tape* tape = recording_tape({&x});
  Tensor active;
  Tensor out = piecewise(
      x, [](real v) -> std::uint8_t { return v > 0.0f ? 1 : 0; }, [](real v, std::uint8_t b) { return b ? v : 0.0f; },
      [](real, std::uint8_t b) { return b ? 1.0f : 0.0f; }, tape ? &active : nullptr);
  if (tape) {
    tape->record("relu", {x}, out, [active](const Tensor& g) { return std::vector<Tensor>{mul(g, active)}; });
  }
  return out;
}

Tensor leaky_relu(const Tensor& x, real slope) {
  Tape* tape = recording_tape({&x});
  Tensor mask;
  Tensor out = piecewise(
      x, [](real v) -> std::uint8_t { return v > 0.0f ? 1 : 0; },
      [slope](real v, std::uint8_t b) { return b ? v : slope * v; },
      [slope](real, std::uint8_t b) { return b ? 1.0f : slope; }, tape ? &mask : nullptr);
  if (tape) {
    tape->record("leaky_relu", {x}, out, [mask](const Tensor& g) { return std::vector<Tensor>{mul(g, mask)}; });
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = map_unary(x, [](real v) {
    real s;
    if (v >= 0.0f) {
      s = 1.0f / (1.0f + std::exp(-v));
    } else {
      const real e = std::exp(v);
      s = e / (1.0f + e);
    }
    return std::clamp(s, kOpenLower, kOpenUpper);
  });
  if (Tape* tape = recording_tape({&x})) {
    tape->record("sigmoid", {x}, out, [out](const Tensor& g) {
      return std::vector<Tensor>{mul(g, mul(out, one_minus(out)))};
    });
  }
  return out;
}

Tensor tanh(const Tensor& x) {
  Tensor out = map_unary(x, [](real v) { return std::clamp(std::tanh(v), -kOpenUpper, kOpenUpper); });
  if (Tape* tape = recording_tape({&x})) {
    tape->record("tanh", {x}, out, [out](const Tensor& g) {
      return std::vector<Tensor>{mul(g, one_minus(square(out)))};
    });
  }
  return out;
}

Tensor pointwise(const Tensor& x, Activation kind, real leaky_slope) {
  switch (kind) {
    case Activation::relu:
      return relu(x);
    case Activation::leaky_relu:
      return leaky_relu(x, leaky_slope);
    case Activation::sigmoid:
      return sigmoid(x);
    case Activation::tanh:
      return tanh(x);
  }
  throw UsageError("unknown activation");
}

Tensor sum_to(const Tensor& x, const Shape& target) {
  const Shape& s = x.shape();
  if (s == target) return x;
  if (broadcast_shape(target, s) != s) {
    throw ShapeError("sum_to: cannot reduce " + s.str() + " to " + target.str());
  }
  auto check = [&](int from, int to) {
    if (to != from && to != 1) throw ShapeError("sum_to: cannot reduce " + s.str() + " to " + target.str());
  };
  check(s.n, target.n);
  check(s.c, target.c);
  check(s.h, target.h);
  check(s.w, target.w);
  // Fixed row-major order with a double accumulator, rounded once per output.
  std::vector<double> acc(static_cast<std::size_t>(target.numel()), 0.0);
  const auto d = x.data();
  const Strides st = broadcast_strides(target);
  std::size_t i = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int h = 0; h < s.h; ++h) {
        const std::int64_t base = n * st.n + c * st.c + h * st.h;
        for (int w = 0; w < s.w; ++w, ++i) acc[base + w * st.w] += d[i];
      }
  Tensor out(target);
  std::transform(acc.begin(), acc.end(), out.data_mut().begin(), [](double v) { return static_cast<real>(v); });
  check_finite(out, "sum_to");
  if (Tape* tape = recording_tape({&x})) {
    tape->record("sum_to", {x}, out, [s](const Tensor& g) { return std::vector<Tensor>{expand(g, s)}; });
  }
  return out;
}

Tensor expand(const Tensor& x, const Shape& target) {
  const Shape& s = x.shape();
  if (s == target) return x;
  if (broadcast_shape(s, target) != target) {
    throw ShapeError("expand: cannot expand " + s.str() + " to " + target.str());
  }
  Tensor out(target);
  auto o = out.data_mut();
  const auto d = x.data();
  const Strides st = broadcast_strides(s);
  std::size_t i = 0;
  for (int n = 0; n < target.n; ++n)
    for (int c = 0; c < target.c; ++c)
      for (int h = 0; h < target.h; ++h) {
        const std::int64_t base = n * st.n + c * st.c + h * st.h;
        for (int w = 0; w < target.w; ++w, ++i) o[i] = d[base + w * st.w];
      }
  if (Tape* tape = recording_tape({&x})) {
    tape->record("expand", {x}, out, [s](const Tensor& g) { return std::vector<Tensor>{sum_to(g, s)}; });
  }
  return out;
}

Tensor sum(const Tensor& x) { return sum_to(x, Shape{1, 1, 1, 1}); }

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean of an empty tensor");
  return mul_scalar(sum(x), 1.0f / static_cast<real>(x.numel()));
}

Tensor mean_spatial(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.plane() == 0) throw ShapeError("mean_spatial over zero spatial elements " + s.str());
  return mul_scalar(sum_to(x, Shape{s.n, s.c, 1, 1}), 1.0f / static_cast<real>(s.plane()));
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int pad) {
  const auto geo = kernels::ConvGeometry::make(input.shape(), weight.shape(), stride, pad);
  if (bias.defined() && bias.shape() != Shape{1, geo.out_c, 1, 1}) {
    throw ShapeError("conv2d bias " + bias.shape().str() + " does not match " +
                     std::to_string(geo.out_c) + " output channels");
  }
  Tensor out(geo.output_shape());
  kernels::conv2d_forward(geo, input.data(), weight.data(),
                          bias.defined() ? bias.data() : std::span<const real>{}, out.data_mut());
  check_finite(out, "conv2d");
  if (Tape* tape = recording_tape({&input, &weight, &bias})) {
    tape->record("conv2d", {input, weight, bias}, out, [input, weight, bias, stride, pad](const Tensor& g) {
      return std::vector<Tensor>{
          input.requires_grad() ? conv2d_input_grad(g, weight, input.shape(), stride, pad) : Tensor{},
          weight.requires_grad() ? conv2d_weight_grad(input, g, weight.shape(), stride, pad) : Tensor{},
          bias.requires_grad() ? sum_to(g, bias.shape()) : Tensor{}};
    });
  }
  return out;
}

Tensor conv2d_input_grad(const Tensor& grad_output, const Tensor& weight, const Shape& input_shape,
                         int stride, int pad) {
  const auto geo = kernels::ConvGeometry::make(input_shape, weight.shape(), stride, pad);
  if (grad_output.shape() != geo.output_shape()) {
    throw ShapeError("conv2d_input_grad: gradient " + grad_output.shape().str() + " expected " +
                     geo.output_shape().str());
  }
  Tensor out(input_shape);
  kernels::conv2d_backward_input(geo, grad_output.data(), weight.data(), out.data_mut());
  check_finite(out, "conv2d_input_grad");
  if (Tape* tape = recording_tape({&grad_output, &weight})) {
    tape->record("conv2d_input_grad", {grad_output, weight}, out,
                 [grad_output, weight, stride, pad](const Tensor& gg) {
                   return std::vector<Tensor>{
                       grad_output.requires_grad() ? conv2d(gg, weight, Tensor{}, stride, pad) : Tensor{},
                       weight.requires_grad()
                           ? conv2d_weight_grad(gg, grad_output, weight.shape(), stride, pad)
                           : Tensor{}};
                 });
  }
  return out;
}

Tensor conv2d_weight_grad(const Tensor& input, const Tensor& grad_output, const Shape& weight_shape,
                          int stride, int pad) {
  const auto geo = kernels::ConvGeometry::make(input.shape(), weight_shape, stride, pad);
  if (grad_output.shape() != geo.output_shape()) {
    throw ShapeError("conv2d_weight_grad: gradient " + grad_output.shape().str() + " expected " +
                     geo.output_shape().str());
  }
  Tensor out(weight_shape);
  kernels::conv2d_backward_weight(geo, input.data(), grad_output.data(), out.data_mut());
  check_finite(out, "conv2d_weight_grad");
  if (Tape* tape = recording_tape({&input, &grad_output})) {
    tape->record("conv2d_weight_grad", {input, grad_output}, out,
                 [input, grad_output, stride, pad](const Tensor& gw) {
                   return std::vector<Tensor>{
                       input.requires_grad()
                           ? conv2d_input_grad(grad_output, gw, input.shape(), stride, pad)
                           : Tensor{},
                       grad_output.requires_grad() ? conv2d(input, gw, Tensor{}, stride, pad) : Tensor{}};
                 });
  }
  return out;
}

Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps) {
  const Shape& s = x.shape();
  if (s.plane() == 0) throw ShapeError("instance_norm over zero spatial elements " + s.str());
  if (!(eps > 0.0f)) throw UsageError("instance_norm needs eps > 0");
  const Shape affine{1, s.c, 1, 1};
  if (gamma.shape() != affine || beta.shape() != affine) {
    throw ShapeError("instance_norm affine parameters must be " + affine.str());
  }
  const Tensor centered = sub(x, mean_spatial(x));
  const Tensor inv_std = rsqrt(add_scalar(mean_spatial(square(centered)), eps));
  return add(mul(mul(centered, inv_std), gamma), beta);
}

Tensor pixel_shuffle(const Tensor& x, int r) {
  const Shape& s = x.shape();
  if (r < 1 || s.c % (r * r) != 0) {
    throw ShapeError("pixel_shuffle: " + std::to_string(s.c) + " channels not divisible by r^2 = " +
                     std::to_string(r * r));
  }
  const Shape os{s.n, s.c / (r * r), s.h * r, s.w * r};
  Tensor out(os);
  auto o = out.data_mut();
  const auto d = x.data();
  for (int n = 0; n < os.n; ++n)
    for (int c = 0; c < os.c; ++c)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) {
          const int ic = c * r * r + i * r + j;
          for (int h = 0; h < s.h; ++h)
            for (int w = 0; w < s.w; ++w) {
              o[((static_cast<std::int64_t>(n) * os.c + c) * os.h + h * r + i) * os.w + w * r + j] =
                  d[((static_cast<std::int64_t>(n) * s.c + ic) * s.h + h) * s.w + w];
            }
        }
  if (Tape* tape = recording_tape({&x})) {
    tape->record("pixel_shuffle", {x}, out,
                 [r](const Tensor& g) { return std::vector<Tensor>{pixel_unshuffle(g, r)}; });
  }
  return out;
}

Tensor pixel_unshuffle(const Tensor& x, int r) {
  const Shape& s = x.shape();
  if (r < 1 || s.h % r != 0 || s.w % r != 0) {
    throw ShapeError("pixel_unshuffle: spatial size " + s.str() + " not divisible by " + std::to_string(r));
  }
  const Shape os{s.n, s.c * r * r, s.h / r, s.w / r};
  Tensor out(os);
  auto o = out.data_mut();
  const auto d = x.data();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) {
          const int oc = c * r * r + i * r + j;
          for (int h = 0; h < os.h; ++h)
            for (int w = 0; w < os.w; ++w) {
              o[((static_cast<std::int64_t>(n) * os.c + oc) * os.h + h) * os.w + w] =
                  d[((static_cast<std::int64_t>(n) * s.c + c) * s.h + h * r + i) * s.w + w * r + j];
            }
        }
  if (Tape* tape = recording_tape({&x})) {
    tape->record("pixel_unshuffle", {x}, out,
                 [r](const Tensor& g) { return std::vector<Tensor>{pixel_shuffle(g, r)}; });
  }
  return out;
}

Tensor upsample_nearest2x(const Tensor& x) {
  const Shape& s = x.shape();
  const Shape os{s.n, s.c, s.h * 2, s.w * 2};
  Tensor out(os);
  auto o = out.data_mut();
  const auto d = x.data();
  for (std::int64_t p = 0; p < static_cast<std::int64_t>(s.n) * s.c; ++p)
    for (int h = 0; h < os.h; ++h)
      for (int w = 0; w < os.w; ++w) {
        o[(p * os.h + h) * os.w + w] = d[(p * s.h + h / 2) * s.w + w / 2];
      }
  if (Tape* tape = recording_tape({&x})) {
    tape->record("upsample_nearest2x", {x}, out, [](const Tensor& g) {
      return std::vector<Tensor>{mul_scalar(downsample_area2x(g), 4.0f)};
    });
  }
  return out;
}

Tensor downsample_area2x(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw ShapeError("area_down_2x needs even spatial size, got " + s.str());
  }
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  Tensor out(os);
  auto o = out.data_mut();
  const auto d = x.data();
  for (std::int64_t p = 0; p < static_cast<std::int64_t>(s.n) * s.c; ++p)
    for (int h = 0; h < os.h; ++h)
      for (int w = 0; w < os.w; ++w) {
        const std::int64_t top = (p * s.h + 2 * h) * s.w + 2 * w;
        const std::int64_t bottom = top + s.w;
        o[(p * os.h + h) * os.w + w] = 0.25f * ((d[top] + d[top + 1]) + (d[bottom] + d[bottom + 1]));
      }
  if (Tape* tape = recording_tape({&x})) {
    tape->record("downsample_area2x", {x}, out, [](const Tensor& g) {
      return std::vector<Tensor>{mul_scalar(upsample_nearest2x(g), 0.25f)};
    });
  }
  return out;
}

Tensor resample(const Tensor& x, Resample mode) {
  return mode == Resample::nearest_up_2x ? upsample_nearest2x(x) : downsample_area2x(x);
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_channels of nothing");
  const Shape& first = parts.front().shape();
  int channels = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: " + s.str() + " does not match " + first.str());
    }
    channels += s.c;
  }
  const Shape os{first.n, channels, first.h, first.w};
  Tensor out(os);
  auto o = out.data_mut();
  const std::int64_t plane = first.plane();
  int offset = 0;
  for (const auto& p : parts) {
    const auto d = p.data();
    const int pc = p.shape().c;
    for (int n = 0; n < first.n; ++n) {
      std::copy_n(d.begin() + static_cast<std::int64_t>(n) * pc * plane, pc * plane,
                  o.begin() + (static_cast<std::int64_t>(n) * channels + offset) * plane);
    }
    offset += pc;
  }
  Tape* tape = active_tape();
  const bool any = std::any_of(parts.begin(), parts.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (tape != nullptr && any) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    tape->record("concat_channels", inputs, out, [inputs](const Tensor& g) {
      std::vector<Tensor> grads;
      int start = 0;
      for (const auto& in : inputs) {
        const int c = in.shape().c;
        grads.push_back(in.requires_grad() ? slice_channels(g, start, c) : Tensor{});
        start += c;
      }
      return grads;
    });
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const Tensor parts[] = {a, b};
  return concat_channels(std::span<const Tensor>(parts));
}

Tensor slice_channels(const Tensor& x, int start, int count) {
  const Shape& s = x.shape();
  if (start < 0 || count < 0 || start + count > s.c) {
    throw ShapeError("slice_channels [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for " + s.str());
  }
  const Shape os{s.n, count, s.h, s.w};
  Tensor out(os);
  auto o = out.data_mut();
  const auto d = x.data();
  const std::int64_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    std::copy_n(d.begin() + (static_cast<std::int64_t>(n) * s.c + start) * plane, count * plane,
                o.begin() + static_cast<std::int64_t>(n) * count * plane);
  }
  if (Tape* tape = recording_tape({&x})) {
    const int total = s.c;
    tape->record("slice_channels", {x}, out, [total, start](const Tensor& g) {
      return std::vector<Tensor>{pad_channels(g, total, start)};
    });
  }
  return out;
}

Tensor pad_channels(const Tensor& x, int total, int start) {
  const Shape& s = x.shape();
  if (start < 0 || start + s.c > total) {
    throw ShapeError("pad_channels: " + s.str() + " does not fit at channel " + std::to_string(start) +
                     " of " + std::to_string(total));
  }
  const Shape os{s.n, total, s.h, s.w};
  Tensor out(os);
  auto o = out.data_mut();
  const auto d = x.data();
  const std::int64_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    std::copy_n(d.begin() + static_cast<std::int64_t>(n) * s.c * plane, s.c * plane,
                o.begin() + (static_cast<std::int64_t>(n) * total + start) * plane);
  }
  if (Tape* tape = recording_tape({&x})) {
    const int count = s.c;
    tape->record("pad_channels", {x}, out, [start, count](const Tensor& g) {
      return std::vector<Tensor>{slice_channels(g, start, count)};
    });
  }
  return out;
}

Tensor lerp(const Tensor& a, const Tensor& b, const Tensor& alpha) {
  require_same_shape(a, b, "lerp");
  const Shape& s = a.shape();
  const Shape& as = alpha.shape();
  if (as.c != 1 || broadcast_shape(s, as) != s) {
    throw ShapeError("lerp weight " + as.str() + " cannot broadcast over " + s.str());
  }
  Tensor out(s);
  auto o = out.data_mut();
  const auto da = a.data();
  const auto db = b.data();
  const auto dt = alpha.data();
  const Strides st = broadcast_strides(as);
  std::size_t i = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int h = 0; h < s.h; ++h) {
        const std::int64_t base = n * st.n + h * st.h;
        for (int w = 0; w < s.w; ++w, ++i) o[i] = std::lerp(da[i], db[i], dt[base + w * st.w]);
      }
  check_finite(out, "lerp");
  if (Tape* tape = recording_tape({&a, &b, &alpha})) {
    tape->record("lerp", {a, b, alpha}, out, [a, b, alpha](const Tensor& g) {
      return std::vector<Tensor>{
          a.requires_grad() ? mul(g, one_minus(alpha)) : Tensor{},
          b.requires_grad() ? mul(g, alpha) : Tensor{},
          alpha.requires_grad() ? sum_to(mul(g, sub(b, a)), alpha.shape()) : Tensor{}};
    });
  }
  return out;
}

BranchScope::BranchScope(BranchLog& log, BranchMode mode)
    : previous_log_(t_branch_log), previous_mode_(t_branch_mode) {
  t_branch_log = &log;
  t_branch_mode = mode;
}

BranchScope::~BranchScope() {
  t_branch_log = previous_log_;
  t_branch_mode = previous_mode_;
}

Tensor l1_mean(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "l1_mean");
  return mean(abs(sub(a, b)));
}

}  // namespace scan
