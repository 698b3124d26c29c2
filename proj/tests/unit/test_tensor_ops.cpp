#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <source_location>

#include "doctest.h"
#include "scan/error.hpp"
#include "scan/gradcheck.hpp"
#include "scan/kernels.hpp"
#include "scan/ops.hpp"
#include "test_util.hpp"

using namespace scan;
using scan::testing::random_away_from_zero;
using scan::testing::random_small_shape;
using scan::testing::random_tensor;

namespace {

constexpr double kGradTol = 1e-3;

void expect_gradcheck(const ScalarFn& fn, std::vector<Tensor> inputs, std::size_t max_coords = 0,
                      std::source_location where = std::source_location::current()) {
  GradCheckOptions opts;
  opts.max_coords_per_input = max_coords;
  const auto r = gradcheck(fn, inputs, opts);
  INFO("called from line " << where.line() << " noise ratio " << r.max_noise_ratio << " skipped "
                            << r.coords_skipped);
  INFO("worst input " << r.worst_input << " index " << r.worst_index << " analytic " << r.worst_analytic
                      << " numeric " << r.worst_numeric);
  CHECK(r.max_rel_error <= kGradTol);
  // Skips are for coordinates whose stencil straddles a kink. A weight moves
  // every pre-activation of its channel, so a few are expected there.
  CHECK(r.coords_skipped * 5 <= r.coords_checked + r.coords_skipped);
}

}  // namespace

TEST_SUITE("tensor_engine") {

TEST_CASE("tensor construction validates value count") {
  CHECK_THROWS_AS(Tensor(Shape{1, 1, 2, 2}, std::vector<real>{1, 2, 3}), ShapeError);
  Tensor t(Shape{2, 3, 4, 5}, 1.5f);
  CHECK(t.numel() == 120);
  CHECK(t.at(1, 2, 3, 4) == 1.5f);
}

TEST_CASE("conv2d scalar kernel doubles the input") {
  Tensor x(Shape{1, 1, 3, 3}, 1.0f);
  Tensor w(Shape{1, 1, 1, 1}, 2.0f);
  Tensor b(Shape{1, 1, 1, 1}, 0.0f);
  Tensor y = conv2d(x, w, b, 1, 0);
  REQUIRE(y.shape() == Shape{1, 1, 3, 3});
  for (real v : y.data()) CHECK(v == 2.0f);
}

TEST_CASE("conv2d stride-2 output shape") {
  Tensor x(Shape{1, 3, 128, 128}, 0.1f);
  Tensor w(Shape{64, 3, 3, 3}, 0.01f);
  Tensor b(Shape{1, 64, 1, 1}, 0.0f);
  CHECK(conv2d(x, w, b, 2, 1).shape() == Shape{1, 64, 64, 64});
}

TEST_CASE("conv2d shape errors") {
  Tensor x(Shape{1, 3, 4, 4});
  CHECK_THROWS_AS(conv2d(x, Tensor(Shape{2, 2, 3, 3}), Tensor{}, 1, 0), ShapeError);
  CHECK_THROWS_AS(conv2d(x, Tensor(Shape{2, 3, 7, 7}), Tensor{}, 1, 0), ShapeError);
  CHECK_THROWS_AS(conv2d(x, Tensor(Shape{2, 3, 3, 3}), Tensor{}, 0, 0), ShapeError);
}

TEST_CASE("conv2d gradient matches finite differences") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const int stride = 1 + trial % 2;
    const int pad = trial % 3;
    Tensor x = random_tensor({1, 2, 5, 5}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng);
    Tensor b = random_tensor({1, 3, 1, 1}, rng);
    expect_gradcheck(
        [&](std::span<const Tensor> in) {
          return conv2d(in[0], in[1], in[2], stride, pad);
        },
        {x, w, b});
  }
}

TEST_CASE("parallel conv kernels agree with the serial reference") {
  std::mt19937_64 rng(3);
  struct Case {
    Shape in, weight;
    int stride, pad;
  };
  const Case cases[] = {{{2, 3, 9, 7}, {5, 3, 3, 3}, 1, 1},
                        {{1, 6, 16, 16}, {16, 6, 7, 7}, 1, 3},
                        {{1, 8, 8, 8}, {16, 8, 4, 4}, 2, 1},
                        {{3, 4, 5, 6}, {2, 4, 2, 3}, 2, 0}};
  for (const auto& c : cases) {
    const auto geo = kernels::ConvGeometry::make(c.in, c.weight, c.stride, c.pad);
    Tensor x = random_tensor(c.in, rng);
    Tensor w = random_tensor(c.weight, rng);
    Tensor b = random_tensor({1, c.weight.n, 1, 1}, rng);
    Tensor g = random_tensor(geo.output_shape(), rng);
    std::vector<real> fast(geo.output_shape().numel()), slow(fast.size());
    kernels::conv2d_forward(geo, x.data(), w.data(), b.data(), fast);
    kernels::reference::conv2d_forward(geo, x.data(), w.data(), b.data(), slow);
    for (std::size_t i = 0; i < fast.size(); ++i) CHECK(fast[i] == doctest::Approx(slow[i]).epsilon(1e-5));

    std::vector<real> gi_fast(c.in.numel()), gi_slow(gi_fast.size());
    kernels::conv2d_backward_input(geo, g.data(), w.data(), gi_fast);
    kernels::reference::conv2d_backward_input(geo, g.data(), w.data(), gi_slow);
    for (std::size_t i = 0; i < gi_fast.size(); ++i)
      CHECK(gi_fast[i] == doctest::Approx(gi_slow[i]).epsilon(1e-5));

    std::vector<real> gw_fast(c.weight.numel()), gw_slow(gw_fast.size());
    kernels::conv2d_backward_weight(geo, x.data(), g.data(), gw_fast);
    kernels::reference::conv2d_backward_weight(geo, x.data(), g.data(), gw_slow);
    for (std::size_t i = 0; i < gw_fast.size(); ++i)
      CHECK(gw_fast[i] == doctest::Approx(gw_slow[i]).epsilon(1e-4));
  }
}

TEST_CASE("instance_norm examples") {
  const Tensor ones_c1(Shape{1, 1, 1, 1}, 1.0f);
  const Tensor zeros_c1(Shape{1, 1, 1, 1}, 0.0f);
  SUBCASE("constant channel normalizes to zero") {
    Tensor x(Shape{1, 1, 4, 4}, 5.0f);
    Tensor y = instance_norm(x, ones_c1, zeros_c1);
    for (real v : y.data()) CHECK(v == 0.0f);
  }
  SUBCASE("two values map to -1 and 1") {
    Tensor x(Shape{1, 1, 1, 2}, std::vector<real>{1.0f, 3.0f});
    Tensor y = instance_norm(x, ones_c1, zeros_c1, 1e-12f);
    CHECK(y.data()[0] == doctest::Approx(-1.0f).epsilon(1e-6));
    CHECK(y.data()[1] == doctest::Approx(1.0f).epsilon(1e-6));
  }
  SUBCASE("affine stage is 2*xhat + 1") {
    std::mt19937_64 rng(2);
    Tensor x = random_tensor({2, 3, 4, 4}, rng);
    Tensor plain = instance_norm(x, Tensor({1, 3, 1, 1}, 1.0f), Tensor({1, 3, 1, 1}, 0.0f));
    Tensor affine = instance_norm(x, Tensor({1, 3, 1, 1}, 2.0f), Tensor({1, 3, 1, 1}, 1.0f));
    for (std::size_t i = 0; i < plain.data().size(); ++i)
      CHECK(affine.data()[i] == doctest::Approx(2.0f * plain.data()[i] + 1.0f).epsilon(1e-6));
  }
  SUBCASE("zero spatial elements is a shape error") {
    CHECK_THROWS_AS(instance_norm(Tensor(Shape{1, 1, 0, 3}), ones_c1, zeros_c1), ShapeError);
  }
}

TEST_CASE("instance_norm output has zero mean and unit variance per slice") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    Shape s = random_small_shape(rng, 8);
    s.h = std::max(s.h, 2);
    Tensor x = random_tensor(s, rng, -3.0f, 3.0f);
    Tensor y = instance_norm(x, Tensor({1, s.c, 1, 1}, 1.0f), Tensor({1, s.c, 1, 1}, 0.0f));
    const auto plane = static_cast<std::size_t>(s.plane());
    for (std::size_t slice = 0; slice < static_cast<std::size_t>(s.n * s.c); ++slice) {
      const auto in = x.data().subspan(slice * plane, plane);
      const double mu_in = std::accumulate(in.begin(), in.end(), 0.0) / plane;
      double var_in = 0.0;
      for (real v : in) var_in += (v - mu_in) * (v - mu_in);
      var_in /= plane;
      if (var_in < 1e-4) continue;
      const auto out = y.data().subspan(slice * plane, plane);
      const double mu = std::accumulate(out.begin(), out.end(), 0.0) / plane;
      double var = 0.0;
      for (real v : out) var += (v - mu) * (v - mu);
      var /= plane;
      CHECK(std::fabs(mu) <= 1e-5);
      CHECK(std::fabs(var - 1.0) <= 1e-3);
    }
  }
}

TEST_CASE("pixel_shuffle definition and shapes") {
  Tensor x(Shape{1, 4, 1, 1}, std::vector<real>{1, 2, 3, 4});
  Tensor y = pixel_shuffle(x, 2);
  REQUIRE(y.shape() == Shape{1, 1, 2, 2});
  CHECK(std::vector<real>(y.data().begin(), y.data().end()) == std::vector<real>{1, 2, 3, 4});
  CHECK(pixel_shuffle(Tensor(Shape{2, 16, 4, 4}), 2).shape() == Shape{2, 4, 8, 8});
  CHECK_THROWS_AS(pixel_shuffle(Tensor(Shape{1, 6, 2, 2}), 2), ShapeError);
}

TEST_CASE("pixel_shuffle is a bijection on indices") {
  Tensor x(Shape{1, 9, 2, 2});
  std::iota(x.data_mut().begin(), x.data_mut().end(), 0.0f);
  Tensor y = pixel_shuffle(x, 3);
  REQUIRE(y.shape() == Shape{1, 1, 6, 6});
  std::vector<int> hits(36, 0);
  for (real v : y.data()) hits.at(static_cast<std::size_t>(v)) += 1;
  CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
  // Explicit mapping: out[n, c, h*r+i, w*r+j] = in[n, c*r*r + i*r + j, h, w].
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int h = 0; h < 2; ++h)
        for (int w = 0; w < 2; ++w) CHECK(y.at(0, 0, h * 3 + i, w * 3 + j) == x.at(0, i * 3 + j, h, w));
}

TEST_CASE("pixel_unshuffle inverts pixel_shuffle") {
  std::mt19937_64 rng(5);
  for (int r = 1; r <= 3; ++r) {
    Tensor x = random_tensor({2, 2 * r * r, 3, 2}, rng);
    Tensor back = pixel_unshuffle(pixel_shuffle(x, r), r);
    CHECK(std::equal(back.data().begin(), back.data().end(), x.data().begin()));
  }
}

TEST_CASE("pointwise activations") {
  Tensor x(Shape{1, 1, 1, 3}, std::vector<real>{-1.0f, 0.0f, 2.0f});
  Tensor r = relu(x);
  CHECK(std::vector<real>(r.data().begin(), r.data().end()) == std::vector<real>{0.0f, 0.0f, 2.0f});
  CHECK(sigmoid(Tensor::scalar(0.0f)).item() == 0.5f);
  CHECK(leaky_relu(Tensor::scalar(-1.0f)).item() == doctest::Approx(-0.2f));
  // Saturated inputs stay strictly inside the open ranges.
  Tensor big(Shape{1, 1, 1, 2}, std::vector<real>{-200.0f, 200.0f});
  Tensor s = sigmoid(big);
  Tensor t = tanh(big);
  for (real v : s.data()) CHECK((v > 0.0f && v < 1.0f));
  for (real v : t.data()) CHECK((v > -1.0f && v < 1.0f));
  CHECK(pointwise(x, Activation::relu).data()[2] == 2.0f);
}

TEST_CASE("tanh gradient matches finite differences") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = random_tensor(random_small_shape(rng), rng, -2.0f, 2.0f);
    expect_gradcheck([](std::span<const Tensor> in) { return tanh(in[0]); }, {x});
  }
}

TEST_CASE("resample examples") {
  Tensor x(Shape{1, 1, 2, 2}, std::vector<real>{1, 2, 3, 4});
  Tensor up = upsample_nearest2x(x);
  const std::vector<real> expected{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  CHECK(std::vector<real>(up.data().begin(), up.data().end()) == expected);
  Tensor block(Shape{1, 1, 2, 2}, std::vector<real>{0, 1, 1, 2});
  CHECK(downsample_area2x(block).item() == 1.0f);
  CHECK_THROWS_AS(downsample_area2x(Tensor(Shape{1, 1, 3, 4})), ShapeError);

  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor r = random_tensor(random_small_shape(rng), rng);
    Tensor round_trip = resample(resample(r, Resample::nearest_up_2x), Resample::area_down_2x);
    CHECK(std::equal(round_trip.data().begin(), round_trip.data().end(), r.data().begin()));
  }
}

TEST_CASE("concat_channels shapes, slicing and gradient") {
  std::mt19937_64 rng(9);
  Tensor a = random_tensor({1, 3, 8, 8}, rng);
  Tensor b = random_tensor({1, 3, 8, 8}, rng);
  Tensor c = concat_channels(a, b);
  CHECK(c.shape() == Shape{1, 6, 8, 8});
  Tensor first = slice_channels(c, 0, 3);
  CHECK(std::equal(first.data().begin(), first.data().end(), a.data().begin()));
  CHECK_THROWS_AS(concat_channels(a, Tensor(Shape{1, 3, 4, 8})), ShapeError);

  Tensor p = random_tensor({2, 1, 3, 3}, rng);
  Tensor q = random_tensor({2, 2, 3, 3}, rng);
  expect_gradcheck([](std::span<const Tensor> in) { return concat_channels(in[0], in[1]); },
                   {p, q});
}

TEST_CASE("l1_mean examples and subgradient") {
  Tensor a(Shape{1, 3, 4, 4}, 0.5f);
  CHECK(l1_mean(a, a).item() == 0.0f);
  CHECK(l1_mean(a, Tensor(Shape{1, 3, 4, 4}, 0.25f)).item() == doctest::Approx(0.25f));
  CHECK_THROWS_AS(l1_mean(a, Tensor(Shape{1, 3, 4, 3})), ShapeError);
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 5; ++trial) {
    const Shape s = random_small_shape(rng);
    Tensor base = random_tensor(s, rng);
    Tensor offset = mul_scalar(random_away_from_zero(s, rng, 0.2f), 0.05f);
    Tensor other = add(base, offset);
    expect_gradcheck([](std::span<const Tensor> in) { return l1_mean(in[0], in[1]); }, {base, other});
  }
}

TEST_CASE("backward basics") {
  std::mt19937_64 rng(12);
  Tensor x = random_tensor({2, 2, 3, 3}, rng).requires_grad_();
  {
    Tape tape;
    TapeScope scope(tape);
    backward(sum(x), tape);
  }
  for (real g : x.grad_data()) CHECK(g == 1.0f);
  x.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    backward(sum(mul(x, x)), tape);
  }
  for (std::size_t i = 0; i < x.grad_data().size(); ++i) CHECK(x.grad_data()[i] == 2.0f * x.data()[i]);
}

TEST_CASE("gradients accumulate over multiple uses and calls") {
  Tensor x = Tensor(Shape{1, 1, 1, 2}, std::vector<real>{1.0f, -2.0f}).requires_grad_();
  Tape tape;
  TapeScope scope(tape);
  Tensor loss = sum(add(mul_scalar(x, 3.0f), x));
  backward(loss, tape);
  CHECK(x.grad_data()[0] == 4.0f);
  backward(loss, tape);
  CHECK(x.grad_data()[1] == 8.0f);
}

TEST_CASE("backward rejects a loss from another tape") {
  Tensor x = Tensor(Shape{1, 1, 1, 1}, 1.0f).requires_grad_();
  Tape first;
  Tape second;
  Tensor loss;
  {
    TapeScope scope(first);
    loss = mul_scalar(x, 2.0f);
  }
  CHECK_THROWS_AS(backward(loss, second), UsageError);
  CHECK_THROWS_AS(backward(Tensor::scalar(1.0f), first), UsageError);
  {
    TapeScope scope(first);
    Tensor wide = mul_scalar(Tensor(Shape{1, 1, 1, 2}, 1.0f).requires_grad_(), 2.0f);
    CHECK_THROWS_AS(backward(wide, first), UsageError);
  }
}

TEST_CASE("composed conv-norm-relu-l1 chain gradient") {
  std::mt19937_64 rng(21);
  auto chain = [](const Tensor& x, const Tensor& w, const Tensor& b, const Tensor& gamma, const Tensor& beta) {
    return relu(instance_norm(conv2d(x, w, b, 1, 1), gamma, beta));
  };
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = random_tensor({1, 2, 5, 5}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng);
    Tensor b = random_tensor({1, 3, 1, 1}, rng);
    Tensor gamma = random_tensor({1, 3, 1, 1}, rng, 0.5f, 1.5f);
    Tensor beta = random_tensor({1, 3, 1, 1}, rng);
    // A target close to the output keeps the loss value small, so its real
    // rounding stays far below the finite-difference signal.
    Tensor target = add(chain(x, w, b, gamma, beta), mul_scalar(random_away_from_zero({1, 3, 5, 5}, rng, 0.2f), 0.05f));
    expect_gradcheck(
        [&](std::span<const Tensor> in) { return l1_mean(chain(in[0], in[1], b, in[2], in[3]), target); },
        {x, w, gamma, beta});

    // Normalisation cancels a per-channel bias, so its gradient is zero.
    Tape tape;
    TapeScope scope(tape);
    Tensor bias = b.detach().requires_grad_();
    const Tensor wrt[] = {bias};
    Tensor gb = grad(l1_mean(chain(x, w, bias, gamma, beta), target), wrt, tape)[0];
    for (real v : gb.data()) CHECK(std::fabs(v) <= 1e-6f);
  }
}

TEST_CASE("every differentiable op passes finite differences on random shapes") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 5; ++trial) {
    const Shape s = random_small_shape(rng);
    const Shape per_channel{1, s.c, 1, 1};
    Tensor a = random_tensor(s, rng);
    Tensor b = random_tensor(s, rng);
    Tensor pos = random_tensor(s, rng, 0.5f, 2.0f);
    Tensor away = random_away_from_zero(s, rng, 0.05f);
    Tensor bc = random_tensor(per_channel, rng, 0.5f, 1.5f);
    CAPTURE(s.str());

    expect_gradcheck([](auto in) { return add(in[0], in[1]); }, {a, bc});
    expect_gradcheck([](auto in) { return sub(in[0], in[1]); }, {a, bc});
    expect_gradcheck([](auto in) { return mul(in[0], in[1]); }, {a, bc});
    expect_gradcheck([](auto in) { return div(in[0], in[1]); }, {a, bc});
    expect_gradcheck([](auto in) { return neg(in[0]); }, {a});
    expect_gradcheck([](auto in) { return add_scalar(in[0], 0.3f); }, {a});
    expect_gradcheck([](auto in) { return mul_scalar(in[0], -1.7f); }, {a});
    expect_gradcheck([](auto in) { return one_minus(in[0]); }, {a});
    expect_gradcheck([](auto in) { return exp(in[0]); }, {a});
    expect_gradcheck([](auto in) { return log(in[0]); }, {pos});
    expect_gradcheck([](auto in) { return sqrt(in[0]); }, {pos});
    expect_gradcheck([](auto in) { return rsqrt(in[0]); }, {pos});
    expect_gradcheck([](auto in) { return abs(in[0]); }, {away});
    expect_gradcheck([](auto in) { return square(in[0]); }, {a});
    expect_gradcheck([](auto in) { return clamp(in[0], -0.5f, 0.5f); },
                     {mul_scalar(away, 0.4f)});
    expect_gradcheck([](auto in) { return relu(in[0]); }, {away});
    expect_gradcheck([](auto in) { return leaky_relu(in[0]); }, {away});
    expect_gradcheck([](auto in) { return sigmoid(in[0]); }, {a});
    expect_gradcheck([](auto in) { return tanh(in[0]); }, {a});
    expect_gradcheck([per_channel](auto in) { return sum_to(in[0], per_channel); }, {a});
    expect_gradcheck([s](auto in) { return expand(in[0], s); }, {bc});
    expect_gradcheck([](auto in) { return mean_spatial(in[0]); }, {a});
    expect_gradcheck([](auto in) { return mean(in[0]); }, {a});
    expect_gradcheck([](auto in) { return upsample_nearest2x(in[0]); }, {a});
    expect_gradcheck([](auto in) { return downsample_area2x(upsample_nearest2x(in[0])); },
                     {a});
    expect_gradcheck(
        [](auto in) { return pixel_unshuffle(pixel_shuffle(mul(in[0], in[0]), 1), 1); },
        {a});
    Tensor shuffled_in = random_tensor({s.n, 4 * s.c, s.h, s.w}, rng);
    expect_gradcheck([](auto in) { return pixel_shuffle(in[0], 2); }, {shuffled_in});
    Tensor even = random_tensor({s.n, s.c, 2 * s.h, 2 * s.w}, rng);
    expect_gradcheck([](auto in) { return pixel_unshuffle(in[0], 2); }, {even});
    expect_gradcheck([](auto in) { return downsample_area2x(in[0]); }, {even});
    expect_gradcheck([s](auto in) { return slice_channels(in[0], 0, s.c); }, {a});
    expect_gradcheck([s](auto in) { return pad_channels(in[0], s.c + 2, 1); }, {a});
    Tensor alpha = random_tensor({s.n, 1, s.h, s.w}, rng, 0.05f, 0.95f);
    expect_gradcheck([](auto in) { return lerp(in[0], in[1], in[2]); }, {a, b, alpha});
    expect_gradcheck([](auto in) { return lerp(in[0], in[1], in[2]); },
                     {a, b, Tensor::scalar(0.3f)});
    expect_gradcheck([](auto in) { return l1_mean(in[0], in[1]); }, {a, add(a, mul_scalar(random_away_from_zero(s, rng, 0.2f), 0.05f))});
    Tensor wide = random_tensor({s.n, s.c, s.h + 2, s.w + 2}, rng, -2.0f, 2.0f);
    expect_gradcheck([per_channel](auto in) { return instance_norm(in[0], in[1], in[2]); },
                     {wide, random_tensor(per_channel, rng), random_tensor(per_channel, rng)});
    Tensor x = random_tensor({s.n, s.c, s.h + 3, s.w + 3}, rng);
    Tensor w = random_tensor({2, s.c, 2, 2}, rng);
    const Shape gshape = kernels::ConvGeometry::make(x.shape(), w.shape(), 1, 0).output_shape();
    Tensor go = random_tensor(gshape, rng);
    expect_gradcheck([xs = x.shape()](auto in) { return conv2d_input_grad(in[0], in[1], xs, 1, 0); },
                     {go, w});
    expect_gradcheck([ws = w.shape()](auto in) { return conv2d_weight_grad(in[0], in[1], ws, 1, 0); },
                     {x, go});
  }
}

// tanh instead of leaky ReLU: the penalty is discontinuous where a weight
// perturbation flips an activation mask, which finite differences cannot see
// past. The leaky ReLU mask has zero second derivative almost everywhere.
TEST_CASE("second-order gradients through a discriminator-style stack") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = random_tensor({1, 2, 8, 8}, rng);
    Tensor w1 = random_tensor({3, 2, 4, 4}, rng, -0.5f, 0.5f);
    Tensor w2 = random_tensor({1, 3, 3, 3}, rng, -0.5f, 0.5f);
    Tensor gamma = random_tensor({1, 3, 1, 1}, rng, 0.5f, 1.5f);
    Tensor beta = random_tensor({1, 3, 1, 1}, rng);
    // Input-gradient norm, differentiated w.r.t. the weights. The (norm - 1)^2
    // wrapper of the real penalty is first-order and left out so the value stays
    // small enough for float32 differences to resolve.
    auto penalty = [x](std::span<const Tensor> in) {
      Tape local;
      Tape& tape = active_tape() != nullptr ? *active_tape() : local;
      TapeScope scope(tape);
      Tensor probe = x.detach().requires_grad_();
      Tensor h = tanh(instance_norm(conv2d(probe, in[0], Tensor{}, 2, 1), in[2], in[3]));
      Tensor score = mean(conv2d(h, in[1], Tensor{}, 1, 1));
      const Tensor probes[] = {probe};
      Tensor g = grad(score, probes, tape, true)[0];
      return sqrt(add_scalar(sum(square(g)), 1e-12f));
    };
    GradCheckOptions opts;
    opts.max_coords_per_input = 40;
    opts.seed = static_cast<std::uint64_t>(trial);
    const auto r = gradcheck(penalty, std::vector<Tensor>{w1, w2, gamma, beta}, opts);
    INFO("worst input " << r.worst_input << " analytic " << r.worst_analytic << " numeric " << r.worst_numeric
                        << " noise ratio " << r.max_noise_ratio);
    CHECK(r.max_rel_error <= kGradTol);
  }
}

TEST_CASE("ops are pure") {
  std::mt19937_64 rng(50);
  Tensor x = random_tensor({1, 3, 8, 8}, rng);
  Tensor w = random_tensor({4, 3, 3, 3}, rng);
  auto run = [&] {
    return instance_norm(conv2d(x, w, Tensor{}, 1, 1), Tensor({1, 4, 1, 1}, 1.0f), Tensor({1, 4, 1, 1}, 0.0f));
  };
  Tensor first = run();
  Tensor second = run();
  CHECK(std::equal(first.data().begin(), first.data().end(), second.data().begin()));
}

TEST_CASE("non-finite results are errors") {
  CHECK_THROWS_AS(log(Tensor::scalar(-1.0f)), NumericError);
  CHECK_THROWS_AS(div(Tensor::scalar(1.0f), Tensor::scalar(0.0f)), NumericError);
}

}  // TEST_SUITE

TEST_CASE("branch replay differences the active piece across a kink") {
  // relu at 5e-4 with h = 1e-3: a plain central difference sees the kink.
  const Tensor x(Shape{1, 1, 1, 1}, real(5e-4));
  const Tensor inputs[] = {x};
  const auto fn = [](std::span<const Tensor> in) { return relu(in[0]); };
  GradCheckOptions plain;
  plain.replay_branches = false;
  plain.nonsmooth_threshold = -1.0;
  const auto crossed = gradcheck(fn, inputs, plain);
  CHECK(crossed.worst_numeric == doctest::Approx(0.75).epsilon(1e-3));
  GradCheckOptions replay;
  replay.nonsmooth_threshold = -1.0;
  const auto r = gradcheck(fn, inputs, replay);
  CHECK(r.max_rel_error < 1e-6);
  CHECK(r.coords_crossing_kinks == 1);

  // Replay extends each branch linearly.
  BranchLog log;
  const Tensor neg(Shape{1, 1, 1, 2}, std::vector<real>{-0.5, 0.5});
  {
    BranchScope record(log, BranchMode::record);
    relu(neg);
  }
  const Tensor flipped(Shape{1, 1, 1, 2}, std::vector<real>{0.25, -0.25});
  BranchScope replay_scope(log, BranchMode::replay);
  const Tensor out = relu(flipped);
  CHECK(out.data()[0] == 0);
  CHECK(out.data()[1] == real(-0.25));
  CHECK(log.flips == 2);
}
