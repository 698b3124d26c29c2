#include "scan/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "scan/error.hpp"
#include "scan/ops.hpp"

namespace scan {

GradCheckResult gradcheck(const CheckedFn& fn, std::span<const Tensor> inputs, GradCheckOptions options) {
  std::vector<Tensor> probes;
  std::vector<bool> had_grad;
  probes.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (options.in_place) {
      if (!in.is_leaf()) throw UsageError("gradcheck: in-place inputs must be leaves");
      had_grad.push_back(in.requires_grad());
      probes.push_back(in);
      probes.back().requires_grad_(true);
    } else {
      probes.push_back(in.detach().requires_grad_(true));
    }
  }
  struct Restore {
    std::vector<Tensor>& probes;
    const std::vector<bool>& had_grad;
    ~Restore() {
      for (std::size_t i = 0; i < had_grad.size(); ++i) probes[i].requires_grad_(had_grad[i]);
    }
  } restore{probes, had_grad};

  std::mt19937_64 rng(options.seed);
  Tensor cotangent;
  std::vector<Tensor> analytic;
  BranchLog branches;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor out;
    {
      BranchScope record(branches, BranchMode::record);
      out = fn(probes);
    }
    cotangent = Tensor(out.shape(), 1.0f);
    if (out.numel() > 1 && !options.sum_output) {
      std::uniform_real_distribution<real> dist(-1.0f, 1.0f);
      for (real& v : cotangent.data_mut()) v = dist(rng);
    }
    analytic = grad(sum(mul(out, cotangent)), probes, tape);
  }

  const auto w = cotangent.data();
  std::size_t flips = 0;
  auto evaluate = [&]() {
    NoGradScope no_grad;
    Tensor out;
    if (options.replay_branches) {
      branches.cursor = 0;
      branches.flips = 0;
      BranchScope replay(branches, BranchMode::replay);
      out = fn(probes);
      if (branches.cursor != branches.calls.size()) {
        throw UsageError("gradcheck: evaluation took a different op sequence than the recorded one");
      }
      flips += branches.flips;
    } else {
      out = fn(probes);
    }
    if (out.shape() != cotangent.shape()) throw ShapeError("gradcheck: output shape changed between calls");
    const auto d = out.data();
    std::vector<double> values(d.begin(), d.end());
    return values;
  };
  // Contracted difference plus a bound on its real rounding: one ulp per
  // output element that moved, weighted like the element itself.
  struct Difference {
    double value, noise;
  };
  auto contract_difference = [&](const std::vector<double>& plus, const std::vector<double>& minus) {
    Difference d{0.0, 0.0};
    for (std::size_t i = 0; i < plus.size(); ++i) {
      if (plus[i] == minus[i]) continue;
      d.value += static_cast<double>(w[i]) * (plus[i] - minus[i]);
      const real big = static_cast<real>(std::max(std::fabs(plus[i]), std::fabs(minus[i])));
      d.noise += std::fabs(static_cast<double>(w[i])) * (std::nextafter(big, std::numeric_limits<real>::infinity()) - big);
    }
    return d;
  };

  GradCheckResult result;
  for (std::size_t k = 0; k < probes.size(); ++k) {
    const std::size_t count = static_cast<std::size_t>(probes[k].numel());
    std::vector<std::size_t> coords(count);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_input != 0 && options.max_coords_per_input < count) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_input);
      std::sort(coords.begin(), coords.end());
    }
    const auto a = analytic[k].data();
    std::vector<double> numeric(coords.size());
    std::vector<double> numeric_half(coords.size());
    std::vector<double> noise(coords.size(), 0.0);
    auto values = probes[k].data_mut();
    std::vector<bool> crossed(coords.size(), false);
    for (std::size_t i = 0; i < coords.size(); ++i) {
      const std::size_t idx = coords[i];
      const real original = values[idx];
      flips = 0;
      auto central = [&](real step) {
        values[idx] = original + step;
        const auto plus = evaluate();
        values[idx] = original - step;
        const auto minus = evaluate();
        values[idx] = original;
        // The perturbation actually applied after real rounding.
        const double span = (static_cast<double>(original + step) - static_cast<double>(original - step));
        const Difference d = contract_difference(plus, minus);
        return Difference{d.value / span, d.noise / span};
      };
      const Difference full = central(options.step);
      numeric[i] = full.value;
      noise[i] = full.noise;
      if (options.nonsmooth_threshold >= 0.0) {
        const Difference half = central(options.step * 0.5f);
        numeric_half[i] = half.value;
        noise[i] += half.noise;
      }
      crossed[i] = flips > 0;
    }
    double scale = options.min_scale;
    for (std::size_t i = 0; i < coords.size(); ++i) {
      scale = std::max({scale, std::fabs(static_cast<double>(a[coords[i]])), std::fabs(numeric[i])});
    }
    for (std::size_t i = 0; i < coords.size(); ++i) {
      if (options.nonsmooth_threshold >= 0.0 &&
          std::fabs(numeric[i] - numeric_half[i]) > options.nonsmooth_threshold * scale + 2.0 * noise[i]) {
        ++result.coords_skipped;
        continue;
      }
      result.max_noise_ratio = std::max(result.max_noise_ratio, noise[i] / scale);
      const double err = std::fabs(static_cast<double>(a[coords[i]]) - numeric[i]) / scale;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_input = k;
        result.worst_index = coords[i];
        result.worst_analytic = a[coords[i]];
        result.worst_numeric = numeric[i];
      }
      ++result.coords_checked;
      if (crossed[i]) ++result.coords_crossing_kinks;
    }
  }
  return result;
}

}  // namespace scan
