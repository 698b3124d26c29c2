// Parallel im2col/GEMM convolution kernels against the serial reference loops.
// Thread count comes from SCAN_NUM_THREADS like the CLI (default 1).

#include <benchmark/benchmark.h>

#include <cstdlib>
#include <random>
#include <string>
#include <vector>

#include "scan/kernels.hpp"

namespace k = scan::kernels;
using scan::real;

namespace {

// Layer shapes from the translation net at 32 px with 16 base filters:
// {in_c, out_c, kernel, stride, pad, side}.
struct Layer {
  int in_c, out_c, kernel, stride, pad, side;
};

const Layer kLayers[] = {
    {3, 16, 7, 1, 3, 32},   // enc0
    {16, 32, 3, 2, 1, 32},  // enc1
    {64, 64, 3, 1, 1, 8},   // residual conv
    {32, 64, 3, 1, 1, 16},  // sub-pixel up-block
    {16, 3, 7, 1, 3, 32},   // out
};

struct Buffers {
  k::ConvGeometry g;
  std::vector<real> input, weight, bias, output;
};

Buffers make(const Layer& l) {
  Buffers b;
  b.g = k::ConvGeometry::make({1, l.in_c, l.side, l.side}, {l.out_c, l.in_c, l.kernel, l.kernel}, l.stride, l.pad);
  std::mt19937 rng(7);
  std::uniform_real_distribution<real> u(-1, 1);
  auto fill = [&](std::size_t n) {
    std::vector<real> v(n);
    for (real& x : v) x = u(rng);
    return v;
  };
  b.input = fill(static_cast<std::size_t>(b.g.input_shape().numel()));
  b.weight = fill(static_cast<std::size_t>(b.g.weight_shape().numel()));
  b.bias = fill(static_cast<std::size_t>(l.out_c));
  b.output.resize(static_cast<std::size_t>(b.g.output_shape().numel()));
  return b;
}

// Backward computes two products of the forward's size.
void label(benchmark::State& state, const Buffers& b, double passes = 1.0) {
  const double flops = passes * 2.0 * static_cast<double>(b.g.output_shape().numel()) * b.g.in_c * b.g.k_h * b.g.k_w;
  state.counters["GFLOP/s"] = benchmark::Counter(flops, benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
  state.counters["threads"] = k::num_threads();
}

void BM_forward_parallel(benchmark::State& state) {
  Buffers b = make(kLayers[state.range(0)]);
  for (auto _ : state) {
    k::conv2d_forward(b.g, b.input, b.weight, b.bias, b.output);
    benchmark::DoNotOptimize(b.output.data());
  }
  label(state, b);
}

void BM_forward_reference(benchmark::State& state) {
  Buffers b = make(kLayers[state.range(0)]);
  for (auto _ : state) {
    k::reference::conv2d_forward(b.g, b.input, b.weight, b.bias, b.output);
    benchmark::DoNotOptimize(b.output.data());
  }
  label(state, b);
}

void BM_backward_parallel(benchmark::State& state) {
  Buffers b = make(kLayers[state.range(0)]);
  std::vector<real> gi(b.input.size()), gw(b.weight.size());
  for (auto _ : state) {
    k::conv2d_backward_input(b.g, b.output, b.weight, gi);
    k::conv2d_backward_weight(b.g, b.input, b.output, gw);
    benchmark::DoNotOptimize(gi.data());
    benchmark::DoNotOptimize(gw.data());
  }
  label(state, b, 2.0);
}

void BM_backward_reference(benchmark::State& state) {
  Buffers b = make(kLayers[state.range(0)]);
  std::vector<real> gi(b.input.size()), gw(b.weight.size());
  for (auto _ : state) {
    k::reference::conv2d_backward_input(b.g, b.output, b.weight, gi);
    k::reference::conv2d_backward_weight(b.g, b.input, b.output, gw);
    benchmark::DoNotOptimize(gi.data());
    benchmark::DoNotOptimize(gw.data());
  }
  label(state, b, 2.0);
}

void layers(benchmark::internal::Benchmark* b) {
  for (int i = 0; i < static_cast<int>(std::size(kLayers)); ++i) b->Arg(i);
  b->ArgName("layer");
}

BENCHMARK(BM_forward_parallel)->Apply(layers);
BENCHMARK(BM_forward_reference)->Apply(layers);
BENCHMARK(BM_backward_parallel)->Apply(layers);
BENCHMARK(BM_backward_reference)->Apply(layers);

}  // namespace

int main(int argc, char** argv) {
  if (const char* env = std::getenv("SCAN_NUM_THREADS")) k::set_num_threads(std::atoi(env));
  else k::set_num_threads(1);
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
