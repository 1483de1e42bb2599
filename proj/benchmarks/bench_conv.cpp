#include <benchmark/benchmark.h>

#include <vector>

#include "nowcast/conv.hpp"
#include "nowcast/random.hpp"

using namespace nowcast;
using kernels::ConvAlgorithm;

namespace {

std::vector<float> random_buffer(std::size_t n, Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
  return v;
}

// args: channels, spatial size, kernel, depthwise flag, algorithm
void BM_ConvForward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto s = static_cast<std::size_t>(state.range(1));
  const auto k = static_cast<std::size_t>(state.range(2));
  const bool depthwise = state.range(3) != 0;
  const auto algo = static_cast<ConvAlgorithm>(state.range(4));
  const std::size_t groups = depthwise ? c : 1;
  const Shape xs{1, c, s, s}, ws{c, c / groups, k, k};
  const auto g = kernels::ConvGeometry::make(xs, ws, 1, k / 2, groups);
  Rng rng(1);
  const auto x = random_buffer(xs.numel(), rng), w = random_buffer(ws.numel(), rng);
  std::vector<float> out(g.output_shape().numel());
  for (auto _ : state) {
    kernels::conv2d_forward<float>(g, x, w, {}, out, algo);
    benchmark::DoNotOptimize(out.data());
  }
  const double macs = static_cast<double>(g.output_shape().numel() * (c / groups) * k * k);
  state.counters["MAC/s"] = benchmark::Counter(macs, benchmark::Counter::kIsIterationInvariantRate);
}

void BM_ConvBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto s = static_cast<std::size_t>(state.range(1));
  const bool depthwise = state.range(2) != 0;
  const std::size_t k = depthwise ? 3 : 1, groups = depthwise ? c : 1;
  const Shape xs{1, c, s, s}, ws{c, c / groups, k, k};
  const auto g = kernels::ConvGeometry::make(xs, ws, 1, k / 2, groups);
  Rng rng(2);
  const auto x = random_buffer(xs.numel(), rng), w = random_buffer(ws.numel(), rng);
  const auto go = random_buffer(g.output_shape().numel(), rng);
  std::vector<float> gi(xs.numel()), gw(ws.numel());
  for (auto _ : state) {
    kernels::conv2d_backward_input<float>(g, go, w, gi);
    kernels::conv2d_backward_weight<float>(g, go, x, gw);
    benchmark::DoNotOptimize(gi.data());
    benchmark::DoNotOptimize(gw.data());
  }
}

void algorithms(benchmark::internal::Benchmark* b) {
  b->ArgNames({"c", "hw", "k", "dw", "algo"});
  for (int algo : {0, 1, 2}) {
    b->Args({32, 96, 3, 1, algo});   // depthwise 3x3
    b->Args({32, 96, 1, 0, algo});   // pointwise
    b->Args({64, 48, 3, 0, algo});   // dense 3x3
  }
}

}  // namespace

BENCHMARK(BM_ConvForward)->Apply(algorithms)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ConvBackward)
    ->ArgNames({"c", "hw", "dw"})
    ->Args({32, 96, 1})
    ->Args({32, 96, 0})
    ->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
