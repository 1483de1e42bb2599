#include <benchmark/benchmark.h>

#include "nowcast/model.hpp"
#include "nowcast/ops.hpp"
#include "nowcast/tape.hpp"

using namespace nowcast;

namespace {

ModelConfig config(std::size_t base) {
  return {.in_channels = 6, .out_channels = 1, .base_channels = base, .cbam_reduction = std::min<std::size_t>(base, 16) / 2};
}

Tensor<float> input(std::size_t n, std::size_t size) {
  Rng rng(3);
  std::vector<float> v(n * 6 * size * size);
  for (auto& x : v) x = static_cast<float>(rng.uniform());
  return Tensor<float>({n, 6, size, size}, std::move(v));
}

// args: base channels, frame size
void BM_ModelForward(benchmark::State& state) {
  SarUNet<float> model(config(static_cast<std::size_t>(state.range(0))), 0);
  model.set_training(false);
  const auto x = input(1, static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(model.predict(x).data().data());
}

void BM_TrainStep(benchmark::State& state) {
  SarUNet<float> model(config(static_cast<std::size_t>(state.range(0))), 0);
  const auto size = static_cast<std::size_t>(state.range(1));
  const auto x = input(6, size);
  const Tensor<float> target({6, 1, size, size});
  for (auto _ : state) {
    Tape<float> tape;
    model.zero_grad();
    auto loss = ops::mse(&tape, model.forward(&tape, x).output, target);
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.item());
  }
}

}  // namespace

BENCHMARK(BM_ModelForward)->ArgNames({"base", "hw"})->Args({4, 96})->Args({16, 96})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TrainStep)->ArgNames({"base", "hw"})->Args({4, 96})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
