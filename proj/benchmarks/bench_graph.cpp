#include <benchmark/benchmark.h>

#include "latentaug/gan.hpp"
#include "latentaug/graph.hpp"
#include "latentaug/rng.hpp"
#include "latentaug/tensor.hpp"

using namespace latentaug;

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal();
  return t;
}

}  // namespace

static void BM_Conv2dForward(benchmark::State& state) {
  int c = static_cast<int>(state.range(0));
  Rng rng(1);
  Graph g;
  NodeId x = g.input("x", {8, c, 16, 16});
  NodeId w = g.input("w", {c, c, 3, 3});
  g.set_output(g.sum(g.conv2d(x, w, 1, 1)));
  g.bind("x", random_tensor({8, c, 16, 16}, rng));
  g.bind("w", random_tensor({c, c, 3, 3}, rng));
  for (auto _ : state) benchmark::DoNotOptimize(g.evaluate());
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_Conv2dForward)->Arg(16)->Arg(64);

static void BM_Conv2dForwardBackward(benchmark::State& state) {
  int c = static_cast<int>(state.range(0));
  Rng rng(1);
  Graph g;
  NodeId x = g.input("x", {8, c, 16, 16});
  NodeId w = g.input("w", {c, c, 3, 3});
  g.set_output(g.sum(g.square(g.conv2d(x, w, 1, 1))));
  g.bind("x", random_tensor({8, c, 16, 16}, rng));
  g.bind("w", random_tensor({c, c, 3, 3}, rng));
  for (auto _ : state) {
    g.evaluate();
    benchmark::DoNotOptimize(g.backprop({"w"}));
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(16)->Arg(64);

static void BM_GeneratorForward(benchmark::State& state) {
  int n = static_cast<int>(state.range(0));
  GanConfig config;
  config.latent_dim = 64;
  config.resolution = 32;
  config.base_channels = 32;
  config.disc_channels = 16;
  GanModel model = init_gan(config, 7);
  Rng rng(3);
  Tensor w = random_tensor({n, config.latent_dim}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(generate(model, w));
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_GeneratorForward)->Arg(1)->Arg(16);

BENCHMARK_MAIN();
