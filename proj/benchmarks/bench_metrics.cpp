#include <benchmark/benchmark.h>

#include "latentaug/feature_extractor.hpp"
#include "latentaug/metrics.hpp"
#include "latentaug/rng.hpp"
#include "latentaug/tensor.hpp"

using namespace latentaug;

namespace {

Tensor random_embeddings(int n, int dim, uint64_t seed) {
  Rng rng(seed);
  Tensor t({n, dim});
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal();
  return t;
}

}  // namespace

static void BM_KnnPrecisionRecall(benchmark::State& state) {
  int n = static_cast<int>(state.range(0));
  Tensor real = random_embeddings(n, 56, 1);
  Tensor gen = random_embeddings(n, 56, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(knn_precision_recall(real, gen, 3));
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_KnnPrecisionRecall)->Arg(256)->Arg(1024);

static void BM_FrechetDistance(benchmark::State& state) {
  int n = static_cast<int>(state.range(0));
  Tensor real = random_embeddings(n, 56, 1);
  Tensor gen = random_embeddings(n, 56, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(frechet_distance(real, gen));
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_FrechetDistance)->Arg(256)->Arg(1024);

static void BM_FeatureEmbed(benchmark::State& state) {
  int n = static_cast<int>(state.range(0));
  FeatureExtractor extractor(2, 21);
  Rng rng(3);
  Tensor batch({n, 2, 32, 32});
  for (int64_t i = 0; i < batch.numel(); ++i) batch[i] = rng.uniform();
  for (auto _ : state) {
    benchmark::DoNotOptimize(extractor.embed(batch));
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_FeatureEmbed)->Arg(16)->Arg(64);
