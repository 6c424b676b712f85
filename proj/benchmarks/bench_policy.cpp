#include <benchmark/benchmark.h>

#include "latentaug/feature_extractor.hpp"
#include "latentaug/gan.hpp"
#include "latentaug/policy.hpp"
#include "latentaug/rng.hpp"
#include "latentaug/synthdata.hpp"

using namespace latentaug;

namespace {

// Shared fixture: a freshly initialized generator with random reference
// latents. Weights are untrained; the arithmetic cost is identical.
struct PolicyBench {
  GanModel gan;
  FeatureExtractor extractor{2, 21};
  Dataset ds;
  LatentTable table;
  ReferenceSet refs;

  PolicyBench() {
    GanConfig config;
    config.latent_dim = 64;
    config.resolution = 32;
    config.base_channels = 32;
    config.disc_channels = 16;
    gan = init_gan(config, 7);

    ds = make_dataset(16, 32, 11);
    table.dim = config.latent_dim;
    Rng rng(5);
    std::vector<const PairedImage*> images;
    for (const PairedImage& im : ds.samples) {
      Tensor w({config.latent_dim});
      for (int i = 0; i < config.latent_dim; ++i) w[i] = rng.normal();
      table.ids.push_back(im.sample_id);
      table.latents[im.sample_id] = w;
      images.push_back(&im);
    }
    refs = make_reference_set(images, table);
  }
};

const PolicyBench& bench() {
  static PolicyBench b;
  return b;
}

}  // namespace

static void BM_PolicyLossWithGradient(benchmark::State& state) {
  const PolicyBench& b = bench();
  PolicyConfig config = mae_objective_preset();
  Tensor w = b.table.at(b.table.ids[0]);
  Tensor grad({b.gan.config.latent_dim});
  for (auto _ : state) {
    benchmark::DoNotOptimize(policy_loss(w, b.gan, b.extractor, b.refs, config, &grad));
  }
}
BENCHMARK(BM_PolicyLossWithGradient);

static void BM_NavigateSteps(benchmark::State& state) {
  const PolicyBench& b = bench();
  PolicyConfig config = mae_objective_preset();
  config.k_steps = static_cast<int>(state.range(0));
  Tensor w = b.table.at(b.table.ids[0]);
  for (auto _ : state) {
    benchmark::DoNotOptimize(navigate(w, b.gan, b.extractor, b.refs, config));
  }
  state.SetItemsProcessed(state.iterations() * config.k_steps);
}
BENCHMARK(BM_NavigateSteps)->Arg(1)->Arg(3)->Arg(9);

static void BM_AugmentBatchLatent(benchmark::State& state) {
  const PolicyBench& b = bench();
  AugmentContext ctx;
  ctx.model = &b.gan;
  ctx.extractor = &b.extractor;
  ctx.latents = &b.table;
  ctx.refs = &b.refs;
  ctx.config = mae_objective_preset();
  ctx.config.k_steps = 1;
  ctx.config.ref_subset_size = 8;
  ctx.config.p_aug = 0.0;

  std::vector<const PairedImage*> batch;
  for (size_t i = 0; i < 8; ++i) batch.push_back(&b.ds.samples[i]);
  Rng rng(17);
  for (auto _ : state) {
    benchmark::DoNotOptimize(augment_batch(ctx, batch, PolicyKind::kLatent, rng));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(batch.size()));
}
BENCHMARK(BM_AugmentBatchLatent);

static void BM_AugmentBatchStandardDa(benchmark::State& state) {
  const PolicyBench& b = bench();
  AugmentContext ctx;
  ctx.config = mae_objective_preset();
  ctx.config.p_aug = 0.0;

  std::vector<const PairedImage*> batch;
  for (size_t i = 0; i < 8; ++i) batch.push_back(&b.ds.samples[i]);
  Rng rng(17);
  for (auto _ : state) {
    benchmark::DoNotOptimize(augment_batch(ctx, batch, PolicyKind::kStandardDa, rng));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(batch.size()));
}
BENCHMARK(BM_AugmentBatchStandardDa);
