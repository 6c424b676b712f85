#pragma once

#include <map>
#include <string>
#include <vector>

#include "latentaug/feature_extractor.hpp"
#include "latentaug/gan.hpp"
#include "latentaug/synthdata.hpp"
#include "latentaug/tensor.hpp"

namespace latentaug {

struct InversionConfig {
  int steps = 200;
  double lr = 0.05;
  double pixel_weight = 1.0;
  double perceptual_weight = 1.0;

  void validate() const;
};

struct InversionResult {
  Tensor w_star;  // [latent_dim], best-so-far latent
  double final_loss = 0.0;
  std::vector<double> trajectory;  // loss before each step; size = steps
  double pixel_weight = 0.0;       // loss weights used, kept with the result
  double perceptual_weight = 0.0;
};

// Recovers a latent that regenerates x by Adam on pixel MSE plus
// perceptual distance, starting from the model's latent mean (or w_init
// when given). Deterministic; returns the best latent seen, never a worse
// one than the initialization.
InversionResult invert(const GanModel& model, const FeatureExtractor& extractor,
                       const PairedImage& x, const InversionConfig& config = {},
                       const Tensor* w_init = nullptr);

// Recovered latents for a set of samples, keyed by sample id.
struct LatentTable {
  int dim = 0;
  std::vector<std::string> ids;  // file order
  std::map<std::string, Tensor> latents;

  const Tensor& at(const std::string& sample_id) const;
  // [n,dim] rows in request order; unknown ids are rejected together,
  // listing every missing one.
  Tensor select(const std::vector<std::string>& sample_ids) const;
};

LatentTable invert_dataset(const GanModel& model, const FeatureExtractor& extractor,
                           const std::vector<const PairedImage*>& images,
                           const InversionConfig& config = {});

// Manifest JSON next to a little-endian float64 blob of one row per id.
void save_latent_table(const std::string& path, const LatentTable& table);
LatentTable load_latent_table(const std::string& path);

}  // namespace latentaug
