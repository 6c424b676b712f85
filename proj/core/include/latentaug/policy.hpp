#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "latentaug/feature_extractor.hpp"
#include "latentaug/gan.hpp"
#include "latentaug/inversion.hpp"
#include "latentaug/rng.hpp"
#include "latentaug/synthdata.hpp"
#include "latentaug/tensor.hpp"

namespace latentaug {

enum class PolicyKind { kNone, kLatent, kStandardDa, kStandardSg2 };

// Names used on the command line and in reports: none, latent, standard-da,
// standard-sg2. Unknown names are rejected.
PolicyKind policy_kind_from_name(const std::string& name);
std::string policy_kind_name(PolicyKind kind);

struct PolicyConfig {
  // Loss term weights: total = alpha_f * fidelity - (alpha_pix * pixel +
  // alpha_perc * perceptual + alpha_lat * latent). Minimizing therefore
  // trades realness against diversity.
  double alpha_f = 0.01;
  double alpha_pix = 3.0;
  double alpha_perc = 1.0;
  double alpha_lat = 0.1;
  int k_steps = 9;
  double lr = 0.01;
  // Keep-real threshold: a uniform draw r in [0,1) augments iff r >= p_aug,
  // so 1 disables augmentation entirely and 0 always augments.
  double p_aug = 0.7;
  int ref_subset_size = 64;
  // Perceptual term evaluated on a random square crop of this side
  // (0 = whole image); both sides of each pair share the crop.
  int patch_size = 0;
  // Truncation for the standard-sg2 policy.
  double truncation_psi = 1.0;

  void validate() const;
};

// Parameter sets tuned for the two report objectives.
PolicyConfig mae_objective_preset();
PolicyConfig f1_objective_preset();

// Training images with their recovered latents, aligned row by row.
struct ReferenceSet {
  Tensor images;   // [N,C,H,W]
  Tensor latents;  // [N,d]

  int size() const { return images.numel() ? images.shape()[0] : 0; }
};

ReferenceSet make_reference_set(const std::vector<const PairedImage*>& images,
                                const LatentTable& table);
// Uniform subset without replacement; the full set when subset_size covers
// it.
ReferenceSet sample_reference_subset(const ReferenceSet& full, int subset_size, Rng& rng);

struct PolicyLossValues {
  double total = 0.0;
  double fidelity = 0.0;    // softplus(-D(G(w)))
  double pixel = 0.0;       // mean_j ||G(w)-x_j||^2 / numel
  double perceptual = 0.0;  // mean_j layer-normalized feature MSE
  double latent = 0.0;      // mean_j ||w-w*_j||^2 / d
};

// Loss terms at a single latent ([d] or [1,d]); all four terms are
// reported regardless of weights. Fills grad_out ([d]) with the gradient
// of the weighted total when given. Reference averages are computed
// through a mean/spread decomposition.
PolicyLossValues policy_loss(const Tensor& w, const GanModel& model,
                             const FeatureExtractor& extractor, const ReferenceSet& refs,
                             const PolicyConfig& config, Tensor* grad_out = nullptr);

// Literal per-reference averaging; slow, kept as the checking path.
PolicyLossValues policy_loss_direct(const Tensor& w, const GanModel& model,
                                    const FeatureExtractor& extractor, const ReferenceSet& refs,
                                    const PolicyConfig& config);

// k_steps Adam steps on the weighted total from w_start ([d] or [B,d];
// batched rows descend independently). All-zero weights or k_steps = 0
// return w_start unchanged. patch_rng supplies crop coordinates when
// patch_size is set.
Tensor navigate(const Tensor& w_start, const GanModel& model, const FeatureExtractor& extractor,
                const ReferenceSet& refs, const PolicyConfig& config, Rng* patch_rng = nullptr);

// One step of the classical pipeline: operation name plus its magnitudes.
struct TransformStep {
  std::string op;  // xflip | rotate | frac | deform
  std::vector<double> mags;
};
using TransformSpec = std::vector<TransformStep>;

// Magnitude ranges: rotate degrees in [-3,3], frac per-axis fraction in
// [-0.05,0.05], deform amplitude in [0, resolution/16] pixels.
TransformSpec draw_standard_spec(int resolution, Rng& rng);

// Applies the steps in order to both modalities and the mask (identical
// geometry, bilinear resampling, zero fill), re-thresholding the mask at
// 0.5. rng feeds the deformation field only.
PairedImage standard_da(const PairedImage& x, const TransformSpec& spec, Rng& rng);

// z ~ N(0,I) -> truncate(F(z), psi) -> G; returns [C,R,R].
Tensor standard_sg2_sample(const GanModel& model, Rng& rng, double psi);

// [n,C,R,R] batch; consumes the same normal draws as n sequential
// standard_sg2_sample calls and produces identical images.
Tensor standard_sg2_batch(const GanModel& model, int n, Rng& rng, double psi);

// Everything an augmentation call may need; policies ignore the parts
// they do not use (none needs nothing, standard-da only the config).
struct AugmentContext {
  const GanModel* model = nullptr;
  const FeatureExtractor* extractor = nullptr;
  const LatentTable* latents = nullptr;
  const ReferenceSet* refs = nullptr;
  PolicyConfig config;
};

// The keep-real gate followed by the selected policy's transform. The rng
// is consumed in a fixed order (gate draw, then policy draws) so runs are
// reproducible.
PairedImage augment(const AugmentContext& ctx, const PairedImage& x, PolicyKind kind, Rng& rng);

// Batch variant; the latent policy navigates all fired samples as one
// batch and shares one reference subset per call.
std::vector<PairedImage> augment_batch(const AugmentContext& ctx,
                                       const std::vector<const PairedImage*>& images,
                                       PolicyKind kind, Rng& rng);

}  // namespace latentaug
