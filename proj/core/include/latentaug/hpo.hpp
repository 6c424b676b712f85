#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "latentaug/downstream.hpp"
#include "latentaug/policy.hpp"

namespace latentaug {

// Ten-step probability grid searched for p_aug: {0.0, 0.1, ..., 0.9}.
inline constexpr int kPaugGridSize = 10;
double paug_grid_value(int index);

// Ranges the search is allowed to explore. Loss weights and the step size
// draw log-uniformly, the step count draws uniformly over the integers.
struct SearchSpace {
  double alpha_lo = 1e-3;
  double alpha_hi = 10.0;
  int k_lo = 1;
  int k_hi = 27;
  double lr_lo = 1e-3;
  double lr_hi = 1e-1;
  // When set, p_aug is searched over the ten-step grid as well; otherwise
  // every trial keeps the base config's value.
  bool include_p_aug = false;

  void validate() const;
};

enum class SearchDirection { kMinimize, kMaximize };

// Objective evaluated per trial. Must be deterministic in (config, seed).
using ObjectiveFn = std::function<double(const PolicyConfig&, std::uint64_t seed)>;

struct Trial {
  int index = 0;
  PolicyConfig config;
  std::string objective;
  double value = 0.0;
  std::uint64_t seed = 0;
  std::string status;  // "ok" or "failed"
};

struct TpeOptions {
  int n_trials = 50;
  int n_startup = 10;     // uniform random trials before the model kicks in
  int n_candidates = 24;  // draws scored per modeled trial
  double gamma = 0.25;    // quantile splitting trials into good/bad
  SearchDirection direction = SearchDirection::kMinimize;
  std::string objective_name = "objective";
  std::uint64_t seed = 1;
  PolicyConfig base_config;  // fields outside the space stay at these values
  std::string log_path;      // optional append-only trial CSV

  void validate() const;
};

struct SearchResult {
  Trial best;
  std::vector<Trial> trials;
};

// Sequential model-based search: after the startup phase, completed trials
// are split at the gamma quantile and candidates are ranked by the kernel
// density ratio good/bad, one dimension at a time. A throwing objective
// marks its trial "failed" and the search moves on; at least one trial has
// to succeed.
SearchResult tpe_search(const SearchSpace& space, const ObjectiveFn& objective,
                        const TpeOptions& options);

struct PaugPoint {
  double p_aug = 0.0;
  double value = 0.0;
};

struct PaugSweep {
  std::vector<PaugPoint> points;  // one per grid step, ascending p_aug
  double best_p_aug = 0.0;
  double best_value = 0.0;
};

// Evaluates the base config at every grid step with a shared seed and
// returns the whole table plus the arg-best point.
PaugSweep paug_grid(const ObjectiveFn& objective, const PolicyConfig& base,
                    SearchDirection direction, std::uint64_t seed);

void save_paug_sweep(const std::string& path, const PaugSweep& sweep);

// Everything the two pipeline objectives need besides the candidate config.
// `extractor` embeds two-channel image pairs (policy guidance and the F1
// manifold); `eval_extractor` embeds single predicted planes for the
// downstream perceptual column.
struct ObjectiveContext {
  const GanModel* model = nullptr;
  const FeatureExtractor* extractor = nullptr;
  const FeatureExtractor* eval_extractor = nullptr;
  const LatentTable* latents = nullptr;
  std::vector<const PairedImage*> train;
  std::vector<const PairedImage*> validation;
  DownstreamConfig downstream;  // seed, log and checkpoint paths are ignored
  TranslatorConfig translator;
  int n_gen = 2000;  // generated samples scored by the F1 objective
  int knn_k = 3;

  void validate() const;
};

// Trains the translator under the candidate policy and returns the masked
// MAE over the validation split. To minimize.
double mae_objective(const ObjectiveContext& ctx, const PolicyConfig& config, std::uint64_t seed);

// Navigates n_gen latents drawn cyclically from the training split,
// generates images, and scores manifold F1 against the validation images
// in the shared feature embedding. To maximize. The keep-real gate does
// not apply here: every sample is navigated.
double f1_objective(const ObjectiveContext& ctx, const PolicyConfig& config, std::uint64_t seed);

// [n_gen,56] embeddings of the navigated samples the F1 objective scores;
// exposed so precision/recall sweeps can reuse the same generation path.
Tensor navigated_embeddings(const ObjectiveContext& ctx, const PolicyConfig& config, Rng& rng);

}  // namespace latentaug
