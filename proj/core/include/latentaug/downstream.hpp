#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "latentaug/feature_extractor.hpp"
#include "latentaug/graph.hpp"
#include "latentaug/layers.hpp"
#include "latentaug/metrics.hpp"
#include "latentaug/policy.hpp"
#include "latentaug/synthdata.hpp"
#include "latentaug/tensor.hpp"

namespace latentaug {

// Image-to-image translator: modality B in, modality A out. Three-level
// encoder-decoder with skip connections and a small conditional
// discriminator over (B, A) pairs.
struct TranslatorConfig {
  int resolution = 32;
  int base_channels = 16;  // encoder width at full resolution
  int disc_channels = 16;

  void validate() const;
};

struct DownstreamConfig {
  int epochs = 40;
  int batch_size = 16;
  double lr = 2e-4;
  double l1_weight = 100.0;
  std::uint64_t seed = 1;
  std::string log_path;         // append-only CSV when nonempty
  std::string checkpoint_path;  // final checkpoint when nonempty

  void validate() const;
  // The learning rate holds for the first half of training and decays
  // linearly to zero across the second.
  double lr_at_epoch(int epoch) const;
};

struct TranslatorModel {
  TranslatorConfig config;
  std::map<std::string, Tensor> params;
};

TranslatorModel init_translator(const TranslatorConfig& config, std::uint64_t seed);

// Generator graph: b ([N,1,R,R]) -> predicted A ([N,1,R,R], sigmoid
// bounded).
NodeId translator_nodes(Graph& graph, const TranslatorConfig& config, NodeId b,
                        ParamBinder& bind);
// Conditional discriminator over channel-concatenated (B, A) pairs.
std::vector<LayerSpec> translator_disc_stack(const TranslatorConfig& config);

// Plain eval wrapper; accepts [1,R,R] or [N,1,R,R], returns [N,1,R,R].
Tensor translate(const TranslatorModel& model, const Tensor& b);

// Adversarial + weighted L1 training. Every batch runs through the
// augmentation policy before use, so each pair is re-drawn every epoch;
// evaluation never touches the policy.
TranslatorModel train_translator(const std::vector<const PairedImage*>& train,
                                 const AugmentContext& policy, PolicyKind kind,
                                 const DownstreamConfig& config,
                                 const TranslatorConfig& arch = {});

void save_translator(const std::string& path, const TranslatorModel& model);
TranslatorModel load_translator(const std::string& path);

// One evaluated test sample; the per-policy tables these rows form feed
// the rank-based comparisons downstream of evaluation.
struct SampleMetricRow {
  std::string sample_id;
  std::string policy;
  double mae = 0.0;
  double ssim = 0.0;
  double psnr = 0.0;
  double perc = 0.0;
};

// Masked fidelity metrics of one prediction ([R,R]) against the sample's
// modality A. The extractor must take single-channel input.
SampleMetricRow eval_prediction(const PairedImage& sample, const Tensor& predicted_a,
                                const FeatureExtractor& extractor, const std::string& policy);

// Runs the model over the held-out split; exactly one row per sample.
std::vector<SampleMetricRow> eval_translator(const TranslatorModel& model,
                                             const FeatureExtractor& extractor,
                                             const std::vector<const PairedImage*>& test,
                                             const std::string& policy);

// Mean of each metric over rows sharing one policy label.
MetricReport summarize_samples(const std::vector<SampleMetricRow>& rows);

void save_sample_metrics(const std::string& path, const std::vector<SampleMetricRow>& rows);
std::vector<SampleMetricRow> load_sample_metrics(const std::string& path);

}  // namespace latentaug
