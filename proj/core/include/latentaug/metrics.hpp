#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>

#include "latentaug/feature_extractor.hpp"
#include "latentaug/tensor.hpp"

namespace latentaug {

// Layer-normalized squared feature distance between two images or batches
// of equal shape ([C,H,W] or [N,C,H,W]): sum over layers of
// ||phi_l(x1) - phi_l(x2)||^2 / (rows*cols*channels).
double perceptual_distance(const Tensor& x1, const Tensor& x2, const FeatureExtractor& extractor);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

// Manifold precision/recall over [N,D] feature rows: a point counts as
// covered when it falls inside any ball centered on the other set's points
// with radius equal to that point's k-th nearest neighbor (within its own
// set, self excluded). Both sets need at least k+1 rows.
PrecisionRecall knn_precision_recall(const Tensor& real_feats, const Tensor& gen_feats, int k);

// Harmonic mean of precision and recall; 0 when both are 0.
double f1(double precision, double recall);

struct FrechetResult {
  double value = 0.0;
  // Diagonal regularizer added to both covariances (0 when sample counts
  // exceed the feature dimension).
  double epsilon = 0.0;
  // Total magnitude of negative eigenvalues clipped while taking the
  // matrix square root.
  double clipped_mass = 0.0;
};

// Gaussian-approximation distance between two feature sets [N,D]:
// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2(Sa Sb)^{1/2}).
FrechetResult frechet_distance(const Tensor& feats_a, const Tensor& feats_b);

struct ImageMetrics {
  double mae = 0.0;
  double ssim = 0.0;
  double psnr = 0.0;
};

// PSNR reported for a perfect (or near-perfect) match instead of infinity.
inline constexpr double kPsnrCap = 99.0;

// Fidelity metrics for one [H,W] image pair. MAE and PSNR are evaluated
// over mask=1 pixels only; SSIM slides a 7x7 uniform window over the full
// image (k1=0.01, k2=0.03, dynamic range 1).
ImageMetrics image_metrics(const Tensor& reference, const Tensor& candidate, const Tensor& mask);

struct ThroughputResult {
  double mean_seconds = 0.0;
  double min_seconds = 0.0;
  double max_seconds = 0.0;
  int batches = 0;
};

// Mean wall-clock seconds per invocation of step, measured over at least
// 10 timed runs after discarding warm-up runs.
ThroughputResult measure_throughput(const std::function<void()>& step, int batches = 10,
                                    int warmup = 2);

// Named scalar results for one evaluated policy/run. Keys are restricted
// to a fixed vocabulary so downstream tables never drift.
struct MetricReport {
  std::string policy;
  std::uint64_t seed = 0;
  double wall_seconds = 0.0;
  std::map<std::string, double> values;
  std::map<std::string, std::string> provenance;
};

extern const std::vector<std::string> kMetricKeys;

// Throws on unknown keys or non-finite values.
void validate_metric_report(const MetricReport& report);

// JSON round trip; saving stamps the feature-space provenance note if it
// is not already present.
void save_metric_report(const std::filesystem::path& path, const MetricReport& report);
MetricReport load_metric_report(const std::filesystem::path& path);

}  // namespace latentaug
