#include "latentaug/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "latentaug/checkpoint.hpp"
#include "latentaug/error.hpp"
#include "latentaug/graph.hpp"

namespace latentaug {

namespace {

Tensor as_batch(const Tensor& x, const char* ctx) {
  const Shape& s = x.shape();
  if (s.size() == 4) return x;
  check(s.size() == 3, ctx, ": expected [C,H,W] or [N,C,H,W], got ", shape_str(s));
  Tensor out({1, s[0], s[1], s[2]});
  std::copy(x.data(), x.data() + x.numel(), out.data());
  return out;
}

// Squared distance to each row's k-th nearest neighbor within the same
// set, self excluded.
std::vector<double> knn_radii_sq(const Tensor& feats, int k) {
  int n = feats.shape()[0];
  int d = feats.shape()[1];
  std::vector<double> radii(static_cast<size_t>(n));
  std::vector<double> dist(static_cast<size_t>(n) - 1);
  for (int i = 0; i < n; ++i) {
    size_t idx = 0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      double acc = 0.0;
      for (int c = 0; c < d; ++c) {
        double diff = feats.at(i, c) - feats.at(j, c);
        acc += diff * diff;
      }
      dist[idx++] = acc;
    }
    std::nth_element(dist.begin(), dist.begin() + (k - 1), dist.end());
    radii[static_cast<size_t>(i)] = dist[static_cast<size_t>(k - 1)];
  }
  return radii;
}

// Fraction of query rows lying inside any center's ball.
double covered_fraction(const Tensor& queries, const Tensor& centers,
                        const std::vector<double>& radii_sq) {
  int nq = queries.shape()[0];
  int nc = centers.shape()[0];
  int d = queries.shape()[1];
  int inside = 0;
  for (int i = 0; i < nq; ++i) {
    for (int j = 0; j < nc; ++j) {
      double acc = 0.0;
      for (int c = 0; c < d; ++c) {
        double diff = queries.at(i, c) - centers.at(j, c);
        acc += diff * diff;
        if (acc > radii_sq[static_cast<size_t>(j)]) break;
      }
      if (acc <= radii_sq[static_cast<size_t>(j)]) {
        ++inside;
        break;
      }
    }
  }
  return static_cast<double>(inside) / nq;
}

Eigen::MatrixXd to_matrix(const Tensor& t) {
  int n = t.shape()[0];
  int d = t.shape()[1];
  Eigen::MatrixXd m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = t.at(i, j);
  return m;
}

// Symmetric PSD square root; negative eigenvalues are clipped and their
// magnitude accumulated into clipped_mass.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, double& clipped_mass) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  check(es.info() == Eigen::Success, "frechet_distance: eigendecomposition failed");
  Eigen::VectorXd lam = es.eigenvalues();
  for (int i = 0; i < lam.size(); ++i) {
    if (lam(i) < 0.0) {
      clipped_mass += -lam(i);
      lam(i) = 0.0;
    }
  }
  return es.eigenvectors() * lam.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double perceptual_distance(const Tensor& x1, const Tensor& x2, const FeatureExtractor& extractor) {
  check(x1.same_shape(x2), "perceptual_distance: shapes differ (", shape_str(x1.shape()), " vs ",
        shape_str(x2.shape()), ")");
  Tensor a = as_batch(x1, "perceptual_distance");
  Tensor b = as_batch(x2, "perceptual_distance");
  Graph g;
  std::vector<NodeId> fa = extractor.features(g, g.constant(a, "x1"));
  std::vector<NodeId> fb = extractor.features(g, g.constant(b, "x2"));
  std::vector<double> sizes = extractor.feature_sizes(a.shape()[2], a.shape()[3]);
  NodeId total = -1;
  for (size_t l = 0; l < fa.size(); ++l) {
    NodeId term = g.scale(g.sum_sq(g.sub(fa[l], fb[l])), 1.0 / sizes[l]);
    total = (total < 0) ? term : g.add(total, term);
  }
  g.set_output(total);
  return g.evaluate();
}

PrecisionRecall knn_precision_recall(const Tensor& real_feats, const Tensor& gen_feats, int k) {
  check(real_feats.shape().size() == 2 && gen_feats.shape().size() == 2,
        "knn_precision_recall: expected [N,D] feature rows");
  check(real_feats.shape()[1] == gen_feats.shape()[1],
        "knn_precision_recall: feature dims differ (", real_feats.shape()[1], " vs ",
        gen_feats.shape()[1], ")");
  check(k >= 1, "knn_precision_recall: k must be >= 1, got ", k);
  check(real_feats.shape()[0] >= k + 1 && gen_feats.shape()[0] >= k + 1,
        "knn_precision_recall: need at least k+1 = ", k + 1, " rows per set, got ",
        real_feats.shape()[0], " and ", gen_feats.shape()[0]);

  std::vector<double> real_radii = knn_radii_sq(real_feats, k);
  std::vector<double> gen_radii = knn_radii_sq(gen_feats, k);
  PrecisionRecall pr;
  pr.precision = covered_fraction(gen_feats, real_feats, real_radii);
  pr.recall = covered_fraction(real_feats, gen_feats, gen_radii);
  return pr;
}

double f1(double precision, double recall) {
  check(precision >= 0.0 && precision <= 1.0 && recall >= 0.0 && recall <= 1.0,
        "f1: precision and recall must lie in [0,1], got ", precision, " and ", recall);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

FrechetResult frechet_distance(const Tensor& feats_a, const Tensor& feats_b) {
  check(feats_a.shape().size() == 2 && feats_b.shape().size() == 2, "frechet_distance: expected [N,D] feature rows");
  int d = feats_a.shape()[1];
  check(feats_b.shape()[1] == d, "frechet_distance: feature dims differ (", d, " vs ",
        feats_b.shape()[1], ")");
  int na = feats_a.shape()[0];
  int nb = feats_b.shape()[0];
  check(na >= 2 && nb >= 2, "frechet_distance: need at least 2 rows per set, got ", na, " and ",
        nb);

  Eigen::MatrixXd a = to_matrix(feats_a);
  Eigen::MatrixXd b = to_matrix(feats_b);
  Eigen::RowVectorXd mu_a = a.colwise().mean();
  Eigen::RowVectorXd mu_b = b.colwise().mean();
  Eigen::MatrixXd ca = a.rowwise() - mu_a;
  Eigen::MatrixXd cb = b.rowwise() - mu_b;
  Eigen::MatrixXd cov_a = ca.transpose() * ca / (na - 1.0);
  Eigen::MatrixXd cov_b = cb.transpose() * cb / (nb - 1.0);

  FrechetResult out;
  if (na <= d || nb <= d) {
    out.epsilon = 1e-6;
    cov_a += out.epsilon * Eigen::MatrixXd::Identity(d, d);
    cov_b += out.epsilon * Eigen::MatrixXd::Identity(d, d);
  }

  Eigen::MatrixXd sqrt_a = psd_sqrt(cov_a, out.clipped_mass);
  Eigen::MatrixXd inner = sqrt_a * cov_b * sqrt_a;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner);
  check(es.info() == Eigen::Success, "frechet_distance: eigendecomposition failed");
  double tr_sqrt = 0.0;
  for (int i = 0; i < es.eigenvalues().size(); ++i) {
    double lam = es.eigenvalues()(i);
    if (lam < 0.0) {
      out.clipped_mass += -lam;
      continue;
    }
    tr_sqrt += std::sqrt(lam);
  }
  double value =
      (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
  out.value = std::max(0.0, value);
  return out;
}

ImageMetrics image_metrics(const Tensor& reference, const Tensor& candidate, const Tensor& mask) {
  check(reference.shape().size() == 2, "image_metrics: expected [H,W] images, got ",
        shape_str(reference.shape()));
  check(reference.same_shape(candidate), "image_metrics: reference and candidate shapes differ (",
        shape_str(reference.shape()), " vs ", shape_str(candidate.shape()), ")");
  check(reference.same_shape(mask), "image_metrics: mask shape differs (",
        shape_str(mask.shape()), ")");
  int h = reference.shape()[0];
  int w = reference.shape()[1];
  check(h >= 7 && w >= 7, "image_metrics: images must be at least 7x7 for SSIM, got ", h, "x", w);

  double abs_sum = 0.0, sq_sum = 0.0;
  long inside = 0;
  for (int i = 0; i < reference.numel(); ++i) {
    if (mask[i] <= 0.5) continue;
    double d = reference[i] - candidate[i];
    abs_sum += std::fabs(d);
    sq_sum += d * d;
    ++inside;
  }
  check(inside > 0, "image_metrics: mask selects no pixels");

  ImageMetrics m;
  m.mae = abs_sum / inside;
  double mse = sq_sum / inside;
  m.psnr = mse <= 0.0 ? kPsnrCap : std::min(kPsnrCap, -10.0 * std::log10(mse));

  const double c1 = 0.01 * 0.01;
  const double c2 = 0.03 * 0.03;
  const int win = 7;
  const double inv_n = 1.0 / (win * win);
  double ssim_sum = 0.0;
  long windows = 0;
  for (int y = 0; y + win <= h; ++y) {
    for (int x = 0; x + win <= w; ++x) {
      double sx = 0.0, sy = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
      for (int u = 0; u < win; ++u) {
        for (int v = 0; v < win; ++v) {
          double a = reference.at(y + u, x + v);
          double b = candidate.at(y + u, x + v);
          sx += a;
          sy += b;
          sxx += a * a;
          syy += b * b;
          sxy += a * b;
        }
      }
      double mx = sx * inv_n, my = sy * inv_n;
      double vx = sxx * inv_n - mx * mx;
      double vy = syy * inv_n - my * my;
      double cxy = sxy * inv_n - mx * my;
      ssim_sum += (2.0 * mx * my + c1) * (2.0 * cxy + c2) /
                  ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++windows;
    }
  }
  m.ssim = ssim_sum / windows;
  return m;
}

ThroughputResult measure_throughput(const std::function<void()>& step, int batches, int warmup) {
  check(static_cast<bool>(step), "measure_throughput: step is empty");
  check(batches >= 10, "measure_throughput: need at least 10 timed batches, got ", batches);
  check(warmup >= 0, "measure_throughput: warmup must be >= 0, got ", warmup);
  for (int i = 0; i < warmup; ++i) step();

  ThroughputResult out;
  out.batches = batches;
  out.min_seconds = std::numeric_limits<double>::infinity();
  double total = 0.0;
  for (int i = 0; i < batches; ++i) {
    auto t0 = std::chrono::steady_clock::now();
    step();
    auto t1 = std::chrono::steady_clock::now();
    double s = std::chrono::duration<double>(t1 - t0).count();
    total += s;
    out.min_seconds = std::min(out.min_seconds, s);
    out.max_seconds = std::max(out.max_seconds, s);
  }
  out.mean_seconds = total / batches;
  return out;
}

const std::vector<std::string> kMetricKeys = {"mae",    "ssim",      "psnr",
                                              "perc",   "precision", "recall",
                                              "f1",     "frechet",   "throughput"};

void validate_metric_report(const MetricReport& report) {
  check(!report.policy.empty(), "metric report: policy name is empty");
  for (const auto& [key, value] : report.values) {
    check(std::find(kMetricKeys.begin(), kMetricKeys.end(), key) != kMetricKeys.end(),
          "metric report: unknown metric key '", key, "'");
    check(std::isfinite(value), "metric report: non-finite value for '", key, "'");
  }
  check(std::isfinite(report.wall_seconds) && report.wall_seconds >= 0.0,
        "metric report: bad wall_seconds");
}

void save_metric_report(const std::filesystem::path& path, const MetricReport& report) {
  MetricReport stamped = report;
  if (!stamped.provenance.count("feature_space")) {
    stamped.provenance["feature_space"] =
        "seeded random 3-layer conv extractor; no pretrained weights";
  }
  validate_metric_report(stamped);
  nlohmann::json j;
  j["format"] = "latentaug-metrics-v1";
  j["policy"] = stamped.policy;
  j["seed"] = stamped.seed;
  j["wall_seconds"] = stamped.wall_seconds;
  j["values"] = stamped.values;
  j["provenance"] = stamped.provenance;
  save_json(path.string(), j);
}

MetricReport load_metric_report(const std::filesystem::path& path) {
  nlohmann::json j = load_json(path.string());
  check(j.value("format", "") == std::string("latentaug-metrics-v1"),
        "metric report: unrecognized format in ", path.string());
  MetricReport report;
  report.policy = j.at("policy").get<std::string>();
  report.seed = j.at("seed").get<std::uint64_t>();
  report.wall_seconds = j.at("wall_seconds").get<double>();
  report.values = j.at("values").get<std::map<std::string, double>>();
  report.provenance = j.at("provenance").get<std::map<std::string, std::string>>();
  validate_metric_report(report);
  return report;
}

}  // namespace latentaug
