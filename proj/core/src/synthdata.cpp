#include "latentaug/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <numbers>

#include <json.hpp>

#include "latentaug/checkpoint.hpp"
#include "latentaug/error.hpp"
#include "latentaug/rng.hpp"

namespace latentaug {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kNoiseSigma = 0.015;

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

PairedImage make_sample(int index, int res, uint64_t dataset_seed) {
  Rng rng(derive_seed(dataset_seed, "sample-" + std::to_string(index)));

  // Geometry in normalized [0,1] coordinates.
  double cx = 0.5 + rng.uniform(-0.06, 0.06);
  double cy = 0.5 + rng.uniform(-0.06, 0.06);
  double ax = rng.uniform(0.28, 0.40);
  double ay = rng.uniform(0.28, 0.40);
  double theta = rng.uniform(0.0, std::numbers::pi);
  double ring_rho = rng.uniform(0.58, 0.72);
  double ring_sigma = rng.uniform(0.045, 0.07);
  double blob_phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
  double blob_rho = rng.uniform(0.0, 0.28);
  double blob_r = rng.uniform(0.07, 0.13);

  double ct = std::cos(theta), st = std::sin(theta);
  // Blob center in image coordinates, placed in the ellipse frame so it
  // stays inside the body.
  double bu = blob_rho * ax * std::cos(blob_phi);
  double bv = blob_rho * ay * std::sin(blob_phi);
  double bx = cx + ct * bu - st * bv;
  double by = cy + st * bu + ct * bv;

  PairedImage img;
  img.sample_id = "s" + std::string(6 - std::min<size_t>(6, std::to_string(index).size()), '0') +
                  std::to_string(index);
  img.resolution = res;
  img.modality_a.resize(static_cast<size_t>(res) * res);
  img.modality_b.resize(static_cast<size_t>(res) * res);
  img.body_mask.resize(static_cast<size_t>(res) * res);

  for (int y = 0; y < res; ++y) {
    for (int x = 0; x < res; ++x) {
      double px = (x + 0.5) / res - cx;
      double py = (y + 0.5) / res - cy;
      double u = (ct * px + st * py) / ax;
      double v = (-st * px + ct * py) / ay;
      double rho = std::sqrt(u * u + v * v);
      double body = rho <= 1.0 ? 1.0 : 0.0;
      double q = std::max(0.0, 1.0 - rho * rho);
      double ring = std::exp(-((rho - ring_rho) / ring_sigma) * ((rho - ring_rho) / ring_sigma));
      double dbx = (x + 0.5) / res - bx;
      double dby = (y + 0.5) / res - by;
      double blob = std::exp(-2.0 * (dbx * dbx + dby * dby) / (blob_r * blob_r));

      double na = rng.normal(0.0, kNoiseSigma);
      double nb = rng.normal(0.0, kNoiseSigma);
      double a = body * (0.30 + 0.25 * q + 0.55 * ring) + na;
      double b = body * (0.18 + 0.42 * q * q + 0.62 * blob - 0.45 * ring) + nb;

      size_t idx = static_cast<size_t>(y) * res + x;
      img.modality_a[idx] = static_cast<float>(std::clamp(a, 0.0, 1.0));
      img.modality_b[idx] = static_cast<float>(std::clamp(b, 0.0, 1.0));
      img.body_mask[idx] = static_cast<float>(body);
    }
  }
  return img;
}

}  // namespace

const PairedImage& Dataset::by_id(const std::string& sample_id) const {
  for (const auto& s : samples) {
    if (s.sample_id == sample_id) return s;
  }
  fail("dataset has no sample '", sample_id, "'");
}

Dataset make_dataset(int n_samples, int resolution, uint64_t seed) {
  check(n_samples >= 1, "make_dataset: need at least one sample, got ", n_samples);
  check(is_pow2(resolution) && resolution >= 16,
        "make_dataset: resolution must be a power of two >= 16, got ", resolution);
  Dataset ds;
  ds.resolution = resolution;
  ds.seed = seed;
  ds.samples.reserve(static_cast<size_t>(n_samples));
  for (int i = 0; i < n_samples; ++i) ds.samples.push_back(make_sample(i, resolution, seed));
  return ds;
}

DatasetSplit split_dataset(const Dataset& dataset, uint64_t seed) {
  int n = static_cast<int>(dataset.samples.size());
  check(n >= 10, "split_dataset: need at least 10 samples, got ", n);

  std::vector<std::string> ids;
  ids.reserve(dataset.samples.size());
  for (const auto& s : dataset.samples) ids.push_back(s.sample_id);
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(ids);

  int n_train = static_cast<int>(std::llround(0.7 * n));
  int n_val = static_cast<int>(std::llround(0.2 * n));
  int n_test = n - n_train - n_val;
  if (n_test < 1) {  // can only happen through rounding on tiny datasets
    --n_train;
    ++n_test;
  }

  DatasetSplit split;
  split.seed = seed;
  split.train.assign(ids.begin(), ids.begin() + n_train);
  split.validation.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
  split.test.assign(ids.begin() + n_train + n_val, ids.end());
  return split;
}

void save_dataset(const Dataset& dataset, const std::string& path) {
  std::string blob_path = with_extension(path, ".bin");
  size_t plane = static_cast<size_t>(dataset.resolution) * dataset.resolution;

  std::vector<float> blob;
  blob.reserve(dataset.samples.size() * plane * 3);
  json ids = json::array();
  for (const auto& s : dataset.samples) {
    check(s.modality_a.size() == plane && s.modality_b.size() == plane &&
              s.body_mask.size() == plane,
          "sample '", s.sample_id, "' has inconsistent raster sizes");
    ids.push_back(s.sample_id);
    blob.insert(blob.end(), s.modality_a.begin(), s.modality_a.end());
    blob.insert(blob.end(), s.modality_b.begin(), s.modality_b.end());
    blob.insert(blob.end(), s.body_mask.begin(), s.body_mask.end());
  }

  json manifest;
  manifest["format"] = "latentaug-dataset-v1";
  manifest["resolution"] = dataset.resolution;
  manifest["seed"] = dataset.seed;
  manifest["dtype"] = "float32le";
  manifest["channels"] = {"modality_a", "modality_b", "body_mask"};
  manifest["blob"] = fs::path(blob_path).filename().string();
  manifest["sample_ids"] = std::move(ids);

  write_blob(blob_path, blob.data(), blob.size() * sizeof(float));
  save_json(path, manifest);
}

Dataset load_dataset(const std::string& path) {
  json manifest = load_json(path);
  check(manifest.value("format", "") == "latentaug-dataset-v1", "'", path,
        "' is not a dataset manifest");
  check(manifest.value("dtype", "") == "float32le", "'", path, "' has unsupported dtype");

  Dataset ds;
  ds.resolution = manifest.at("resolution").get<int>();
  ds.seed = manifest.at("seed").get<uint64_t>();
  check(ds.resolution > 0, "'", path, "' declares non-positive resolution");

  auto ids = manifest.at("sample_ids").get<std::vector<std::string>>();
  size_t plane = static_cast<size_t>(ds.resolution) * ds.resolution;
  std::string blob_path = (fs::path(path).parent_path() / manifest.at("blob").get<std::string>()).string();
  std::vector<char> raw = read_blob(blob_path, ids.size() * plane * 3 * sizeof(float));

  const float* p = reinterpret_cast<const float*>(raw.data());
  for (const auto& id : ids) {
    PairedImage img;
    img.sample_id = id;
    img.resolution = ds.resolution;
    img.modality_a.assign(p, p + plane);
    p += plane;
    img.modality_b.assign(p, p + plane);
    p += plane;
    img.body_mask.assign(p, p + plane);
    p += plane;
    ds.samples.push_back(std::move(img));
  }
  return ds;
}

Tensor image_to_tensor(const PairedImage& image) {
  int res = image.resolution;
  Tensor t{{2, res, res}};
  size_t plane = static_cast<size_t>(res) * res;
  for (size_t i = 0; i < plane; ++i) {
    t[static_cast<int64_t>(i)] = image.modality_a[i];
    t[static_cast<int64_t>(plane + i)] = image.modality_b[i];
  }
  return t;
}

Tensor plane_to_tensor(const std::vector<float>& plane, int resolution) {
  check(resolution >= 1, "plane_to_tensor: bad resolution ", resolution);
  check(plane.size() == static_cast<size_t>(resolution) * resolution,
        "plane_to_tensor: plane has ", plane.size(), " values, expected ",
        static_cast<size_t>(resolution) * resolution);
  Tensor t{{resolution, resolution}};
  for (size_t i = 0; i < plane.size(); ++i) t[static_cast<int64_t>(i)] = plane[i];
  return t;
}

Tensor batch_to_tensor(const std::vector<const PairedImage*>& images) {
  check(!images.empty(), "batch_to_tensor: empty batch");
  int res = images[0]->resolution;
  Tensor t{{static_cast<int>(images.size()), 2, res, res}};
  size_t plane = static_cast<size_t>(res) * res;
  for (size_t n = 0; n < images.size(); ++n) {
    check(images[n]->resolution == res, "batch_to_tensor: mixed resolutions in batch");
    double* dst = t.data() + static_cast<int64_t>(n) * 2 * plane;
    for (size_t i = 0; i < plane; ++i) {
      dst[i] = images[n]->modality_a[i];
      dst[plane + i] = images[n]->modality_b[i];
    }
  }
  return t;
}

PairedImage tensor_to_image(const Tensor& chw, const PairedImage& like) {
  check(chw.rank() == 3 && chw.dim(0) == 2 && chw.dim(1) == like.resolution &&
            chw.dim(2) == like.resolution,
        "tensor_to_image: expected [2,", like.resolution, ",", like.resolution, "], got ",
        shape_str(chw.shape()));
  PairedImage img;
  img.sample_id = like.sample_id;
  img.resolution = like.resolution;
  size_t plane = static_cast<size_t>(like.resolution) * like.resolution;
  img.modality_a.resize(plane);
  img.modality_b.resize(plane);
  for (size_t i = 0; i < plane; ++i) {
    img.modality_a[i] = static_cast<float>(std::clamp(chw[static_cast<int64_t>(i)], 0.0, 1.0));
    img.modality_b[i] = static_cast<float>(std::clamp(chw[static_cast<int64_t>(plane + i)], 0.0, 1.0));
  }
  img.body_mask = like.body_mask;
  return img;
}

std::vector<const PairedImage*> select_images(const Dataset& dataset,
                                              const std::vector<std::string>& ids) {
  std::vector<const PairedImage*> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(&dataset.by_id(id));
  return out;
}

}  // namespace latentaug
