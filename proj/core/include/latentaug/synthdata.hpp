#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "latentaug/tensor.hpp"

namespace latentaug {

// Paired two-modality phantom slices. Both modalities are derived from the
// same elliptical-body geometry: a bright ring at a sample-specific radius
// shows up only in modality A (strongly darkened in B), an interior blob
// only in modality B. With both structures present the A<->B mapping is
// learnable from shape cues but not a pointwise intensity remap.
struct PairedImage {
  std::string sample_id;
  int resolution = 0;
  std::vector<float> modality_a;  // row-major [res*res], intensities in [0,1]
  std::vector<float> modality_b;
  std::vector<float> body_mask;   // binary {0,1}
};

struct Dataset {
  int resolution = 0;
  uint64_t seed = 0;
  std::vector<PairedImage> samples;

  const PairedImage& by_id(const std::string& sample_id) const;
};

struct DatasetSplit {
  uint64_t seed = 0;
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
};

// Deterministic phantom generator: same (n, resolution, seed) gives
// identical pixels. Resolution must be a power of two >= 16.
Dataset make_dataset(int n_samples, int resolution, uint64_t seed);

// 70/20/10 by count with largest-remainder rounding; needs >= 10 samples.
DatasetSplit split_dataset(const Dataset& dataset, uint64_t seed);

// JSON manifest plus float32 little-endian blob at the .bin sibling path.
void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);

// [2,res,res] double tensor (modality A then B).
Tensor image_to_tensor(const PairedImage& image);
// One [res,res] tensor from a raw row-major plane (modality or mask).
Tensor plane_to_tensor(const std::vector<float>& plane, int resolution);
// [N,2,res,res] batch.
Tensor batch_to_tensor(const std::vector<const PairedImage*>& images);
// Inverse of image_to_tensor; the mask is taken from `like`, re-thresholded
// membership is the caller's business.
PairedImage tensor_to_image(const Tensor& chw, const PairedImage& like);

std::vector<const PairedImage*> select_images(const Dataset& dataset,
                                              const std::vector<std::string>& ids);

}  // namespace latentaug
