#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "latentaug/graph.hpp"
#include "latentaug/tensor.hpp"

namespace latentaug {

// Fixed random convolutional feature space shared by the perceptual
// distance, precision/recall manifolds, and the Fréchet distance. Three
// stride-2 conv layers (8, 16, 32 channels, leaky relu 0.2) with He-normal
// weights drawn once from the seed; the weights never train.
class FeatureExtractor {
 public:
  FeatureExtractor(int in_channels, std::uint64_t seed);

  int in_channels() const { return in_channels_; }
  std::uint64_t seed() const { return seed_; }
  int num_layers() const { return 3; }
  // Width of embed() rows: total channels across layers (8+16+32).
  int embed_dim() const { return 56; }

  // Appends the conv stack to an existing graph, reading images from node
  // x ([N,C,H,W], spatial dims divisible by 8). Returns the
  // post-activation node per layer; weights enter as constants so
  // gradients flow into x only.
  std::vector<NodeId> features(Graph& graph, NodeId x) const;

  // Per-layer normalizer rows*cols*channels for images of the given size.
  std::vector<double> feature_sizes(int h, int w) const;

  // [N,C,H,W] -> [N,56] embeddings: each layer's channels are global
  // average pooled and the pools concatenated. H and W must be powers of
  // two (>= 8) so the pooling chain reaches 1x1.
  Tensor embed(const Tensor& batch) const;

  const std::vector<Tensor>& weights() const { return weights_; }

 private:
  int in_channels_;
  std::uint64_t seed_;
  std::vector<Tensor> weights_;  // [Co,Ci,4,4] per layer
};

}  // namespace latentaug
