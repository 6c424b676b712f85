#include "latentaug/feature_extractor.hpp"

#include "latentaug/error.hpp"
#include "latentaug/layers.hpp"
#include "latentaug/rng.hpp"

namespace latentaug {

namespace {
constexpr int kChannels[] = {8, 16, 32};
}

FeatureExtractor::FeatureExtractor(int in_channels, std::uint64_t seed)
    : in_channels_(in_channels), seed_(seed) {
  check(in_channels >= 1, "feature extractor: in_channels must be >= 1, got ", in_channels);
  int ci = in_channels;
  for (int l = 0; l < 3; ++l) {
    Rng rng(derive_seed(seed, "extractor-layer-" + std::to_string(l)));
    weights_.push_back(he_normal({kChannels[l], ci, 4, 4}, rng));
    ci = kChannels[l];
  }
}

std::vector<NodeId> FeatureExtractor::features(Graph& graph, NodeId x) const {
  const Shape& s = graph.shape(x);
  check(s.size() == 4, "feature extractor: expected [N,C,H,W] input, got ", shape_str(s));
  check(s[1] == in_channels_, "feature extractor: built for ", in_channels_,
        " channels, input has ", s[1]);
  check(s[2] % 8 == 0 && s[3] % 8 == 0,
        "feature extractor: spatial dims must be divisible by 8, got ", shape_str(s));
  std::vector<NodeId> out;
  NodeId cur = x;
  for (int l = 0; l < 3; ++l) {
    NodeId w = graph.constant(weights_[static_cast<size_t>(l)],
                              "extractor_w" + std::to_string(l));
    cur = graph.leaky_relu(graph.conv2d(cur, w, 2, 1), 0.2);
    out.push_back(cur);
  }
  return out;
}

std::vector<double> FeatureExtractor::feature_sizes(int h, int w) const {
  check(h % 8 == 0 && w % 8 == 0,
        "feature extractor: spatial dims must be divisible by 8, got ", h, "x", w);
  std::vector<double> sizes;
  for (int l = 0; l < 3; ++l) {
    int f = 2 << l;  // 2, 4, 8
    sizes.push_back(static_cast<double>(h / f) * (w / f) * kChannels[l]);
  }
  return sizes;
}

Tensor FeatureExtractor::embed(const Tensor& batch) const {
  const Shape& s = batch.shape();
  check(s.size() == 4, "embed: expected [N,C,H,W] input, got ", shape_str(s));
  Graph g;
  NodeId x = g.input("x", s, /*differentiable=*/false);
  std::vector<NodeId> feats = features(g, x);
  std::vector<NodeId> pooled;
  for (NodeId f : feats) {
    NodeId p = f;
    while (g.shape(p)[2] > 1) p = g.avg_pool2x(p);
    pooled.push_back(p);
  }
  NodeId cat = pooled[0];
  for (size_t i = 1; i < pooled.size(); ++i) cat = g.concat_chan(cat, pooled[i]);
  NodeId flat = g.reshape(cat, {s[0], embed_dim()});
  g.set_output(g.sum(flat));
  g.bind("x", batch);
  g.evaluate();
  return g.value(flat);
}

}  // namespace latentaug
