#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "latentaug/graph.hpp"
#include "latentaug/layers.hpp"
#include "latentaug/synthdata.hpp"
#include "latentaug/tensor.hpp"

namespace latentaug {

// Architecture knobs shared by the mapping network, generator, and
// discriminator. The generator grows from a 4x4 seed to the target
// resolution; the discriminator shrinks back down with stride-2 convs.
struct GanConfig {
  int latent_dim = 64;
  int resolution = 32;
  int channels = 2;
  int base_channels = 64;  // generator channels at the 4x4 stage
  int disc_channels = 16;  // discriminator channels after the first conv

  void validate() const;
  int num_blocks() const;  // upsampling (and downsampling) stages
};

struct GanTrainConfig {
  int batch_size = 16;
  int iterations = 600;
  double lr_g = 0.0025;
  double lr_d = 0.0025;
  double r1_weight = 0.8192;
  double disc_aug_prob = 0.2;
  std::uint64_t seed = 1;
  int w_mean_samples = 10000;
  std::string log_path;         // append-only CSV when nonempty
  std::string checkpoint_path;  // final checkpoint when nonempty

  void validate() const;
};

// Trained (or freshly initialized) model. Immutable once published;
// inference-side consumers may share one instance across threads.
struct GanModel {
  GanConfig config;
  std::map<std::string, Tensor> params;
  Tensor w_mean;  // [latent_dim], zero until gan_train estimates it
  int w_mean_samples = 0;
};

GanModel init_gan(const GanConfig& config, std::uint64_t seed);

// Graph builders; parameters come through the binder so the same code
// serves frozen inference and trainable graphs.
NodeId mapping_nodes(Graph& graph, const GanConfig& config, NodeId z, ParamBinder& bind);
NodeId generator_nodes(Graph& graph, const GanConfig& config, NodeId w, ParamBinder& bind);
// Discriminator as a layer stack so gradient-penalty graphs can replay it.
std::vector<LayerSpec> discriminator_stack(const GanConfig& config);

// Plain eval wrappers over the builders. Inputs take [dim] / [C,H,W] or
// batched [N,dim] / [N,C,H,W]; outputs are always batched.
Tensor mapping_forward(const GanModel& model, const Tensor& z);
Tensor generate(const GanModel& model, const Tensor& w);     // [N,2,R,R] in [0,1]
Tensor discriminate(const GanModel& model, const Tensor& x);  // [N] logits

// Mean squared gradient norm of the discriminator output w.r.t. input
// pixels over the batch.
double r1_penalty(const GanModel& model, const Tensor& x_batch);

// w' = w_mean + psi * (w - w_mean), psi in [0,1].
Tensor truncate(const Tensor& w, const Tensor& w_mean, double psi);

GanModel gan_train(const std::vector<const PairedImage*>& train, const GanConfig& config,
                   const GanTrainConfig& train_config);

void save_gan(const std::string& path, const GanModel& model);
GanModel load_gan(const std::string& path);

}  // namespace latentaug
