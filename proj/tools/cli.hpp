#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "latentaug/downstream.hpp"
#include "latentaug/inversion.hpp"
#include "latentaug/policy.hpp"

namespace latentaug::cli {

// Sections of the run configuration file. Each maps to one pipeline stage;
// resolution lives with the dataset and flows into the GAN and translator
// when the artifacts are loaded.
struct DatasetSection {
  int n = 200;
  int resolution = 32;
};

struct GanSection {
  int latent_dim = 64;
  int base_channels = 64;
  int disc_channels = 16;
  int batch_size = 16;
  int iterations = 600;
  double lr_g = 0.0025;
  double lr_d = 0.0025;
  double r1_weight = 0.8192;
  double disc_aug_prob = 0.2;
  int w_mean_samples = 10000;
};

struct DownstreamSection {
  int epochs = 40;
  int batch_size = 16;
  double lr = 2e-4;
  double l1_weight = 100.0;
  int base_channels = 16;
  int disc_channels = 16;
};

struct HpoSection {
  std::string objective = "mae";
  int n_trials = 50;
  int n_startup = 10;
  int n_candidates = 24;
  double gamma = 0.25;
  int n_gen = 2000;
  int knn_k = 3;
};

struct ReportSection {
  int n_gen = 500;
  int knn_k = 3;
};

struct RunConfig {
  std::uint64_t master_seed = 1;
  std::string output_dir = "runs";
  DatasetSection dataset;
  GanSection gan;
  InversionConfig inversion;
  std::string policy_preset = "mae";
  PolicyConfig policy = mae_objective_preset();
  DownstreamSection downstream;
  HpoSection hpo;
  ReportSection report;
};

// Strict parser: unknown keys anywhere reject the whole file. The policy
// section starts from its named preset, then applies field overrides.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

// Full round-trippable dump with every default materialized; written into
// each command's artifact directory.
std::string resolved_config_json(const RunConfig& config);

// Modules with their own derived seed, in derivation order.
extern const std::vector<std::string> kSeedModules;

struct SeedPlan {
  std::uint64_t master = 0;
  std::map<std::string, std::uint64_t> modules;

  std::uint64_t at(const std::string& module) const;
};

// Hash-derived per-module seeds, checked pairwise distinct.
SeedPlan seed_everything(std::uint64_t master);

// Full command dispatcher; argv follows main() conventions. Returns the
// process exit status (0 on success; failures print to stderr).
int run_cli(int argc, char** argv);
int run_cli(const std::vector<std::string>& args);  // args without argv[0]

}  // namespace latentaug::cli
