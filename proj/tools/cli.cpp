#include "cli.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <utility>

#include <CLI11.hpp>
#include <json.hpp>

#include "latentaug/error.hpp"
#include "latentaug/gan.hpp"
#include "latentaug/hpo.hpp"
#include "latentaug/metrics.hpp"
#include "latentaug/rng.hpp"
#include "latentaug/stats.hpp"
#include "latentaug/synthdata.hpp"

namespace latentaug::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string number_str(double v) { return json(v).dump(); }

int to_int(const json& v, const std::string& what) {
  check(v.is_number_integer(), "config: '", what, "' must be an integer");
  return v.get<int>();
}

double to_double(const json& v, const std::string& what) {
  check(v.is_number(), "config: '", what, "' must be a number");
  return v.get<double>();
}

std::string to_str(const json& v, const std::string& what) {
  check(v.is_string(), "config: '", what, "' must be a string");
  return v.get<std::string>();
}

std::uint64_t to_u64(const json& v, const std::string& what) {
  check(v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0),
        "config: '", what, "' must be a non-negative integer");
  return v.get<std::uint64_t>();
}

using FieldMap = std::vector<std::pair<const char*, std::function<void(const json&)>>>;

void read_section(const json& j, const char* name, const FieldMap& fields) {
  check(j.is_object(), "config: section '", name, "' must be an object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const auto& [field, apply] : fields) {
      if (key == field) {
        apply(value);
        known = true;
        break;
      }
    }
    check(known, "config: unknown key '", key, "' in section '", name, "'");
  }
}

PolicyConfig preset_by_name(const std::string& name) {
  if (name == "mae") return mae_objective_preset();
  if (name == "f1") return f1_objective_preset();
  fail("config: unknown policy preset '", name, "' (expected 'mae' or 'f1')");
}

void read_policy_section(const json& j, RunConfig& c) {
  check(j.is_object(), "config: section 'policy' must be an object");
  if (j.contains("preset")) {
    c.policy_preset = to_str(j.at("preset"), "policy.preset");
    c.policy = preset_by_name(c.policy_preset);
  }
  PolicyConfig& p = c.policy;
  read_section(j, "policy",
               {{"preset", [](const json&) {}},
                {"alpha_f", [&](const json& v) { p.alpha_f = to_double(v, "policy.alpha_f"); }},
                {"alpha_pix", [&](const json& v) { p.alpha_pix = to_double(v, "policy.alpha_pix"); }},
                {"alpha_perc", [&](const json& v) { p.alpha_perc = to_double(v, "policy.alpha_perc"); }},
                {"alpha_lat", [&](const json& v) { p.alpha_lat = to_double(v, "policy.alpha_lat"); }},
                {"k_steps", [&](const json& v) { p.k_steps = to_int(v, "policy.k_steps"); }},
                {"lr", [&](const json& v) { p.lr = to_double(v, "policy.lr"); }},
                {"p_aug", [&](const json& v) { p.p_aug = to_double(v, "policy.p_aug"); }},
                {"ref_subset_size",
                 [&](const json& v) { p.ref_subset_size = to_int(v, "policy.ref_subset_size"); }},
                {"patch_size", [&](const json& v) { p.patch_size = to_int(v, "policy.patch_size"); }},
                {"truncation_psi",
                 [&](const json& v) { p.truncation_psi = to_double(v, "policy.truncation_psi"); }}});
}

// Output root precedence: --out flag, then LATENTAUG_OUT, then the config.
struct Env {
  RunConfig config;
  SeedPlan seeds;
  fs::path out;
};

Env make_env(const std::string& config_path, const std::string& out_flag,
             const std::string& seed_flag) {
  Env env;
  if (!config_path.empty()) env.config = load_run_config(config_path);
  if (!seed_flag.empty()) {
    try {
      env.config.master_seed = std::stoull(seed_flag);
    } catch (const std::exception&) {
      fail("--seed must be a non-negative integer, got '", seed_flag, "'");
    }
  }
  if (!out_flag.empty()) {
    env.config.output_dir = out_flag;
  } else if (const char* env_out = std::getenv("LATENTAUG_OUT"); env_out && *env_out) {
    env.config.output_dir = env_out;
  }
  env.seeds = seed_everything(env.config.master_seed);
  env.out = env.config.output_dir;
  return env;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  check(out.good(), "cannot open '", path.string(), "' for writing");
  out << text;
  out.flush();
  check(out.good(), "write to '", path.string(), "' failed");
}

// Resolved config plus the derived seeds go into every artifact directory.
void write_provenance(const Env& env, const fs::path& dir) {
  fs::create_directories(dir);
  write_text(dir / "config.json", resolved_config_json(env.config));
  json seeds;
  seeds["master"] = env.seeds.master;
  seeds["modules"] = json::object();
  for (const auto& [name, value] : env.seeds.modules) seeds["modules"][name] = value;
  write_text(dir / "seeds.json", seeds.dump(2) + "\n");
}

fs::path require_artifact(const fs::path& path, const std::string& producer) {
  check(fs::exists(path), "missing artifact '", path.string(), "' (run `", producer, "` first)");
  return path;
}

fs::path data_manifest(const Env& env) { return env.out / "data" / "dataset.json"; }
fs::path split_path(const Env& env) { return env.out / "data" / "split.json"; }
fs::path gan_path(const Env& env) { return env.out / "gan" / "model.json"; }
fs::path latents_path(const Env& env) { return env.out / "latents" / "table.json"; }
fs::path downstream_dir(const Env& env, const std::string& policy) {
  return env.out / "downstream" / policy;
}

Dataset load_pipeline_dataset(const Env& env) {
  return load_dataset(require_artifact(data_manifest(env), "make-data").string());
}

void save_split(const fs::path& path, const DatasetSplit& split) {
  json j;
  j["seed"] = split.seed;
  j["train"] = split.train;
  j["validation"] = split.validation;
  j["test"] = split.test;
  write_text(path, j.dump(2) + "\n");
}

DatasetSplit load_split(const Env& env) {
  fs::path path = require_artifact(split_path(env), "make-data");
  std::ifstream in(path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail("split file '", path.string(), "': invalid JSON: ", e.what());
  }
  DatasetSplit split;
  auto ids = [&](const char* key) {
    check(j.contains(key) && j.at(key).is_array(), "split file: missing id list '", key, "'");
    return j.at(key).get<std::vector<std::string>>();
  };
  split.seed = to_u64(j.at("seed"), "split.seed");
  split.train = ids("train");
  split.validation = ids("validation");
  split.test = ids("test");
  return split;
}

GanModel load_pipeline_gan(const Env& env) {
  return load_gan(require_artifact(gan_path(env), "train-gan").string());
}

LatentTable load_pipeline_latents(const Env& env) {
  return load_latent_table(require_artifact(latents_path(env), "invert").string());
}

// Owns every resource the augmentation context points at. Filled in place;
// moving it would dangle the context.
struct PolicyBundle {
  GanModel gan;
  std::optional<FeatureExtractor> extractor;
  LatentTable table;
  ReferenceSet refs;
  AugmentContext ctx;

  PolicyBundle(const PolicyBundle&) = delete;
  PolicyBundle& operator=(const PolicyBundle&) = delete;
  PolicyBundle() = default;
};

void fill_policy_bundle(PolicyBundle& bundle, const Env& env, PolicyKind kind,
                        const std::vector<const PairedImage*>& train_images) {
  bundle.ctx.config = env.config.policy;
  if (kind == PolicyKind::kStandardSg2 || kind == PolicyKind::kLatent) {
    bundle.gan = load_pipeline_gan(env);
    bundle.ctx.model = &bundle.gan;
  }
  if (kind == PolicyKind::kLatent) {
    bundle.extractor.emplace(2, env.seeds.at("features"));
    bundle.ctx.extractor = &*bundle.extractor;
    bundle.table = load_pipeline_latents(env);
    bundle.refs = make_reference_set(train_images, bundle.table);
    bundle.ctx.latents = &bundle.table;
    bundle.ctx.refs = &bundle.refs;
  }
}

DownstreamConfig downstream_config(const Env& env, std::uint64_t seed) {
  DownstreamConfig dc;
  dc.epochs = env.config.downstream.epochs;
  dc.batch_size = env.config.downstream.batch_size;
  dc.lr = env.config.downstream.lr;
  dc.l1_weight = env.config.downstream.l1_weight;
  dc.seed = seed;
  return dc;
}

TranslatorConfig translator_config(const Env& env, int resolution) {
  TranslatorConfig arch;
  arch.resolution = resolution;
  arch.base_channels = env.config.downstream.base_channels;
  arch.disc_channels = env.config.downstream.disc_channels;
  return arch;
}

ObjectiveContext objective_context(const Env& env, const GanModel& gan,
                                   const FeatureExtractor& extractor,
                                   const FeatureExtractor& eval_extractor,
                                   const LatentTable& table, const Dataset& ds,
                                   const std::vector<const PairedImage*>& train,
                                   const std::vector<const PairedImage*>& validation) {
  ObjectiveContext ctx;
  ctx.model = &gan;
  ctx.extractor = &extractor;
  ctx.eval_extractor = &eval_extractor;
  ctx.latents = &table;
  ctx.train = train;
  ctx.validation = validation;
  ctx.downstream = downstream_config(env, 0);
  ctx.translator = translator_config(env, ds.resolution);
  ctx.n_gen = env.config.hpo.n_gen;
  ctx.knn_k = env.config.hpo.knn_k;
  return ctx;
}

void cmd_make_data(Env& env, int n_flag, int res_flag) {
  if (n_flag > 0) env.config.dataset.n = n_flag;
  if (res_flag > 0) env.config.dataset.resolution = res_flag;

  Dataset ds = make_dataset(env.config.dataset.n, env.config.dataset.resolution,
                            env.seeds.at("data"));
  DatasetSplit split = split_dataset(ds, env.seeds.at("split"));

  fs::path dir = env.out / "data";
  write_provenance(env, dir);
  save_dataset(ds, (dir / "dataset.json").string());
  save_split(dir / "split.json", split);
  std::cout << "make-data: wrote " << ds.samples.size() << " samples at resolution "
            << ds.resolution << " to " << dir.string() << "\n";
}

void cmd_train_gan(const Env& env) {
  Dataset ds = load_pipeline_dataset(env);
  DatasetSplit split = load_split(env);
  std::vector<const PairedImage*> train = select_images(ds, split.train);

  GanConfig gc;
  gc.latent_dim = env.config.gan.latent_dim;
  gc.resolution = ds.resolution;
  gc.base_channels = env.config.gan.base_channels;
  gc.disc_channels = env.config.gan.disc_channels;

  GanTrainConfig tc;
  tc.batch_size = env.config.gan.batch_size;
  tc.iterations = env.config.gan.iterations;
  tc.lr_g = env.config.gan.lr_g;
  tc.lr_d = env.config.gan.lr_d;
  tc.r1_weight = env.config.gan.r1_weight;
  tc.disc_aug_prob = env.config.gan.disc_aug_prob;
  tc.seed = env.seeds.at("gan");
  tc.w_mean_samples = env.config.gan.w_mean_samples;

  fs::path dir = env.out / "gan";
  write_provenance(env, dir);
  tc.log_path = (dir / "train.csv").string();
  tc.checkpoint_path = gan_path(env).string();
  gan_train(train, gc, tc);
  std::cout << "train-gan: " << tc.iterations << " iterations on " << train.size()
            << " samples, checkpoint at " << tc.checkpoint_path << "\n";
}

void cmd_invert(const Env& env) {
  Dataset ds = load_pipeline_dataset(env);
  DatasetSplit split = load_split(env);
  GanModel gan = load_pipeline_gan(env);
  FeatureExtractor extractor(2, env.seeds.at("features"));
  std::vector<const PairedImage*> train = select_images(ds, split.train);

  fs::path dir = env.out / "latents";
  write_provenance(env, dir);
  LatentTable table = invert_dataset(gan, extractor, train, env.config.inversion);
  save_latent_table(latents_path(env).string(), table);
  std::cout << "invert: recovered " << table.ids.size() << " latents into "
            << latents_path(env).string() << "\n";
}

void apply_preset_flag(Env& env, const std::string& preset_flag) {
  if (preset_flag.empty()) return;
  env.config.policy_preset = preset_flag;
  env.config.policy = preset_by_name(preset_flag);
}

void cmd_augment(Env& env, const std::string& policy_name, const std::string& preset_flag,
                 int count) {
  PolicyKind kind = policy_kind_from_name(policy_name);
  apply_preset_flag(env, preset_flag);

  Dataset ds = load_pipeline_dataset(env);
  DatasetSplit split = load_split(env);
  std::vector<const PairedImage*> train = select_images(ds, split.train);
  PolicyBundle bundle;
  fill_policy_bundle(bundle, env, kind, train);

  if (count <= 0) count = static_cast<int>(train.size());
  Rng rng(env.seeds.at("augment"));

  Dataset out_ds;
  out_ds.resolution = ds.resolution;
  out_ds.seed = env.seeds.at("augment");
  int produced = 0;
  while (produced < count) {
    int b = std::min(64, count - produced);
    std::vector<const PairedImage*> batch;
    for (int i = 0; i < b; ++i)
      batch.push_back(train[static_cast<size_t>(produced + i) % train.size()]);
    std::vector<PairedImage> augmented = augment_batch(bundle.ctx, batch, kind, rng);
    for (PairedImage& im : augmented) {
      std::ostringstream id;
      id << im.sample_id << "-aug" << std::setw(4) << std::setfill('0') << produced;
      im.sample_id = id.str();
      out_ds.samples.push_back(std::move(im));
      ++produced;
    }
  }

  fs::path dir = env.out / "augment" / policy_name;
  write_provenance(env, dir);
  save_dataset(out_ds, (dir / "samples.json").string());
  json summary;
  summary["policy"] = policy_name;
  summary["count"] = count;
  summary["source_split"] = "train";
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  std::cout << "augment: wrote " << count << " samples under " << dir.string() << "\n";
}

void cmd_train_downstream(Env& env, const std::string& policy_name,
                          const std::string& preset_flag) {
  PolicyKind kind = policy_kind_from_name(policy_name);
  apply_preset_flag(env, preset_flag);

  Dataset ds = load_pipeline_dataset(env);
  DatasetSplit split = load_split(env);
  std::vector<const PairedImage*> train = select_images(ds, split.train);
  PolicyBundle bundle;
  fill_policy_bundle(bundle, env, kind, train);

  fs::path dir = downstream_dir(env, policy_name);
  write_provenance(env, dir);
  DownstreamConfig dc = downstream_config(env, env.seeds.at("downstream"));
  dc.log_path = (dir / "train.csv").string();
  dc.checkpoint_path = (dir / "model.json").string();
  train_translator(train, bundle.ctx, kind, dc, translator_config(env, ds.resolution));
  std::cout << "train-downstream: policy " << policy_name << ", checkpoint at "
            << dc.checkpoint_path << "\n";
}

void cmd_eval(const Env& env, const std::string& policy_name) {
  policy_kind_from_name(policy_name);
  Dataset ds = load_pipeline_dataset(env);
  DatasetSplit split = load_split(env);
  fs::path model_path = require_artifact(downstream_dir(env, policy_name) / "model.json",
                                         "train-downstream --policy " + policy_name);
  TranslatorModel model = load_translator(model_path.string());
  FeatureExtractor eval_extractor(1, env.seeds.at("eval-features"));
  std::vector<const PairedImage*> test = select_images(ds, split.test);

  auto t0 = std::chrono::steady_clock::now();
  std::vector<SampleMetricRow> rows = eval_translator(model, eval_extractor, test, policy_name);
  double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  fs::path dir = env.out / "eval" / policy_name;
  write_provenance(env, dir);
  save_sample_metrics((dir / "samples.csv").string(), rows);
  MetricReport report = summarize_samples(rows);
  report.seed = env.config.master_seed;
  report.wall_seconds = wall;
  validate_metric_report(report);
  save_metric_report(dir / "report.json", report);
  std::cout << "eval: policy " << policy_name << ", " << rows.size()
            << " test samples, mae=" << report.values.at("mae") << "\n";
}

void cmd_hpo(const Env& env, const std::string& objective_flag) {
  std::string objective = objective_flag.empty() ? env.config.hpo.objective : objective_flag;
  check(objective == "mae" || objective == "f1", "hpo: unknown objective '", objective,
        "' (expected 'mae' or 'f1')");

  Dataset ds = load_pipeline_dataset(env);
  DatasetSplit split = load_split(env);
  GanModel gan = load_pipeline_gan(env);
  LatentTable table = load_pipeline_latents(env);
  FeatureExtractor extractor(2, env.seeds.at("features"));
  FeatureExtractor eval_extractor(1, env.seeds.at("eval-features"));
  std::vector<const PairedImage*> train = select_images(ds, split.train);
  std::vector<const PairedImage*> validation = select_images(ds, split.validation);
  ObjectiveContext octx =
      objective_context(env, gan, extractor, eval_extractor, table, ds, train, validation);

  SearchSpace space;
  space.include_p_aug = objective == "mae";

  fs::path dir = env.out / "hpo" / objective;
  write_provenance(env, dir);

  TpeOptions options;
  options.n_trials = env.config.hpo.n_trials;
  options.n_startup = env.config.hpo.n_startup;
  options.n_candidates = env.config.hpo.n_candidates;
  options.gamma = env.config.hpo.gamma;
  options.direction =
      objective == "mae" ? SearchDirection::kMinimize : SearchDirection::kMaximize;
  options.objective_name = objective;
  options.seed = env.seeds.at("hpo");
  options.base_config = env.config.policy;
  options.log_path = (dir / "trials.csv").string();

  ObjectiveFn fn;
  if (objective == "mae") {
    fn = [&](const PolicyConfig& c, std::uint64_t s) { return mae_objective(octx, c, s); };
  } else {
    fn = [&](const PolicyConfig& c, std::uint64_t s) { return f1_objective(octx, c, s); };
  }
  SearchResult result = tpe_search(space, fn, options);

  const PolicyConfig& best = result.best.config;
  json out;
  out["objective"] = objective;
  out["trial"] = result.best.index;
  out["value"] = result.best.value;
  out["seed"] = result.best.seed;
  out["config"] = {{"alpha_f", best.alpha_f},
                   {"alpha_pix", best.alpha_pix},
                   {"alpha_perc", best.alpha_perc},
                   {"alpha_lat", best.alpha_lat},
                   {"k_steps", best.k_steps},
                   {"lr", best.lr},
                   {"p_aug", best.p_aug},
                   {"ref_subset_size", best.ref_subset_size},
                   {"patch_size", best.patch_size},
                   {"truncation_psi", best.truncation_psi}};
  write_text(dir / "best.json", out.dump(2) + "\n");
  std::cout << "hpo: objective " << objective << ", best value " << result.best.value
            << " at trial " << result.best.index << "\n";
}

std::vector<std::string> parse_policy_list(const std::string& csv) {
  std::vector<std::string> policies;
  std::istringstream in(csv);
  std::string item;
  while (std::getline(in, item, ',')) {
    check(!item.empty(), "compare: empty policy name in '", csv, "'");
    policy_kind_from_name(item);
    check(std::find(policies.begin(), policies.end(), item) == policies.end(),
          "compare: duplicate policy '", item, "'");
    policies.push_back(item);
  }
  check(!policies.empty(), "compare: no policies given");
  return policies;
}

void cmd_compare(const Env& env, const std::string& policies_csv, int n_seeds) {
  std::vector<std::string> policies = parse_policy_list(policies_csv);
  check(n_seeds >= 1, "compare: --seeds must be >= 1, got ", n_seeds);

  Dataset ds = load_pipeline_dataset(env);
  DatasetSplit split = load_split(env);
  std::vector<const PairedImage*> train = select_images(ds, split.train);
  std::vector<const PairedImage*> test = select_images(ds, split.test);
  FeatureExtractor eval_extractor(1, env.seeds.at("eval-features"));

  fs::path dir = env.out / "compare";
  write_provenance(env, dir);

  std::ofstream summary(dir / "summary.csv", std::ios::trunc);
  check(summary.good(), "compare: cannot open summary.csv");
  summary << "policy,seed,mae,ssim,psnr,perc\n";

  // results[policy][(seed, test sample)] feeds the rank tests.
  std::vector<std::vector<double>> mae_matrix;
  for (const std::string& policy : policies) {
    PolicyKind kind = policy_kind_from_name(policy);
    PolicyBundle bundle;
    fill_policy_bundle(bundle, env, kind, train);
    std::vector<double> mae_row;

    for (int s = 1; s <= n_seeds; ++s) {
      DownstreamConfig dc = downstream_config(
          env, derive_seed(env.seeds.at("compare"), policy + "-seed-" + std::to_string(s)));
      TranslatorModel model =
          train_translator(train, bundle.ctx, kind, dc, translator_config(env, ds.resolution));
      std::vector<SampleMetricRow> rows = eval_translator(model, eval_extractor, test, policy);

      fs::path run_dir = dir / policy / ("seed" + std::to_string(s));
      fs::create_directories(run_dir);
      save_sample_metrics((run_dir / "samples.csv").string(), rows);

      MetricReport report = summarize_samples(rows);
      summary << policy << ',' << s << ',' << number_str(report.values.at("mae")) << ','
              << number_str(report.values.at("ssim")) << ','
              << number_str(report.values.at("psnr")) << ','
              << number_str(report.values.at("perc")) << '\n';
      for (const SampleMetricRow& row : rows) mae_row.push_back(row.mae);
      std::cout << "compare: " << policy << " seed " << s
                << " mae=" << report.values.at("mae") << "\n";
    }
    mae_matrix.push_back(std::move(mae_row));
  }
  summary.flush();
  check(summary.good(), "compare: writing summary.csv failed");

  if (policies.size() < 2) return;

  FriedmanResult fr = friedman(mae_matrix);
  json stats;
  stats["metric"] = "mae";
  stats["alpha"] = 0.05;
  stats["friedman"]["statistic"] = fr.statistic;
  stats["friedman"]["p_value"] = fr.p_value;
  stats["friedman"]["rejected"] = fr.p_value < 0.05;
  for (size_t i = 0; i < policies.size(); ++i)
    stats["friedman"]["avg_ranks"][policies[i]] = fr.avg_ranks[i];

  if (fr.p_value < 0.05) {
    NemenyiResult nm = nemenyi(mae_matrix, 0.05, true);
    stats["nemenyi"]["q_value"] = nm.q_value;
    stats["nemenyi"]["critical_difference"] = nm.critical_difference;
    for (size_t i = 0; i < policies.size(); ++i)
      stats["nemenyi"]["score"][policies[i]] = nm.score[i];

    std::ostringstream table;
    table << "policy";
    for (const std::string& p : policies) table << ',' << p;
    table << ",score\n";
    for (size_t i = 0; i < policies.size(); ++i) {
      table << policies[i];
      for (size_t j = 0; j < policies.size(); ++j) table << ',' << nm.sign[i][j];
      table << ',' << nm.score[i] << '\n';
    }
    write_text(dir / "nemenyi.csv", table.str());
  }
  write_text(dir / "stats.json", stats.dump(2) + "\n");
  std::cout << "compare: friedman p=" << fr.p_value << " over " << fr.n_subjects
            << " subjects\n";
}

struct PrRow {
  std::string label;
  std::string policy;
  std::string detail;
  PrecisionRecall pr;
};

void cmd_report(const Env& env, const std::string& figure) {
  Dataset ds = load_pipeline_dataset(env);
  DatasetSplit split = load_split(env);
  GanModel gan = load_pipeline_gan(env);
  LatentTable table = load_pipeline_latents(env);
  FeatureExtractor extractor(2, env.seeds.at("features"));
  FeatureExtractor eval_extractor(1, env.seeds.at("eval-features"));
  std::vector<const PairedImage*> train = select_images(ds, split.train);
  std::vector<const PairedImage*> validation = select_images(ds, split.validation);

  fs::path dir = env.out / "report";
  write_provenance(env, dir);

  if (figure == "pr-sweep") {
    ObjectiveContext octx =
        objective_context(env, gan, extractor, eval_extractor, table, ds, train, validation);
    octx.n_gen = env.config.report.n_gen;
    octx.knn_k = env.config.report.knn_k;
    Tensor real = extractor.embed(batch_to_tensor(validation));

    // Four policy configurations against the plain generator's
    // truncation sweep.
    std::vector<std::pair<std::string, PolicyConfig>> latent_configs;
    latent_configs.emplace_back("f1-preset", f1_objective_preset());
    latent_configs.emplace_back("mae-preset", mae_objective_preset());
    PolicyConfig short_walk = f1_objective_preset();
    short_walk.k_steps = 3;
    latent_configs.emplace_back("k3", short_walk);
    PolicyConfig no_diversity = f1_objective_preset();
    no_diversity.alpha_lat = 0.0;
    latent_configs.emplace_back("no-diversity", no_diversity);

    std::vector<PrRow> rows;
    const char* labels = "ABCDEFGH";
    for (size_t i = 0; i < latent_configs.size(); ++i) {
      Rng rng(derive_seed(env.seeds.at("report"), "latent-" + latent_configs[i].first));
      Tensor gen = navigated_embeddings(octx, latent_configs[i].second, rng);
      PrecisionRecall pr = knn_precision_recall(real, gen, octx.knn_k);
      rows.push_back({std::string(1, labels[i]), "latent", latent_configs[i].first, pr});
    }
    const double psis[4] = {0.0, 0.3, 0.7, 1.0};
    for (int i = 0; i < 4; ++i) {
      Rng rng(derive_seed(env.seeds.at("report"), "sg2-psi-" + number_str(psis[i])));
      Tensor gen({octx.n_gen, extractor.embed_dim()});
      int produced = 0;
      while (produced < octx.n_gen) {
        int b = std::min(64, octx.n_gen - produced);
        Tensor embedded = extractor.embed(standard_sg2_batch(gan, b, rng, psis[i]));
        for (int64_t k = 0; k < embedded.numel(); ++k)
          gen[static_cast<int64_t>(produced) * extractor.embed_dim() + k] = embedded[k];
        produced += b;
      }
      PrecisionRecall pr = knn_precision_recall(real, gen, octx.knn_k);
      rows.push_back({std::string(1, labels[4 + i]), "standard-sg2", number_str(psis[i]), pr});
    }

    std::ostringstream csv;
    csv << "label,policy,detail,precision,recall\n";
    for (const PrRow& row : rows)
      csv << row.label << ',' << row.policy << ',' << row.detail << ','
          << number_str(row.pr.precision) << ',' << number_str(row.pr.recall) << '\n';
    write_text(dir / "pr_sweep.csv", csv.str());
    std::cout << "report: wrote " << rows.size() << " precision/recall points to "
              << (dir / "pr_sweep.csv").string() << "\n";
    return;
  }

  if (figure == "mae-vs-paug") {
    ObjectiveContext octx =
        objective_context(env, gan, extractor, eval_extractor, table, ds, train, validation);
    ObjectiveFn fn = [&](const PolicyConfig& c, std::uint64_t s) {
      return mae_objective(octx, c, s);
    };
    PaugSweep sweep = paug_grid(fn, env.config.policy, SearchDirection::kMinimize,
                                derive_seed(env.seeds.at("report"), "paug"));
    save_paug_sweep((dir / "mae_vs_paug.csv").string(), sweep);
    std::cout << "report: best p_aug " << sweep.best_p_aug << " (mae " << sweep.best_value
              << "), table at " << (dir / "mae_vs_paug.csv").string() << "\n";
    return;
  }

  fail("report: unknown figure '", figure, "' (expected 'pr-sweep' or 'mae-vs-paug')");
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    fail("config: invalid JSON: ", e.what());
  }
  check(j.is_object(), "config: top level must be an object");

  RunConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "master_seed") {
      c.master_seed = to_u64(value, "master_seed");
    } else if (key == "output_dir") {
      c.output_dir = to_str(value, "output_dir");
    } else if (key == "dataset") {
      read_section(value, "dataset",
                   {{"n", [&](const json& v) { c.dataset.n = to_int(v, "dataset.n"); }},
                    {"resolution", [&](const json& v) {
                       c.dataset.resolution = to_int(v, "dataset.resolution");
                     }}});
    } else if (key == "gan") {
      GanSection& g = c.gan;
      read_section(
          value, "gan",
          {{"latent_dim", [&](const json& v) { g.latent_dim = to_int(v, "gan.latent_dim"); }},
           {"base_channels",
            [&](const json& v) { g.base_channels = to_int(v, "gan.base_channels"); }},
           {"disc_channels",
            [&](const json& v) { g.disc_channels = to_int(v, "gan.disc_channels"); }},
           {"batch_size", [&](const json& v) { g.batch_size = to_int(v, "gan.batch_size"); }},
           {"iterations", [&](const json& v) { g.iterations = to_int(v, "gan.iterations"); }},
           {"lr_g", [&](const json& v) { g.lr_g = to_double(v, "gan.lr_g"); }},
           {"lr_d", [&](const json& v) { g.lr_d = to_double(v, "gan.lr_d"); }},
           {"r1_weight", [&](const json& v) { g.r1_weight = to_double(v, "gan.r1_weight"); }},
           {"disc_aug_prob",
            [&](const json& v) { g.disc_aug_prob = to_double(v, "gan.disc_aug_prob"); }},
           {"w_mean_samples",
            [&](const json& v) { g.w_mean_samples = to_int(v, "gan.w_mean_samples"); }}});
    } else if (key == "inversion") {
      InversionConfig& inv = c.inversion;
      read_section(
          value, "inversion",
          {{"steps", [&](const json& v) { inv.steps = to_int(v, "inversion.steps"); }},
           {"lr", [&](const json& v) { inv.lr = to_double(v, "inversion.lr"); }},
           {"pixel_weight",
            [&](const json& v) { inv.pixel_weight = to_double(v, "inversion.pixel_weight"); }},
           {"perceptual_weight", [&](const json& v) {
              inv.perceptual_weight = to_double(v, "inversion.perceptual_weight");
            }}});
    } else if (key == "policy") {
      read_policy_section(value, c);
    } else if (key == "downstream") {
      DownstreamSection& d = c.downstream;
      read_section(
          value, "downstream",
          {{"epochs", [&](const json& v) { d.epochs = to_int(v, "downstream.epochs"); }},
           {"batch_size",
            [&](const json& v) { d.batch_size = to_int(v, "downstream.batch_size"); }},
           {"lr", [&](const json& v) { d.lr = to_double(v, "downstream.lr"); }},
           {"l1_weight",
            [&](const json& v) { d.l1_weight = to_double(v, "downstream.l1_weight"); }},
           {"base_channels",
            [&](const json& v) { d.base_channels = to_int(v, "downstream.base_channels"); }},
           {"disc_channels", [&](const json& v) {
              d.disc_channels = to_int(v, "downstream.disc_channels");
            }}});
    } else if (key == "hpo") {
      HpoSection& h = c.hpo;
      read_section(
          value, "hpo",
          {{"objective", [&](const json& v) { h.objective = to_str(v, "hpo.objective"); }},
           {"n_trials", [&](const json& v) { h.n_trials = to_int(v, "hpo.n_trials"); }},
           {"n_startup", [&](const json& v) { h.n_startup = to_int(v, "hpo.n_startup"); }},
           {"n_candidates",
            [&](const json& v) { h.n_candidates = to_int(v, "hpo.n_candidates"); }},
           {"gamma", [&](const json& v) { h.gamma = to_double(v, "hpo.gamma"); }},
           {"n_gen", [&](const json& v) { h.n_gen = to_int(v, "hpo.n_gen"); }},
           {"knn_k", [&](const json& v) { h.knn_k = to_int(v, "hpo.knn_k"); }}});
    } else if (key == "report") {
      ReportSection& r = c.report;
      read_section(value, "report",
                   {{"n_gen", [&](const json& v) { r.n_gen = to_int(v, "report.n_gen"); }},
                    {"knn_k", [&](const json& v) { r.knn_k = to_int(v, "report.knn_k"); }}});
    } else {
      fail("config: unknown top-level key '", key, "'");
    }
  }
  c.policy.validate();
  c.inversion.validate();
  check(c.hpo.objective == "mae" || c.hpo.objective == "f1",
        "config: hpo.objective must be 'mae' or 'f1', got '", c.hpo.objective, "'");
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "config: cannot open '", path, "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str());
}

std::string resolved_config_json(const RunConfig& c) {
  json j;
  j["master_seed"] = c.master_seed;
  j["output_dir"] = c.output_dir;
  j["dataset"] = {{"n", c.dataset.n}, {"resolution", c.dataset.resolution}};
  j["gan"] = {{"latent_dim", c.gan.latent_dim},
              {"base_channels", c.gan.base_channels},
              {"disc_channels", c.gan.disc_channels},
              {"batch_size", c.gan.batch_size},
              {"iterations", c.gan.iterations},
              {"lr_g", c.gan.lr_g},
              {"lr_d", c.gan.lr_d},
              {"r1_weight", c.gan.r1_weight},
              {"disc_aug_prob", c.gan.disc_aug_prob},
              {"w_mean_samples", c.gan.w_mean_samples}};
  j["inversion"] = {{"steps", c.inversion.steps},
                    {"lr", c.inversion.lr},
                    {"pixel_weight", c.inversion.pixel_weight},
                    {"perceptual_weight", c.inversion.perceptual_weight}};
  j["policy"] = {{"preset", c.policy_preset},
                 {"alpha_f", c.policy.alpha_f},
                 {"alpha_pix", c.policy.alpha_pix},
                 {"alpha_perc", c.policy.alpha_perc},
                 {"alpha_lat", c.policy.alpha_lat},
                 {"k_steps", c.policy.k_steps},
                 {"lr", c.policy.lr},
                 {"p_aug", c.policy.p_aug},
                 {"ref_subset_size", c.policy.ref_subset_size},
                 {"patch_size", c.policy.patch_size},
                 {"truncation_psi", c.policy.truncation_psi}};
  j["downstream"] = {{"epochs", c.downstream.epochs},
                     {"batch_size", c.downstream.batch_size},
                     {"lr", c.downstream.lr},
                     {"l1_weight", c.downstream.l1_weight},
                     {"base_channels", c.downstream.base_channels},
                     {"disc_channels", c.downstream.disc_channels}};
  j["hpo"] = {{"objective", c.hpo.objective},
              {"n_trials", c.hpo.n_trials},
              {"n_startup", c.hpo.n_startup},
              {"n_candidates", c.hpo.n_candidates},
              {"gamma", c.hpo.gamma},
              {"n_gen", c.hpo.n_gen},
              {"knn_k", c.hpo.knn_k}};
  j["report"] = {{"n_gen", c.report.n_gen}, {"knn_k", c.report.knn_k}};
  return j.dump(2) + "\n";
}

const std::vector<std::string> kSeedModules = {
    "data",     "split", "gan",        "invert", "features", "eval-features",
    "augment",  "downstream", "eval",  "hpo",    "compare",  "report"};

std::uint64_t SeedPlan::at(const std::string& module) const {
  auto it = modules.find(module);
  check(it != modules.end(), "seed plan: unknown module '", module, "'");
  return it->second;
}

SeedPlan seed_everything(std::uint64_t master) {
  SeedPlan plan;
  plan.master = master;
  std::set<std::uint64_t> seen;
  for (const std::string& name : kSeedModules) {
    std::uint64_t seed = derive_seed(master, name);
    check(seen.insert(seed).second, "seed derivation collision on module '", name, "'");
    plan.modules[name] = seed;
  }
  return plan;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"GAN latent-space data augmentation pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_dir, seed_str;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run configuration JSON file");
    cmd->add_option("--out", out_dir, "output root directory");
    cmd->add_option("--seed", seed_str, "master seed override");
  };

  int n_flag = 0, res_flag = 0, count_flag = 0, seeds_flag = 5;
  std::string policy_flag, preset_flag, objective_flag, figure_flag;
  std::string policies_flag = "none,standard-da,standard-sg2,latent";

  CLI::App* make_data = app.add_subcommand("make-data", "generate the phantom dataset");
  add_common(make_data);
  make_data->add_option("--n", n_flag, "number of samples");
  make_data->add_option("--res", res_flag, "image resolution");
  make_data->callback([&] {
    Env env = make_env(config_path, out_dir, seed_str);
    cmd_make_data(env, n_flag, res_flag);
  });

  CLI::App* train_gan = app.add_subcommand("train-gan", "train the generative model");
  add_common(train_gan);
  train_gan->callback([&] { cmd_train_gan(make_env(config_path, out_dir, seed_str)); });

  CLI::App* invert = app.add_subcommand("invert", "recover latents for the training split");
  add_common(invert);
  invert->callback([&] { cmd_invert(make_env(config_path, out_dir, seed_str)); });

  CLI::App* augment = app.add_subcommand("augment", "write augmented samples to disk");
  add_common(augment);
  augment->add_option("--policy", policy_flag, "augmentation policy")->required();
  augment->add_option("--preset", preset_flag, "policy preset (mae or f1)");
  augment->add_option("--count", count_flag, "samples to produce (default: train size)");
  augment->callback([&] {
    Env env = make_env(config_path, out_dir, seed_str);
    cmd_augment(env, policy_flag, preset_flag, count_flag);
  });

  CLI::App* train_down =
      app.add_subcommand("train-downstream", "train the translator under a policy");
  add_common(train_down);
  train_down->add_option("--policy", policy_flag, "augmentation policy")->required();
  train_down->add_option("--preset", preset_flag, "policy preset (mae or f1)");
  train_down->callback([&] {
    Env env = make_env(config_path, out_dir, seed_str);
    cmd_train_downstream(env, policy_flag, preset_flag);
  });

  CLI::App* eval = app.add_subcommand("eval", "evaluate a trained translator on the test split");
  add_common(eval);
  eval->add_option("--policy", policy_flag, "policy whose translator to evaluate")->required();
  eval->callback([&] { cmd_eval(make_env(config_path, out_dir, seed_str), policy_flag); });

  CLI::App* hpo = app.add_subcommand("hpo", "hyper-parameter search over the policy");
  add_common(hpo);
  hpo->add_option("--objective", objective_flag, "mae or f1");
  hpo->callback([&] { cmd_hpo(make_env(config_path, out_dir, seed_str), objective_flag); });

  CLI::App* compare = app.add_subcommand("compare", "train and evaluate policies side by side");
  add_common(compare);
  compare->add_option("--policies", policies_flag, "comma-separated policy list");
  compare->add_option("--seeds", seeds_flag, "training seeds per policy");
  compare->callback([&] {
    cmd_compare(make_env(config_path, out_dir, seed_str), policies_flag, seeds_flag);
  });

  CLI::App* report = app.add_subcommand("report", "emit figure data as CSV");
  add_common(report);
  report->add_option("--figure", figure_flag, "pr-sweep or mae-vs-paug")->required();
  report->callback([&] { cmd_report(make_env(config_path, out_dir, seed_str), figure_flag); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<std::string> full;
  full.push_back("latentaug-cli");
  full.insert(full.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (std::string& s : full) argv.push_back(s.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace latentaug::cli
