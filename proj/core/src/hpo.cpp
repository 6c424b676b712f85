#include "latentaug/hpo.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "latentaug/error.hpp"
#include "latentaug/rng.hpp"
#include "latentaug/synthdata.hpp"

namespace latentaug {

namespace {

std::string number_str(double v) { return nlohmann::json(v).dump(); }

bool better(double a, double b, SearchDirection dir) {
  return dir == SearchDirection::kMinimize ? a < b : a > b;
}

// One searched dimension in its sampling space: loss weights and the step
// size live in log space, the step count in plain units.
struct Dim {
  const char* name;
  double lo;
  double hi;
  bool log_scale;
  bool integer;
};

std::vector<Dim> space_dims(const SearchSpace& s) {
  std::vector<Dim> dims;
  for (const char* name : {"alpha_f", "alpha_pix", "alpha_perc", "alpha_lat"})
    dims.push_back({name, std::log(s.alpha_lo), std::log(s.alpha_hi), true, false});
  dims.push_back({"k_steps", static_cast<double>(s.k_lo), static_cast<double>(s.k_hi), false, true});
  dims.push_back({"lr", std::log(s.lr_lo), std::log(s.lr_hi), true, false});
  return dims;
}

// Coordinates of one trial: the continuous dims in sampling space plus the
// grid index for p_aug (-1 when p_aug is not searched).
struct Coords {
  std::vector<double> x;
  int paug_idx = -1;
};

double clamp(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

PolicyConfig config_from_coords(const Coords& c, const SearchSpace& space,
                                const PolicyConfig& base) {
  PolicyConfig out = base;
  double* fields[] = {&out.alpha_f, &out.alpha_pix, &out.alpha_perc, &out.alpha_lat};
  for (int i = 0; i < 4; ++i)
    *fields[i] = clamp(std::exp(c.x[static_cast<size_t>(i)]), space.alpha_lo, space.alpha_hi);
  out.k_steps = static_cast<int>(std::lround(c.x[4]));
  out.lr = clamp(std::exp(c.x[5]), space.lr_lo, space.lr_hi);
  if (c.paug_idx >= 0) out.p_aug = paug_grid_value(c.paug_idx);
  return out;
}

double sample_dim_uniform(const Dim& d, Rng& rng) {
  if (d.integer)
    return static_cast<double>(
        rng.uniform_int(static_cast<int>(d.lo), static_cast<int>(d.hi)));
  return d.lo + rng.uniform() * (d.hi - d.lo);
}

Coords sample_uniform(const std::vector<Dim>& dims, bool with_paug, Rng& rng) {
  Coords c;
  for (const Dim& d : dims) c.x.push_back(sample_dim_uniform(d, rng));
  if (with_paug) c.paug_idx = rng.uniform_int(0, kPaugGridSize - 1);
  return c;
}

// Parzen mixture over the observed points plus one wide prior component at
// the range midpoint. Per-point bandwidths are the larger gap to the
// adjacent neighbors (prior included), clipped to the range, so density
// stays fat where observations are sparse and sharp where they pile up.
struct Kde {
  std::vector<double> centers;
  std::vector<double> widths;
};

Kde build_kde(const std::vector<double>& xs, const Dim& d) {
  double range = d.hi - d.lo;
  std::vector<double> centers = xs;
  centers.push_back((d.lo + d.hi) / 2.0);
  size_t prior = centers.size() - 1;

  std::vector<size_t> order(centers.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return centers[a] < centers[b]; });

  double min_width = range / std::min(100.0, static_cast<double>(centers.size()) + 1.0);
  std::vector<double> widths(centers.size());
  for (size_t r = 0; r < order.size(); ++r) {
    double left = r > 0 ? centers[order[r]] - centers[order[r - 1]] : 0.0;
    double right = r + 1 < order.size() ? centers[order[r + 1]] - centers[order[r]] : 0.0;
    double w = std::max(left, right);
    widths[order[r]] = std::min(std::max(w, min_width), range);
  }
  widths[prior] = range;
  return {centers, widths};
}

double log_mixture_pdf(double x, const Kde& kde) {
  size_t n = kde.centers.size();
  std::vector<double> exponents(n);
  double top = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < n; ++i) {
    double z = (x - kde.centers[i]) / kde.widths[i];
    exponents[i] = -0.5 * z * z - std::log(kde.widths[i]);
    top = std::max(top, exponents[i]);
  }
  double acc = 0.0;
  for (double e : exponents) acc += std::exp(e - top);
  return top + std::log(acc / (static_cast<double>(n) * std::sqrt(2.0 * std::numbers::pi)));
}

double sample_mixture(const Kde& kde, const Dim& d, Rng& rng) {
  int pick = rng.uniform_int(0, static_cast<int>(kde.centers.size()) - 1);
  double x = clamp(kde.centers[static_cast<size_t>(pick)] +
                       rng.normal() * kde.widths[static_cast<size_t>(pick)],
                   d.lo, d.hi);
  if (d.integer) x = std::lround(x);
  return x;
}

// Add-one smoothed category frequencies for the p_aug grid.
std::vector<double> grid_probs(const std::vector<int>& indices) {
  std::vector<double> p(kPaugGridSize, 1.0);
  for (int i : indices) p[static_cast<size_t>(i)] += 1.0;
  double total = static_cast<double>(indices.size() + kPaugGridSize);
  for (double& v : p) v /= total;
  return p;
}

int sample_grid(const std::vector<double>& probs, Rng& rng) {
  double u = rng.uniform();
  double acc = 0.0;
  for (int i = 0; i < kPaugGridSize; ++i) {
    acc += probs[static_cast<size_t>(i)];
    if (u < acc) return i;
  }
  return kPaugGridSize - 1;
}

const char* kLogHeader =
    "trial,objective,status,value,alpha_f,alpha_pix,alpha_perc,alpha_lat,k_steps,lr,p_aug,seed";

void append_trial_row(std::ofstream& log, const Trial& t) {
  log << t.index << ',' << t.objective << ',' << t.status << ','
      << (t.status == "ok" ? number_str(t.value) : std::string()) << ','
      << number_str(t.config.alpha_f) << ',' << number_str(t.config.alpha_pix) << ','
      << number_str(t.config.alpha_perc) << ',' << number_str(t.config.alpha_lat) << ','
      << t.config.k_steps << ',' << number_str(t.config.lr) << ','
      << number_str(t.config.p_aug) << ',' << t.seed << '\n';
  log.flush();
}

}  // namespace

double paug_grid_value(int index) {
  check(index >= 0 && index < kPaugGridSize, "paug grid: index ", index, " outside [0,",
        kPaugGridSize - 1, "]");
  return static_cast<double>(index) / 10.0;
}

void SearchSpace::validate() const {
  check(alpha_lo > 0.0 && alpha_hi > alpha_lo, "search space: alpha range [", alpha_lo, ",",
        alpha_hi, "] is invalid");
  check(k_lo >= 0 && k_hi >= k_lo, "search space: k range [", k_lo, ",", k_hi, "] is invalid");
  check(lr_lo > 0.0 && lr_hi > lr_lo, "search space: lr range [", lr_lo, ",", lr_hi,
        "] is invalid");
}

void TpeOptions::validate() const {
  check(n_trials >= 1, "tpe options: n_trials must be >= 1, got ", n_trials);
  check(n_startup >= 1, "tpe options: n_startup must be >= 1, got ", n_startup);
  check(n_candidates >= 1, "tpe options: n_candidates must be >= 1, got ", n_candidates);
  check(gamma > 0.0 && gamma < 1.0, "tpe options: gamma must lie in (0,1), got ", gamma);
  base_config.validate();
}

SearchResult tpe_search(const SearchSpace& space, const ObjectiveFn& objective,
                        const TpeOptions& options) {
  space.validate();
  options.validate();
  check(static_cast<bool>(objective), "tpe_search: objective is empty");

  std::vector<Dim> dims = space_dims(space);
  Rng rng(options.seed);

  std::ofstream log;
  if (!options.log_path.empty()) {
    namespace fs = std::filesystem;
    bool fresh = !fs::exists(options.log_path) || fs::file_size(options.log_path) == 0;
    log.open(options.log_path, std::ios::app);
    check(log.good(), "tpe_search: cannot open trial log '", options.log_path, "'");
    if (fresh) log << kLogHeader << '\n';
  }

  SearchResult result;
  std::vector<Coords> coords;   // aligned with result.trials
  std::vector<size_t> done;     // indices of completed trials
  int best_at = -1;

  for (int t = 0; t < options.n_trials; ++t) {
    Coords c;
    if (static_cast<int>(done.size()) < options.n_startup) {
      c = sample_uniform(dims, space.include_p_aug, rng);
    } else {
      // Split completed trials at the gamma quantile, best first.
      std::vector<size_t> order = done;
      std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return better(result.trials[a].value, result.trials[b].value, options.direction);
      });
      size_t n_good = static_cast<size_t>(
          std::ceil(options.gamma * static_cast<double>(order.size())));
      n_good = std::min(std::max<size_t>(n_good, 1), order.size() - 1);

      std::vector<std::vector<double>> good_x(dims.size()), bad_x(dims.size());
      std::vector<int> good_p, bad_p;
      for (size_t rank = 0; rank < order.size(); ++rank) {
        const Coords& prev = coords[order[rank]];
        for (size_t d = 0; d < dims.size(); ++d)
          (rank < n_good ? good_x[d] : bad_x[d]).push_back(prev.x[d]);
        if (space.include_p_aug) (rank < n_good ? good_p : bad_p).push_back(prev.paug_idx);
      }
      std::vector<Kde> good_kde, bad_kde;
      for (size_t d = 0; d < dims.size(); ++d) {
        good_kde.push_back(build_kde(good_x[d], dims[d]));
        bad_kde.push_back(build_kde(bad_x[d], dims[d]));
      }
      std::vector<double> gp = grid_probs(good_p), bp = grid_probs(bad_p);

      double best_score = -std::numeric_limits<double>::infinity();
      for (int cand = 0; cand < options.n_candidates; ++cand) {
        Coords trial_c;
        double score = 0.0;
        for (size_t d = 0; d < dims.size(); ++d) {
          double x = sample_mixture(good_kde[d], dims[d], rng);
          trial_c.x.push_back(x);
          score += log_mixture_pdf(x, good_kde[d]) - log_mixture_pdf(x, bad_kde[d]);
        }
        if (space.include_p_aug) {
          trial_c.paug_idx = sample_grid(gp, rng);
          score += std::log(gp[static_cast<size_t>(trial_c.paug_idx)]) -
                   std::log(bp[static_cast<size_t>(trial_c.paug_idx)]);
        }
        if (score > best_score) {
          best_score = score;
          c = trial_c;
        }
      }
    }

    Trial trial;
    trial.index = t;
    trial.config = config_from_coords(c, space, options.base_config);
    trial.objective = options.objective_name;
    trial.seed = derive_seed(options.seed, "trial-" + std::to_string(t));
    try {
      trial.value = objective(trial.config, trial.seed);
      check(std::isfinite(trial.value), "objective returned non-finite value ", trial.value);
      trial.status = "ok";
    } catch (const std::exception&) {
      trial.value = std::numeric_limits<double>::quiet_NaN();
      trial.status = "failed";
    }

    result.trials.push_back(trial);
    coords.push_back(c);
    if (trial.status == "ok") {
      done.push_back(result.trials.size() - 1);
      if (best_at < 0 || better(trial.value, result.trials[static_cast<size_t>(best_at)].value,
                                options.direction))
        best_at = t;
    }
    if (log.is_open()) append_trial_row(log, trial);
  }

  check(best_at >= 0, "tpe_search: all ", options.n_trials, " trials failed");
  result.best = result.trials[static_cast<size_t>(best_at)];
  return result;
}

PaugSweep paug_grid(const ObjectiveFn& objective, const PolicyConfig& base,
                    SearchDirection direction, std::uint64_t seed) {
  check(static_cast<bool>(objective), "paug_grid: objective is empty");
  base.validate();
  PaugSweep sweep;
  for (int i = 0; i < kPaugGridSize; ++i) {
    PolicyConfig config = base;
    config.p_aug = paug_grid_value(i);
    double value = objective(config, seed);
    check(std::isfinite(value), "paug_grid: objective returned non-finite value at p_aug=",
          config.p_aug);
    sweep.points.push_back({config.p_aug, value});
    if (i == 0 || better(value, sweep.best_value, direction)) {
      sweep.best_value = value;
      sweep.best_p_aug = config.p_aug;
    }
  }
  return sweep;
}

void save_paug_sweep(const std::string& path, const PaugSweep& sweep) {
  std::ofstream out(path, std::ios::trunc);
  check(out.good(), "save_paug_sweep: cannot open '", path, "'");
  out << "p_aug,value\n";
  for (const PaugPoint& p : sweep.points)
    out << number_str(p.p_aug) << ',' << number_str(p.value) << '\n';
  out.flush();
  check(out.good(), "save_paug_sweep: write to '", path, "' failed");
}

void ObjectiveContext::validate() const {
  check(model != nullptr && extractor != nullptr && eval_extractor != nullptr &&
            latents != nullptr,
        "objective context: model, extractors and latents must all be set");
  check(extractor->in_channels() == 2, "objective context: extractor must take 2 channels");
  check(eval_extractor->in_channels() == 1,
        "objective context: eval_extractor must take 1 channel");
  check(!train.empty(), "objective context: training split is empty");
  check(!validation.empty(), "objective context: validation split is empty");
  downstream.validate();
  translator.validate();
  check(n_gen >= 1, "objective context: n_gen must be >= 1, got ", n_gen);
  check(knn_k >= 1, "objective context: knn_k must be >= 1, got ", knn_k);
}

double mae_objective(const ObjectiveContext& ctx, const PolicyConfig& config,
                     std::uint64_t seed) {
  ctx.validate();
  config.validate();

  ReferenceSet refs = make_reference_set(ctx.train, *ctx.latents);
  AugmentContext policy;
  policy.model = ctx.model;
  policy.extractor = ctx.extractor;
  policy.latents = ctx.latents;
  policy.refs = &refs;
  policy.config = config;

  DownstreamConfig dc = ctx.downstream;
  dc.seed = seed;
  dc.log_path.clear();
  dc.checkpoint_path.clear();
  TranslatorModel model = train_translator(ctx.train, policy, PolicyKind::kLatent, dc,
                                           ctx.translator);
  std::vector<SampleMetricRow> rows =
      eval_translator(model, *ctx.eval_extractor, ctx.validation, "latent");
  return summarize_samples(rows).values.at("mae");
}

Tensor navigated_embeddings(const ObjectiveContext& ctx, const PolicyConfig& config, Rng& rng) {
  ctx.validate();
  config.validate();

  ReferenceSet refs = make_reference_set(ctx.train, *ctx.latents);
  const int dim = ctx.model->config.latent_dim;
  const int chunk_cap = 64;

  Tensor gen_feats({ctx.n_gen, ctx.extractor->embed_dim()});
  int produced = 0;
  while (produced < ctx.n_gen) {
    int b = std::min(chunk_cap, ctx.n_gen - produced);
    Tensor w({b, dim});
    for (int r = 0; r < b; ++r) {
      const PairedImage* src = ctx.train[static_cast<size_t>(produced + r) % ctx.train.size()];
      const Tensor& w_star = ctx.latents->at(src->sample_id);
      for (int j = 0; j < dim; ++j) w.at(r, j) = w_star[j];
    }
    ReferenceSet subset = sample_reference_subset(refs, config.ref_subset_size, rng);
    Tensor moved = navigate(w, *ctx.model, *ctx.extractor, subset, config, &rng);
    Tensor embedded = ctx.extractor->embed(generate(*ctx.model, moved));
    for (int64_t i = 0; i < embedded.numel(); ++i)
      gen_feats[static_cast<int64_t>(produced) * ctx.extractor->embed_dim() + i] = embedded[i];
    produced += b;
  }
  return gen_feats;
}

double f1_objective(const ObjectiveContext& ctx, const PolicyConfig& config,
                    std::uint64_t seed) {
  Rng rng(seed);
  Tensor gen_feats = navigated_embeddings(ctx, config, rng);
  Tensor real_feats = ctx.extractor->embed(batch_to_tensor(ctx.validation));
  PrecisionRecall pr = knn_precision_recall(real_feats, gen_feats, ctx.knn_k);
  return f1(pr.precision, pr.recall);
}

}  // namespace latentaug
