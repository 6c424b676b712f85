#include "latentaug/policy.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <utility>

#include "latentaug/adam.hpp"
#include "latentaug/error.hpp"
#include "latentaug/layers.hpp"

namespace latentaug {

namespace {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

double softplus_stable(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

Tensor as_row(const Tensor& w, int dim, const char* ctx) {
  const Shape& s = w.shape();
  if (s.size() == 1) {
    check(s[0] == dim, ctx, ": latent size ", s[0], " does not match model dim ", dim);
    return reshaped(w, {1, dim});
  }
  check(s.size() == 2 && s[1] == dim, ctx, ": expected [d] or [B,d] with d=", dim, ", got ",
        shape_str(s));
  return w;
}

// [1,...] -> [n,...] by repetition; reference means enter loss graphs this
// way so every batch row sees the same target.
Tensor tile_rows(const Tensor& row, int n) {
  check(row.shape().size() >= 1 && row.shape()[0] == 1, "tile_rows: expected leading dim 1");
  Shape s = row.shape();
  s[0] = n;
  Tensor out(s);
  for (int i = 0; i < n; ++i)
    std::copy(row.data(), row.data() + row.numel(), out.data() + i * row.numel());
  return out;
}

void validate_refs(const ReferenceSet& refs, const GanModel& model, const char* ctx) {
  check(refs.size() >= 1, ctx, ": reference set is empty");
  const Shape& xs = refs.images.shape();
  check(xs.size() == 4, ctx, ": reference images must be [N,C,H,W], got ", shape_str(xs));
  check(xs[1] == model.config.channels && xs[2] == model.config.resolution &&
            xs[3] == model.config.resolution,
        ctx, ": reference image shape ", shape_str(xs), " does not match the model (",
        model.config.channels, " channels at ", model.config.resolution, "x",
        model.config.resolution, ")");
  const Shape& ws = refs.latents.shape();
  check(ws.size() == 2 && ws[0] == xs[0] && ws[1] == model.config.latent_dim, ctx,
        ": reference latents must be [", xs[0], ",", model.config.latent_dim, "], got ",
        shape_str(ws));
}

// Per-term reference statistics. Averaging a squared distance over the set
// splits into distance-to-mean plus a constant spread, so the graphs below
// only ever carry one target tensor per term:
//   mean_j ||a - x_j||^2 = ||a - mean_x||^2 + mean_j ||x_j - mean_x||^2
struct RefStats {
  int count = 0;
  double image_numel = 0;          // per-sample pixel count
  Tensor mean_image;               // [1,C,H,W]
  double image_spread = 0.0;
  std::vector<Tensor> mean_feats;  // per layer, [1,c,h,w] (crop applied)
  std::vector<double> feat_spread;
  std::vector<double> feat_sizes;  // per-sample feature counts
  Tensor mean_latent;              // [1,d]
  double latent_spread = 0.0;
};

void mean_and_spread(const Tensor& rows, Tensor& mean, double& spread) {
  int n = rows.shape()[0];
  int64_t per = rows.numel() / n;
  Shape ms = rows.shape();
  ms[0] = 1;
  mean = Tensor(ms);
  for (int i = 0; i < n; ++i)
    for (int64_t k = 0; k < per; ++k) mean[k] += rows.data()[i * per + k];
  for (int64_t k = 0; k < per; ++k) mean[k] /= n;
  spread = 0.0;
  for (int i = 0; i < n; ++i)
    for (int64_t k = 0; k < per; ++k) {
      double d = rows.data()[i * per + k] - mean[k];
      spread += d * d;
    }
  spread /= n;
}

RefStats compute_ref_stats(const ReferenceSet& refs, const FeatureExtractor& extractor,
                           bool want_features, int crop_size, int crop_y, int crop_x) {
  RefStats stats;
  stats.count = refs.size();
  stats.image_numel = static_cast<double>(refs.images.numel() / stats.count);
  mean_and_spread(refs.images, stats.mean_image, stats.image_spread);
  mean_and_spread(refs.latents, stats.mean_latent, stats.latent_spread);

  if (!want_features) return stats;
  Graph g;
  NodeId x = g.constant(refs.images, "ref_images");
  if (crop_size > 0) x = g.crop2d(x, crop_y, crop_x, crop_size, crop_size);
  std::vector<NodeId> feats = extractor.features(g, x);
  g.set_output(g.sum(feats.back()));
  g.evaluate();
  for (NodeId f : feats) {
    const Tensor& v = g.value(f);
    Tensor mean;
    double spread = 0.0;
    mean_and_spread(v, mean, spread);
    stats.mean_feats.push_back(std::move(mean));
    stats.feat_spread.push_back(spread);
    stats.feat_sizes.push_back(static_cast<double>(v.numel() / stats.count));
  }
  return stats;
}

// Loss graph over a [B,d] latent input. Term nodes hold batch sums so
// per-row gradients do not depend on the batch size; with B=1 they read
// back as the per-sample values directly.
struct LossGraph {
  Graph g;
  NodeId fidelity = -1;
  NodeId pixel = -1;
  NodeId perceptual = -1;
  NodeId latent = -1;
};

LossGraph build_loss_graph(int batch, const GanModel& model, const FeatureExtractor& extractor,
                           const RefStats& stats, const PolicyConfig& config, bool all_terms,
                           int crop_size, int crop_y, int crop_x) {
  LossGraph lg;
  Graph& g = lg.g;
  const GanConfig& gc = model.config;
  NodeId w = g.input("w", {batch, gc.latent_dim});
  ParamBinder frozen(g, model.params, false);

  bool need_f = all_terms || config.alpha_f > 0.0;
  bool need_pix = all_terms || config.alpha_pix > 0.0;
  bool need_perc = all_terms || config.alpha_perc > 0.0;
  bool need_lat = all_terms || config.alpha_lat > 0.0;

  NodeId img = -1;
  if (need_f || need_pix || need_perc) img = generator_nodes(g, gc, w, frozen);

  if (need_f) {
    StackTrace disc = stack_forward(g, discriminator_stack(gc), img, frozen);
    lg.fidelity = g.sum(g.softplus(g.scale(disc.out, -1.0)));
  }
  if (need_pix) {
    NodeId target = g.constant(tile_rows(stats.mean_image, batch), "ref_mean_image");
    NodeId ss = g.add_scalar(g.sum_sq(g.sub(img, target)), batch * stats.image_spread);
    lg.pixel = g.scale(ss, 1.0 / stats.image_numel);
  }
  if (need_perc) {
    NodeId patch = crop_size > 0 ? g.crop2d(img, crop_y, crop_x, crop_size, crop_size) : img;
    std::vector<NodeId> feats = extractor.features(g, patch);
    NodeId acc = -1;
    for (size_t l = 0; l < feats.size(); ++l) {
      NodeId target = g.constant(tile_rows(stats.mean_feats[l], batch), "ref_mean_feat");
      NodeId ss = g.add_scalar(g.sum_sq(g.sub(feats[l], target)), batch * stats.feat_spread[l]);
      ss = g.scale(ss, 1.0 / stats.feat_sizes[l]);
      acc = acc < 0 ? ss : g.add(acc, ss);
    }
    lg.perceptual = acc;
  }
  if (need_lat) {
    NodeId target = g.constant(tile_rows(stats.mean_latent, batch), "ref_mean_latent");
    NodeId ss = g.add_scalar(g.sum_sq(g.sub(w, target)), batch * stats.latent_spread);
    lg.latent = g.scale(ss, 1.0 / gc.latent_dim);
  }

  NodeId total = -1;
  auto accumulate = [&](NodeId term, double weight) {
    if (term < 0 || weight == 0.0) return;
    NodeId scaled = g.scale(term, weight);
    total = total < 0 ? scaled : g.add(total, scaled);
  };
  accumulate(lg.fidelity, config.alpha_f);
  accumulate(lg.pixel, -config.alpha_pix);
  accumulate(lg.perceptual, -config.alpha_perc);
  accumulate(lg.latent, -config.alpha_lat);
  if (total < 0) total = g.constant(Tensor({}, {0.0}), "zero_total");
  g.set_output(total);
  return lg;
}

// Crop placement for the perceptual patch. Validates the size, draws a
// corner when an rng is supplied, otherwise centers the patch.
void resolve_patch(const PolicyConfig& config, int resolution, Rng* rng, int& size, int& y,
                   int& x) {
  size = 0;
  y = x = 0;
  if (config.patch_size <= 0 || config.patch_size >= resolution) return;
  check(config.patch_size % 8 == 0, "policy: patch_size must be a multiple of 8, got ",
        config.patch_size);
  size = config.patch_size;
  int span = resolution - size;
  if (rng) {
    y = static_cast<int>(rng->uniform_int(0, span));
    x = static_cast<int>(rng->uniform_int(0, span));
  } else {
    y = x = span / 2;
  }
}

double term_value(const LossGraph& lg, NodeId id) { return id < 0 ? 0.0 : lg.g.value(id).item(); }

// ---- classical pipeline helpers ----

double sample_bilinear(const std::vector<double>& plane, int res, double y, double x) {
  int y0 = static_cast<int>(std::floor(y));
  int x0 = static_cast<int>(std::floor(x));
  double fy = y - y0;
  double fx = x - x0;
  double acc = 0.0;
  for (int dy = 0; dy < 2; ++dy)
    for (int dx = 0; dx < 2; ++dx) {
      int yy = y0 + dy;
      int xx = x0 + dx;
      if (yy < 0 || yy >= res || xx < 0 || xx >= res) continue;
      double wgt = (dy ? fy : 1.0 - fy) * (dx ? fx : 1.0 - fx);
      acc += wgt * plane[static_cast<size_t>(yy) * res + xx];
    }
  return acc;
}

using Planes = std::array<std::vector<double>, 3>;

// Resamples all planes through the same inverse map (output pixel ->
// source coordinates); values outside the image read as zero.
template <typename MapFn>
void warp_planes(Planes& planes, int res, MapFn&& src_of) {
  Planes out;
  for (auto& p : out) p.assign(static_cast<size_t>(res) * res, 0.0);
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      auto [sy, sx] = src_of(y, x);
      for (int k = 0; k < 3; ++k)
        out[k][static_cast<size_t>(y) * res + x] = sample_bilinear(planes[k], res, sy, sx);
    }
  planes = std::move(out);
}

void flip_planes(Planes& planes, int res) {
  for (auto& p : planes)
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res / 2; ++x)
        std::swap(p[static_cast<size_t>(y) * res + x],
                  p[static_cast<size_t>(y) * res + (res - 1 - x)]);
}

std::vector<double> gaussian_kernel(double sigma) {
  int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<size_t>(i + radius)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[static_cast<size_t>(i + radius)];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable zero-padded blur; attenuation near the borders keeps the
// deformation small where body masks meet the image edge.
void gaussian_blur(std::vector<double>& plane, int res, double sigma) {
  std::vector<double> kernel = gaussian_kernel(sigma);
  int radius = static_cast<int>(kernel.size()) / 2;
  std::vector<double> tmp(plane.size(), 0.0);
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        int xx = x + i;
        if (xx < 0 || xx >= res) continue;
        acc += kernel[static_cast<size_t>(i + radius)] * plane[static_cast<size_t>(y) * res + xx];
      }
      tmp[static_cast<size_t>(y) * res + x] = acc;
    }
  for (int x = 0; x < res; ++x)
    for (int y = 0; y < res; ++y) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        int yy = y + i;
        if (yy < 0 || yy >= res) continue;
        acc += kernel[static_cast<size_t>(i + radius)] * tmp[static_cast<size_t>(yy) * res + x];
      }
      plane[static_cast<size_t>(y) * res + x] = acc;
    }
}

void check_mags(const TransformStep& step, size_t count, double lo, double hi) {
  check(step.mags.size() == count, "standard_da: op '", step.op, "' expects ", count,
        " magnitude(s), got ", step.mags.size());
  for (double m : step.mags)
    check(std::isfinite(m) && m >= lo && m <= hi, "standard_da: magnitude ", m, " for op '",
          step.op, "' outside [", lo, ",", hi, "]");
}

void require_part(const void* part, const char* what, const char* policy) {
  check(part != nullptr, "augment: ", what, " is required for the ", policy, " policy");
}

PairedImage image_from_channels(const Tensor& chw, const PairedImage& proto, bool mask_all_on) {
  check(chw.shape().size() == 3 && chw.shape()[0] == 2,
        "augment: expected a [2,R,R] sample, got ", shape_str(chw.shape()));
  if (!mask_all_on) return tensor_to_image(chw, proto);
  PairedImage out;
  out.sample_id = proto.sample_id;
  out.resolution = chw.shape()[1];
  size_t plane = static_cast<size_t>(out.resolution) * out.resolution;
  out.modality_a.resize(plane);
  out.modality_b.resize(plane);
  out.body_mask.assign(plane, 1.0f);
  for (size_t i = 0; i < plane; ++i) {
    out.modality_a[i] = static_cast<float>(chw.data()[i]);
    out.modality_b[i] = static_cast<float>(chw.data()[plane + i]);
  }
  return out;
}

}  // namespace

PolicyKind policy_kind_from_name(const std::string& name) {
  if (name == "none") return PolicyKind::kNone;
  if (name == "latent") return PolicyKind::kLatent;
  if (name == "standard-da") return PolicyKind::kStandardDa;
  if (name == "standard-sg2") return PolicyKind::kStandardSg2;
  fail("policy: unknown policy '", name,
       "' (expected none, latent, standard-da, or standard-sg2)");
}

std::string policy_kind_name(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::kNone: return "none";
    case PolicyKind::kLatent: return "latent";
    case PolicyKind::kStandardDa: return "standard-da";
    case PolicyKind::kStandardSg2: return "standard-sg2";
  }
  fail("policy: invalid policy kind");
}

void PolicyConfig::validate() const {
  auto weight = [](double v, const char* name) {
    check(std::isfinite(v) && v >= 0.0, "policy config: ", name, " must be >= 0, got ", v);
  };
  weight(alpha_f, "alpha_f");
  weight(alpha_pix, "alpha_pix");
  weight(alpha_perc, "alpha_perc");
  weight(alpha_lat, "alpha_lat");
  check(k_steps >= 0, "policy config: k_steps must be >= 0, got ", k_steps);
  check(std::isfinite(lr) && lr > 0.0, "policy config: lr must be positive, got ", lr);
  check(p_aug >= 0.0 && p_aug <= 1.0, "policy config: p_aug must lie in [0,1], got ", p_aug);
  check(ref_subset_size >= 1, "policy config: ref_subset_size must be >= 1, got ",
        ref_subset_size);
  check(patch_size >= 0, "policy config: patch_size must be >= 0, got ", patch_size);
  check(truncation_psi >= 0.0 && truncation_psi <= 1.0,
        "policy config: truncation_psi must lie in [0,1], got ", truncation_psi);
}

PolicyConfig mae_objective_preset() {
  PolicyConfig c;
  c.alpha_f = 0.01;
  c.alpha_pix = 3.0;
  c.alpha_perc = 1.0;
  c.alpha_lat = 0.1;
  c.k_steps = 9;
  c.lr = 0.01;
  c.p_aug = 0.7;
  return c;
}

PolicyConfig f1_objective_preset() {
  PolicyConfig c;
  c.alpha_f = 0.01;
  c.alpha_pix = 0.1;
  c.alpha_perc = 10.0;
  c.alpha_lat = 0.001;
  c.k_steps = 9;
  c.lr = 0.01;
  c.p_aug = 0.8;
  return c;
}

ReferenceSet make_reference_set(const std::vector<const PairedImage*>& images,
                                const LatentTable& table) {
  check(!images.empty(), "make_reference_set: no images");
  std::vector<std::string> ids;
  ids.reserve(images.size());
  for (const PairedImage* im : images) {
    check(im != nullptr, "make_reference_set: null image");
    ids.push_back(im->sample_id);
  }
  ReferenceSet refs;
  refs.images = batch_to_tensor(images);
  refs.latents = table.select(ids);
  return refs;
}

ReferenceSet sample_reference_subset(const ReferenceSet& full, int subset_size, Rng& rng) {
  check(full.size() >= 1, "sample_reference_subset: reference set is empty");
  check(subset_size >= 1, "sample_reference_subset: subset_size must be >= 1, got ", subset_size);
  int n = full.size();
  if (subset_size >= n) return full;

  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  order.resize(static_cast<size_t>(subset_size));
  std::sort(order.begin(), order.end());

  Shape xs = full.images.shape();
  Shape ws = full.latents.shape();
  xs[0] = subset_size;
  ws[0] = subset_size;
  ReferenceSet out;
  out.images = Tensor(xs);
  out.latents = Tensor(ws);
  int64_t img_per = full.images.numel() / n;
  int64_t lat_per = full.latents.numel() / n;
  for (int i = 0; i < subset_size; ++i) {
    std::copy(full.images.data() + order[static_cast<size_t>(i)] * img_per,
              full.images.data() + (order[static_cast<size_t>(i)] + 1) * img_per,
              out.images.data() + i * img_per);
    std::copy(full.latents.data() + order[static_cast<size_t>(i)] * lat_per,
              full.latents.data() + (order[static_cast<size_t>(i)] + 1) * lat_per,
              out.latents.data() + i * lat_per);
  }
  return out;
}

PolicyLossValues policy_loss(const Tensor& w, const GanModel& model,
                             const FeatureExtractor& extractor, const ReferenceSet& refs,
                             const PolicyConfig& config, Tensor* grad_out) {
  config.validate();
  validate_refs(refs, model, "policy_loss");
  Tensor row = as_row(w, model.config.latent_dim, "policy_loss");
  check(row.shape()[0] == 1, "policy_loss: expected a single latent, got batch of ",
        row.shape()[0]);

  int crop_size = 0, crop_y = 0, crop_x = 0;
  resolve_patch(config, model.config.resolution, nullptr, crop_size, crop_y, crop_x);
  RefStats stats = compute_ref_stats(refs, extractor, true, crop_size, crop_y, crop_x);
  LossGraph lg = build_loss_graph(1, model, extractor, stats, config, true, crop_size, crop_y,
                                  crop_x);
  lg.g.bind("w", row);
  PolicyLossValues out;
  out.total = lg.g.evaluate();
  out.fidelity = term_value(lg, lg.fidelity);
  out.pixel = term_value(lg, lg.pixel);
  out.perceptual = term_value(lg, lg.perceptual);
  out.latent = term_value(lg, lg.latent);
  if (grad_out) *grad_out = reshaped(lg.g.backprop({"w"}).at("w"), {model.config.latent_dim});
  return out;
}

PolicyLossValues policy_loss_direct(const Tensor& w, const GanModel& model,
                                    const FeatureExtractor& extractor, const ReferenceSet& refs,
                                    const PolicyConfig& config) {
  config.validate();
  validate_refs(refs, model, "policy_loss_direct");
  Tensor row = as_row(w, model.config.latent_dim, "policy_loss_direct");
  check(row.shape()[0] == 1, "policy_loss_direct: expected a single latent");

  int n = refs.size();
  int d = model.config.latent_dim;
  Tensor img = generate(model, row);
  int64_t img_per = img.numel();

  PolicyLossValues out;
  out.fidelity = softplus_stable(-discriminate(model, img)[0]);

  for (int j = 0; j < n; ++j) {
    double ss = 0.0;
    for (int64_t k = 0; k < img_per; ++k) {
      double diff = img[k] - refs.images.data()[j * img_per + k];
      ss += diff * diff;
    }
    out.pixel += ss / static_cast<double>(img_per);

    double sw = 0.0;
    for (int k = 0; k < d; ++k) {
      double diff = row[k] - refs.latents.at(j, k);
      sw += diff * diff;
    }
    out.latent += sw / d;
  }
  out.pixel /= n;
  out.latent /= n;

  int crop_size = 0, crop_y = 0, crop_x = 0;
  resolve_patch(config, model.config.resolution, nullptr, crop_size, crop_y, crop_x);
  auto layer_values = [&](const Tensor& batch) {
    Graph g;
    NodeId x = g.constant(batch, "x");
    if (crop_size > 0) x = g.crop2d(x, crop_y, crop_x, crop_size, crop_size);
    std::vector<NodeId> feats = extractor.features(g, x);
    g.set_output(g.sum(feats.back()));
    g.evaluate();
    std::vector<Tensor> vals;
    for (NodeId f : feats) vals.push_back(g.value(f));
    return vals;
  };
  std::vector<Tensor> gen_feats = layer_values(img);
  std::vector<Tensor> ref_feats = layer_values(refs.images);
  for (size_t l = 0; l < gen_feats.size(); ++l) {
    int64_t per = gen_feats[l].numel();
    double layer_acc = 0.0;
    for (int j = 0; j < n; ++j) {
      double ss = 0.0;
      for (int64_t k = 0; k < per; ++k) {
        double diff = gen_feats[l][k] - ref_feats[l].data()[j * per + k];
        ss += diff * diff;
      }
      layer_acc += ss / static_cast<double>(per);
    }
    out.perceptual += layer_acc / n;
  }

  out.total = config.alpha_f * out.fidelity -
              (config.alpha_pix * out.pixel + config.alpha_perc * out.perceptual +
               config.alpha_lat * out.latent);
  return out;
}

Tensor navigate(const Tensor& w_start, const GanModel& model, const FeatureExtractor& extractor,
                const ReferenceSet& refs, const PolicyConfig& config, Rng* patch_rng) {
  config.validate();
  int d = model.config.latent_dim;
  Tensor w = as_row(w_start, d, "navigate");
  bool all_zero = config.alpha_f == 0.0 && config.alpha_pix == 0.0 && config.alpha_perc == 0.0 &&
                  config.alpha_lat == 0.0;
  if (config.k_steps == 0 || all_zero) return w_start;

  validate_refs(refs, model, "navigate");
  int batch = w.shape()[0];
  int crop_size = 0, crop_y = 0, crop_x = 0;
  resolve_patch(config, model.config.resolution, patch_rng, crop_size, crop_y, crop_x);
  bool need_features = config.alpha_perc > 0.0;
  RefStats stats = compute_ref_stats(refs, extractor, need_features, crop_size, crop_y, crop_x);
  LossGraph lg = build_loss_graph(batch, model, extractor, stats, config, false, crop_size,
                                  crop_y, crop_x);

  AdamState adam(w.shape());
  for (int step = 0; step < config.k_steps; ++step) {
    lg.g.bind("w", w);
    lg.g.evaluate();
    adam.step(w, lg.g.backprop({"w"}).at("w"), config.lr);
  }
  if (w_start.shape().size() == 1) return reshaped(w, {d});
  return w;
}

TransformSpec draw_standard_spec(int resolution, Rng& rng) {
  check(resolution >= 2, "draw_standard_spec: resolution must be >= 2, got ", resolution);
  TransformSpec spec;
  spec.push_back({"xflip", {rng.uniform() < 0.5 ? 1.0 : 0.0}});
  spec.push_back({"rotate", {rng.uniform(-3.0, 3.0)}});
  spec.push_back({"frac", {rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)}});
  spec.push_back({"deform", {rng.uniform(0.0, resolution / 32.0)}});
  return spec;
}

PairedImage standard_da(const PairedImage& x, const TransformSpec& spec, Rng& rng) {
  int res = x.resolution;
  size_t plane = static_cast<size_t>(res) * res;
  check(res >= 2, "standard_da: bad resolution ", res);
  check(x.modality_a.size() == plane && x.modality_b.size() == plane &&
            x.body_mask.size() == plane,
        "standard_da: plane sizes do not match resolution ", res);

  Planes planes;
  for (size_t i = 0; i < plane; ++i) {
    planes[0].push_back(x.modality_a[i]);
    planes[1].push_back(x.modality_b[i]);
    planes[2].push_back(x.body_mask[i]);
  }

  for (const TransformStep& step : spec) {
    if (step.op == "xflip") {
      check_mags(step, 1, 0.0, 1.0);
      if (step.mags[0] >= 0.5) flip_planes(planes, res);
    } else if (step.op == "rotate") {
      check_mags(step, 1, -3.0, 3.0);
      double theta = step.mags[0] * std::numbers::pi / 180.0;
      double c = std::cos(theta), s = std::sin(theta);
      double ctr = (res - 1) / 2.0;
      warp_planes(planes, res, [&](int y, int px) {
        double dy = y - ctr, dx = px - ctr;
        return std::pair<double, double>(ctr - s * dx + c * dy, ctr + c * dx + s * dy);
      });
    } else if (step.op == "frac") {
      check_mags(step, 2, -0.05, 0.05);
      double off_x = step.mags[0] * res;
      double off_y = step.mags[1] * res;
      warp_planes(planes, res,
                  [&](int y, int px) { return std::pair<double, double>(y - off_y, px - off_x); });
    } else if (step.op == "deform") {
      check_mags(step, 1, 0.0, res / 16.0);
      double amp = step.mags[0];
      std::vector<double> du(plane), dv(plane);
      for (double& v : du) v = rng.uniform(-1.0, 1.0);
      for (double& v : dv) v = rng.uniform(-1.0, 1.0);
      if (amp > 0.0) {
        double sigma = res / 8.0;
        gaussian_blur(du, res, sigma);
        gaussian_blur(dv, res, sigma);
        double peak = 0.0;
        for (size_t i = 0; i < plane; ++i)
          peak = std::max(peak, std::max(std::abs(du[i]), std::abs(dv[i])));
        double scale = peak > 0.0 ? amp / peak : 0.0;
        warp_planes(planes, res, [&](int y, int px) {
          size_t i = static_cast<size_t>(y) * res + px;
          return std::pair<double, double>(y - scale * dv[i], px - scale * du[i]);
        });
      }
    } else {
      fail("standard_da: unknown op '", step.op,
           "' (expected xflip, rotate, frac, or deform)");
    }
  }

  PairedImage out;
  out.sample_id = x.sample_id;
  out.resolution = res;
  out.modality_a.resize(plane);
  out.modality_b.resize(plane);
  out.body_mask.resize(plane);
  for (size_t i = 0; i < plane; ++i) {
    out.modality_a[i] = static_cast<float>(planes[0][i]);
    out.modality_b[i] = static_cast<float>(planes[1][i]);
    out.body_mask[i] = planes[2][i] > 0.5 ? 1.0f : 0.0f;
  }
  return out;
}

Tensor standard_sg2_sample(const GanModel& model, Rng& rng, double psi) {
  const GanConfig& gc = model.config;
  return reshaped(standard_sg2_batch(model, 1, rng, psi),
                  {gc.channels, gc.resolution, gc.resolution});
}

Tensor standard_sg2_batch(const GanModel& model, int n, Rng& rng, double psi) {
  check(n >= 1, "standard_sg2_batch: n must be >= 1, got ", n);
  check(psi >= 0.0 && psi <= 1.0, "standard_sg2_batch: psi must lie in [0,1], got ", psi);
  check(psi == 1.0 || model.w_mean_samples > 0,
        "standard_sg2_batch: truncation needs a model with an estimated latent mean");
  int d = model.config.latent_dim;
  Tensor z({n, d});
  for (int64_t i = 0; i < z.numel(); ++i) z[i] = rng.normal();
  Tensor w = mapping_forward(model, z);
  if (psi < 1.0) w = truncate(w, model.w_mean, psi);
  return generate(model, w);
}

PairedImage augment(const AugmentContext& ctx, const PairedImage& x, PolicyKind kind, Rng& rng) {
  ctx.config.validate();
  if (kind == PolicyKind::kNone) return x;
  if (rng.uniform() < ctx.config.p_aug) return x;

  switch (kind) {
    case PolicyKind::kLatent: {
      require_part(ctx.model, "a GAN model", "latent");
      require_part(ctx.extractor, "a feature extractor", "latent");
      require_part(ctx.latents, "a latent table", "latent");
      require_part(ctx.refs, "a reference set", "latent");
      const Tensor& w_star = ctx.latents->at(x.sample_id);
      ReferenceSet subset = sample_reference_subset(*ctx.refs, ctx.config.ref_subset_size, rng);
      Tensor w = navigate(w_star, *ctx.model, *ctx.extractor, subset, ctx.config, &rng);
      Tensor img = generate(*ctx.model, w);
      const GanConfig& gc = ctx.model->config;
      return image_from_channels(reshaped(img, {gc.channels, gc.resolution, gc.resolution}), x,
                                 false);
    }
    case PolicyKind::kStandardDa: {
      TransformSpec spec = draw_standard_spec(x.resolution, rng);
      return standard_da(x, spec, rng);
    }
    case PolicyKind::kStandardSg2: {
      require_part(ctx.model, "a GAN model", "standard-sg2");
      Tensor img = standard_sg2_sample(*ctx.model, rng, ctx.config.truncation_psi);
      return image_from_channels(img, x, true);
    }
    default: fail("augment: invalid policy kind");
  }
}

std::vector<PairedImage> augment_batch(const AugmentContext& ctx,
                                       const std::vector<const PairedImage*>& images,
                                       PolicyKind kind, Rng& rng) {
  ctx.config.validate();
  std::vector<PairedImage> out;
  out.reserve(images.size());
  for (const PairedImage* im : images) check(im != nullptr, "augment_batch: null image");

  if (kind != PolicyKind::kLatent) {
    for (const PairedImage* im : images) out.push_back(augment(ctx, *im, kind, rng));
    return out;
  }

  require_part(ctx.model, "a GAN model", "latent");
  require_part(ctx.extractor, "a feature extractor", "latent");
  require_part(ctx.latents, "a latent table", "latent");
  require_part(ctx.refs, "a reference set", "latent");

  std::vector<size_t> fired;
  for (size_t i = 0; i < images.size(); ++i) {
    out.push_back(*images[i]);
    if (rng.uniform() >= ctx.config.p_aug) fired.push_back(i);
  }
  if (fired.empty()) return out;

  int d = ctx.model->config.latent_dim;
  Tensor w_batch({static_cast<int>(fired.size()), d});
  for (size_t i = 0; i < fired.size(); ++i) {
    const Tensor& w_star = ctx.latents->at(images[fired[i]]->sample_id);
    std::copy(w_star.data(), w_star.data() + d, w_batch.data() + static_cast<int64_t>(i) * d);
  }
  ReferenceSet subset = sample_reference_subset(*ctx.refs, ctx.config.ref_subset_size, rng);
  Tensor moved = navigate(w_batch, *ctx.model, *ctx.extractor, subset, ctx.config, &rng);
  Tensor imgs = generate(*ctx.model, moved);
  const GanConfig& gc = ctx.model->config;
  int64_t per = imgs.numel() / static_cast<int>(fired.size());
  for (size_t i = 0; i < fired.size(); ++i) {
    Tensor one({gc.channels, gc.resolution, gc.resolution});
    std::copy(imgs.data() + static_cast<int64_t>(i) * per,
              imgs.data() + static_cast<int64_t>(i + 1) * per, one.data());
    out[fired[i]] = image_from_channels(one, *images[fired[i]], false);
  }
  return out;
}

}  // namespace latentaug
