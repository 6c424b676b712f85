#include "latentaug/gan.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "latentaug/adam.hpp"
#include "latentaug/checkpoint.hpp"
#include "latentaug/error.hpp"
#include "latentaug/rng.hpp"

namespace latentaug {

namespace {

bool is_pow2(int v) { return v >= 1 && (v & (v - 1)) == 0; }

// Generator channel width entering block i (i = 0 is the 4x4 stage).
int gen_channels(const GanConfig& c, int i) {
  return std::max(c.base_channels >> i, 16);
}

// Discriminator channel width after conv j.
int disc_width(const GanConfig& c, int j) {
  return std::min(c.disc_channels << j, 128);
}

Tensor zeros(Shape shape) {
  Tensor t(std::move(shape));
  return t;
}

Tensor as_rows(const Tensor& t, const char* ctx) {
  const Shape& s = t.shape();
  if (s.size() == 2) return t;
  check(s.size() == 1, ctx, ": expected [dim] or [N,dim], got ", shape_str(s));
  Tensor out({1, s[0]});
  std::copy(t.data(), t.data() + t.numel(), out.data());
  return out;
}

Tensor as_images(const Tensor& t, const char* ctx) {
  const Shape& s = t.shape();
  if (s.size() == 4) return t;
  check(s.size() == 3, ctx, ": expected [C,H,W] or [N,C,H,W], got ", shape_str(s));
  Tensor out({1, s[0], s[1], s[2]});
  std::copy(t.data(), t.data() + t.numel(), out.data());
  return out;
}

// Per-sample discriminator-input transforms for one batch: either a
// horizontal flip or an integer translation of up to 2 pixels.
struct AugSpec {
  std::vector<uint8_t> flip;
  std::vector<int> off_y, off_x;
  bool any = false;
};

AugSpec draw_aug(int batch, double prob, Rng& rng) {
  AugSpec a;
  a.flip.assign(static_cast<size_t>(batch), 0);
  a.off_y.assign(static_cast<size_t>(batch), 0);
  a.off_x.assign(static_cast<size_t>(batch), 0);
  for (int i = 0; i < batch; ++i) {
    if (rng.uniform() >= prob) continue;
    a.any = true;
    if (rng.uniform() < 0.5) {
      a.flip[static_cast<size_t>(i)] = 1;
    } else {
      a.off_y[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_int(-2, 2));
      a.off_x[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_int(-2, 2));
    }
  }
  return a;
}

NodeId apply_aug(Graph& g, NodeId x, const AugSpec& a) {
  if (!a.any) return x;
  return g.translate2d(g.hflip(x, a.flip), a.off_y, a.off_x);
}

nlohmann::json config_json(const GanConfig& c) {
  return {{"latent_dim", c.latent_dim},
          {"resolution", c.resolution},
          {"channels", c.channels},
          {"base_channels", c.base_channels},
          {"disc_channels", c.disc_channels}};
}

GanConfig config_from_json(const nlohmann::json& j) {
  GanConfig c;
  c.latent_dim = j.at("latent_dim").get<int>();
  c.resolution = j.at("resolution").get<int>();
  c.channels = j.at("channels").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.disc_channels = j.at("disc_channels").get<int>();
  return c;
}

}  // namespace

void GanConfig::validate() const {
  check(latent_dim >= 2, "gan config: latent_dim must be >= 2, got ", latent_dim);
  check(is_pow2(resolution) && resolution >= 16, "gan config: resolution must be a power of two >= 16, got ",
        resolution);
  check(channels >= 1, "gan config: channels must be >= 1, got ", channels);
  check(base_channels >= 16, "gan config: base_channels must be >= 16, got ", base_channels);
  check(disc_channels >= 4, "gan config: disc_channels must be >= 4, got ", disc_channels);
}

int GanConfig::num_blocks() const {
  int n = 0;
  for (int r = 4; r < resolution; r *= 2) ++n;
  return n;
}

void GanTrainConfig::validate() const {
  check(batch_size >= 1, "gan train config: batch_size must be >= 1");
  check(iterations >= 1, "gan train config: iterations must be >= 1");
  check(lr_g > 0.0 && lr_d > 0.0, "gan train config: learning rates must be positive");
  check(r1_weight >= 0.0, "gan train config: r1_weight must be >= 0");
  check(disc_aug_prob >= 0.0 && disc_aug_prob <= 1.0,
        "gan train config: disc_aug_prob must lie in [0,1], got ", disc_aug_prob);
  check(w_mean_samples >= 1, "gan train config: w_mean_samples must be >= 1");
}

GanModel init_gan(const GanConfig& config, std::uint64_t seed) {
  config.validate();
  GanModel m;
  m.config = config;
  m.w_mean = zeros({config.latent_dim});
  int d = config.latent_dim;

  auto he = [&](const std::string& name, Shape shape) {
    Rng rng(derive_seed(seed, name));
    m.params[name] = he_normal(std::move(shape), rng);
  };
  auto zero = [&](const std::string& name, Shape shape) { m.params[name] = zeros(std::move(shape)); };

  he("map.fc0.w", {d, d});
  zero("map.fc0.b", {d});
  he("map.fc1.w", {d, d});
  zero("map.fc1.b", {d});

  int c0 = gen_channels(config, 0);
  he("gen.start.w", {d, c0 * 16});
  zero("gen.start.b", {c0 * 16});
  for (int i = 0; i < config.num_blocks(); ++i) {
    std::string p = "gen.b" + std::to_string(i) + ".";
    int cin = gen_channels(config, i);
    int cout = gen_channels(config, i + 1);
    // Styles start at identity (scale 1, shift 0) so early training is a
    // plain conv net.
    zero(p + "style_s.w", {d, cin});
    zero(p + "style_s.b", {cin});
    zero(p + "style_h.w", {d, cin});
    zero(p + "style_h.b", {cin});
    he(p + "conv.w", {cout, cin, 3, 3});
    zero(p + "conv.b", {cout});
  }
  int clast = gen_channels(config, config.num_blocks());
  he("gen.out.w", {config.channels, clast, 3, 3});
  zero("gen.out.b", {config.channels});

  int prev = config.channels;
  for (int j = 0; j < config.num_blocks(); ++j) {
    std::string p = "disc.c" + std::to_string(j) + ".";
    int w = disc_width(config, j);
    he(p + "w", {w, prev, 4, 4});
    zero(p + "b", {w});
    prev = w;
  }
  he("disc.fc.w", {prev * 4 * 4, 1});
  zero("disc.fc.b", {1});
  return m;
}

NodeId mapping_nodes(Graph& graph, const GanConfig& config, NodeId z, ParamBinder& bind) {
  const Shape& s = graph.shape(z);
  check(s.size() == 2 && s[1] == config.latent_dim, "mapping: expected [N,", config.latent_dim,
        "] input, got ", shape_str(s));
  NodeId h = graph.leaky_relu(
      graph.add_row_vec(graph.matmul(z, bind("map.fc0.w")), bind("map.fc0.b")), 0.2);
  return graph.leaky_relu(
      graph.add_row_vec(graph.matmul(h, bind("map.fc1.w")), bind("map.fc1.b")), 0.2);
}

NodeId generator_nodes(Graph& graph, const GanConfig& config, NodeId w, ParamBinder& bind) {
  const Shape& s = graph.shape(w);
  check(s.size() == 2 && s[1] == config.latent_dim, "generator: expected [N,", config.latent_dim,
        "] input, got ", shape_str(s));
  int n = s[0];
  int c0 = gen_channels(config, 0);
  NodeId x = graph.reshape(
      graph.add_row_vec(graph.matmul(w, bind("gen.start.w")), bind("gen.start.b")),
      {n, c0, 4, 4});
  x = graph.leaky_relu(x, 0.2);
  for (int i = 0; i < config.num_blocks(); ++i) {
    std::string p = "gen.b" + std::to_string(i) + ".";
    NodeId scale = graph.add_scalar(
        graph.add_row_vec(graph.matmul(w, bind(p + "style_s.w")), bind(p + "style_s.b")), 1.0);
    NodeId shift =
        graph.add_row_vec(graph.matmul(w, bind(p + "style_h.w")), bind(p + "style_h.b"));
    x = graph.channel_affine(x, scale, shift);
    x = graph.upsample2x(x);
    x = graph.bias_chan(graph.conv2d(x, bind(p + "conv.w"), 1, 1), bind(p + "conv.b"));
    x = graph.leaky_relu(x, 0.2);
  }
  x = graph.bias_chan(graph.conv2d(x, bind("gen.out.w"), 1, 1), bind("gen.out.b"));
  return graph.sigmoid(x);
}

std::vector<LayerSpec> discriminator_stack(const GanConfig& config) {
  std::vector<LayerSpec> stack;
  for (int j = 0; j < config.num_blocks(); ++j) {
    std::string p = "disc.c" + std::to_string(j) + ".";
    stack.push_back(LayerSpec::conv(p + "w", p + "b", 2, 1));
    stack.push_back(LayerSpec::leaky_relu(0.2));
  }
  stack.push_back(LayerSpec::flatten());
  stack.push_back(LayerSpec::dense("disc.fc.w", "disc.fc.b"));
  return stack;
}

Tensor mapping_forward(const GanModel& model, const Tensor& z) {
  Tensor rows = as_rows(z, "mapping_forward");
  Graph g;
  ParamBinder bind(g, model.params, /*trainable=*/false);
  NodeId w = mapping_nodes(g, model.config, g.constant(rows, "z"), bind);
  g.set_output(g.sum(w));
  g.evaluate();
  return g.value(w);
}

Tensor generate(const GanModel& model, const Tensor& w) {
  Tensor rows = as_rows(w, "generate");
  Graph g;
  ParamBinder bind(g, model.params, /*trainable=*/false);
  NodeId img = generator_nodes(g, model.config, g.constant(rows, "w"), bind);
  g.set_output(g.sum(img));
  g.evaluate();
  return g.value(img);
}

Tensor discriminate(const GanModel& model, const Tensor& x) {
  Tensor batch = as_images(x, "discriminate");
  const Shape& s = batch.shape();
  check(s[1] == model.config.channels && s[2] == model.config.resolution &&
            s[3] == model.config.resolution,
        "discriminate: expected [N,", model.config.channels, ",", model.config.resolution, ",",
        model.config.resolution, "] images, got ", shape_str(s));
  Graph g;
  ParamBinder bind(g, model.params, /*trainable=*/false);
  StackTrace trace =
      stack_forward(g, discriminator_stack(model.config), g.constant(batch, "x"), bind);
  NodeId flat = g.reshape(trace.out, {s[0]});
  g.set_output(g.sum(flat));
  g.evaluate();
  return g.value(flat);
}

double r1_penalty(const GanModel& model, const Tensor& x_batch) {
  Tensor batch = as_images(x_batch, "r1_penalty");
  int n = batch.shape()[0];
  Graph g;
  ParamBinder bind(g, model.params, /*trainable=*/false);
  NodeId x = g.input("x", batch.shape());
  StackTrace trace = stack_forward(g, discriminator_stack(model.config), x, bind);
  Tensor ones({n, 1});
  ones.fill(1.0);
  NodeId grad = stack_input_gradient(g, trace, g.constant(ones, "seed"));
  NodeId penalty = g.scale(g.sum_sq(grad), 1.0 / n);
  g.set_output(penalty);
  g.bind("x", batch);
  return g.evaluate();
}

Tensor truncate(const Tensor& w, const Tensor& w_mean, double psi) {
  check(psi >= 0.0 && psi <= 1.0, "truncate: psi must lie in [0,1], got ", psi);
  check(w_mean.shape().size() == 1, "truncate: w_mean must be [dim], got ",
        shape_str(w_mean.shape()));
  int d = w_mean.shape()[0];
  const Shape& s = w.shape();
  bool rows = s.size() == 2;
  check((rows && s[1] == d) || (s.size() == 1 && s[0] == d),
        "truncate: w shape ", shape_str(s), " does not match w_mean dim ", d);
  Tensor out = w;
  int64_t n = rows ? s[0] : 1;
  for (int64_t i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      int64_t idx = i * d + j;
      out[idx] = w_mean[j] + psi * (w[idx] - w_mean[j]);
    }
  return out;
}

GanModel gan_train(const std::vector<const PairedImage*>& train, const GanConfig& config,
                   const GanTrainConfig& tc) {
  config.validate();
  tc.validate();
  check(!train.empty(), "gan_train: training split is empty");
  for (const PairedImage* img : train) {
    check(img && img->resolution == config.resolution, "gan_train: dataset resolution ",
          img ? img->resolution : 0, " does not match configured ", config.resolution);
  }

  GanModel model = init_gan(config, derive_seed(tc.seed, "init"));
  Rng data_rng(derive_seed(tc.seed, "data"));
  Rng z_rng(derive_seed(tc.seed, "z"));
  Rng aug_rng(derive_seed(tc.seed, "aug"));
  Rng wmean_rng(derive_seed(tc.seed, "wmean"));

  std::vector<std::string> d_names, g_names;
  for (const auto& [name, tensor] : model.params) {
    (name.rfind("disc.", 0) == 0 ? d_names : g_names).push_back(name);
  }

  AdamOptimizer opt_d, opt_g;
  std::ofstream log;
  if (!tc.log_path.empty()) {
    bool fresh = !std::filesystem::exists(tc.log_path) ||
                 std::filesystem::file_size(tc.log_path) == 0;
    log.open(tc.log_path, std::ios::app);
    check(log.good(), "gan_train: cannot open log file ", tc.log_path);
    if (fresh) log << "iteration,d_loss,g_loss,r1\n";
  }

  int n_train = static_cast<int>(train.size());
  int b = tc.batch_size;
  int d = config.latent_dim;
  std::vector<LayerSpec> disc = discriminator_stack(config);
  Tensor ones_seed({b, 1});
  ones_seed.fill(1.0);

  auto sample_z = [&] {
    Tensor z({b, d});
    for (int64_t i = 0; i < z.numel(); ++i) z[i] = z_rng.normal();
    return z;
  };
  auto sample_real = [&] {
    std::vector<const PairedImage*> batch(static_cast<size_t>(b));
    for (int i = 0; i < b; ++i)
      batch[static_cast<size_t>(i)] =
          train[static_cast<size_t>(data_rng.uniform_int(0, n_train - 1))];
    return batch_to_tensor(batch);
  };

  for (int it = 0; it < tc.iterations; ++it) {
    double d_loss = 0.0, g_loss = 0.0, r1_value = 0.0;
    try {
      {
        Graph g;
        ParamBinder frozen(g, model.params, /*trainable=*/false);
        ParamBinder trained(g, model.params, /*trainable=*/true);
        NodeId z = g.constant(sample_z(), "z");
        NodeId fake = generator_nodes(g, config, mapping_nodes(g, config, z, frozen), frozen);
        NodeId x_real = g.input("x_real", {b, config.channels, config.resolution, config.resolution});
        NodeId aug_real = apply_aug(g, x_real, draw_aug(b, tc.disc_aug_prob, aug_rng));
        NodeId aug_fake = apply_aug(g, fake, draw_aug(b, tc.disc_aug_prob, aug_rng));
        StackTrace real_trace = stack_forward(g, disc, aug_real, trained);
        NodeId fake_logit = stack_forward(g, disc, aug_fake, trained).out;
        NodeId loss = g.add(g.mean(g.softplus(g.scale(real_trace.out, -1.0))),
                            g.mean(g.softplus(fake_logit)));
        NodeId grad = stack_input_gradient(g, real_trace, g.constant(ones_seed, "r1_seed"));
        NodeId r1 = g.scale(g.sum_sq(grad), 1.0 / b);
        NodeId total = g.add(loss, g.scale(r1, tc.r1_weight));
        g.set_output(total);
        g.bind("x_real", sample_real());
        d_loss = g.evaluate();
        r1_value = g.value(r1).item();
        opt_d.step(model.params, g.backprop(d_names), tc.lr_d);
      }
      {
        Graph g;
        ParamBinder frozen(g, model.params, /*trainable=*/false);
        ParamBinder trained(g, model.params, /*trainable=*/true);
        NodeId z = g.constant(sample_z(), "z");
        NodeId fake = generator_nodes(g, config, mapping_nodes(g, config, z, trained), trained);
        NodeId aug_fake = apply_aug(g, fake, draw_aug(b, tc.disc_aug_prob, aug_rng));
        NodeId logit = stack_forward(g, disc, aug_fake, frozen).out;
        g.set_output(g.mean(g.softplus(g.scale(logit, -1.0))));
        g_loss = g.evaluate();
        opt_g.step(model.params, g.backprop(g_names), tc.lr_g);
      }
    } catch (const Error& e) {
      fail("gan_train: aborted at iteration ", it, ": ", e.what());
    }
    if (log.is_open()) {
      log << it << ',' << d_loss << ',' << g_loss << ',' << r1_value << '\n';
    }
  }
  if (log.is_open()) log.flush();

  Tensor w_sum({d});
  int remaining = tc.w_mean_samples;
  while (remaining > 0) {
    int chunk = std::min(remaining, 500);
    Tensor z({chunk, d});
    for (int64_t i = 0; i < z.numel(); ++i) z[i] = wmean_rng.normal();
    Tensor w = mapping_forward(model, z);
    for (int i = 0; i < chunk; ++i)
      for (int j = 0; j < d; ++j) w_sum[j] += w.at(i, j);
    remaining -= chunk;
  }
  for (int j = 0; j < d; ++j) w_sum[j] /= tc.w_mean_samples;
  model.w_mean = w_sum;
  model.w_mean_samples = tc.w_mean_samples;

  if (!tc.checkpoint_path.empty()) save_gan(tc.checkpoint_path, model);
  return model;
}

void save_gan(const std::string& path, const GanModel& model) {
  std::map<std::string, Tensor> params = model.params;
  params["w_mean"] = model.w_mean;
  nlohmann::json meta;
  meta["format"] = "latentaug-gan-v1";
  meta["config"] = config_json(model.config);
  meta["w_mean_samples"] = model.w_mean_samples;
  save_params(path, params, meta);
}

GanModel load_gan(const std::string& path) {
  LoadedParams loaded = load_params(path);
  check(loaded.metadata.value("format", "") == std::string("latentaug-gan-v1"),
        "load_gan: unrecognized format in ", path);
  GanModel m;
  m.config = config_from_json(loaded.metadata.at("config"));
  m.config.validate();
  m.w_mean_samples = loaded.metadata.at("w_mean_samples").get<int>();
  auto it = loaded.params.find("w_mean");
  check(it != loaded.params.end(), "load_gan: checkpoint lacks w_mean");
  m.w_mean = it->second;
  loaded.params.erase(it);
  m.params = std::move(loaded.params);
  return m;
}

}  // namespace latentaug
