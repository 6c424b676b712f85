#include "latentaug/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "latentaug/adam.hpp"
#include "latentaug/checkpoint.hpp"
#include "latentaug/error.hpp"
#include "latentaug/rng.hpp"

namespace latentaug {

namespace {

Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

// Shortest round-trip decimal form, so CSV rows are stable across runs and
// parse back to the exact double.
std::string number_str(double v) { return nlohmann::json(v).dump(); }

nlohmann::json config_json(const TranslatorConfig& c) {
  return {{"resolution", c.resolution},
          {"base_channels", c.base_channels},
          {"disc_channels", c.disc_channels}};
}

TranslatorConfig config_from_json(const nlohmann::json& j) {
  TranslatorConfig c;
  c.resolution = j.at("resolution").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.disc_channels = j.at("disc_channels").get<int>();
  return c;
}

// Modality planes as a [N,1,R,R] batch.
Tensor planes_to_batch(const std::vector<PairedImage>& images, bool modality_a) {
  int n = static_cast<int>(images.size());
  int res = images[0].resolution;
  Tensor out({n, 1, res, res});
  int64_t per = static_cast<int64_t>(res) * res;
  for (int i = 0; i < n; ++i) {
    const std::vector<float>& plane = modality_a ? images[static_cast<size_t>(i)].modality_a
                                                 : images[static_cast<size_t>(i)].modality_b;
    check(static_cast<int64_t>(plane.size()) == per, "train_translator: sample ",
          images[static_cast<size_t>(i)].sample_id, " has a malformed plane");
    for (int64_t k = 0; k < per; ++k) out.data()[i * per + k] = plane[static_cast<size_t>(k)];
  }
  return out;
}

std::string join_ids(const std::vector<const PairedImage*>& batch) {
  std::string out;
  for (const PairedImage* im : batch) {
    if (!out.empty()) out += ", ";
    out += im->sample_id;
  }
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

}  // namespace

void TranslatorConfig::validate() const {
  check(resolution >= 8 && resolution % 4 == 0,
        "translator config: resolution must be >= 8 and divisible by 4, got ", resolution);
  check(base_channels >= 4, "translator config: base_channels must be >= 4, got ", base_channels);
  check(disc_channels >= 4, "translator config: disc_channels must be >= 4, got ", disc_channels);
}

void DownstreamConfig::validate() const {
  check(epochs >= 1, "downstream config: epochs must be >= 1, got ", epochs);
  check(batch_size >= 1, "downstream config: batch_size must be >= 1, got ", batch_size);
  check(std::isfinite(lr) && lr > 0.0, "downstream config: lr must be positive, got ", lr);
  check(std::isfinite(l1_weight) && l1_weight >= 0.0,
        "downstream config: l1_weight must be >= 0, got ", l1_weight);
}

double DownstreamConfig::lr_at_epoch(int epoch) const {
  check(epoch >= 0 && epoch < epochs, "downstream config: epoch ", epoch, " outside [0,",
        epochs, ")");
  int decay_start = epochs / 2;
  if (epoch < decay_start) return lr;
  return lr * static_cast<double>(epochs - epoch) / static_cast<double>(epochs - decay_start);
}

TranslatorModel init_translator(const TranslatorConfig& config, std::uint64_t seed) {
  config.validate();
  TranslatorModel m;
  m.config = config;
  int c = config.base_channels;

  auto he = [&](const std::string& name, Shape shape) {
    Rng rng(derive_seed(seed, name));
    m.params[name] = he_normal(std::move(shape), rng);
  };
  auto zero = [&](const std::string& name, Shape shape) {
    m.params[name] = zeros(std::move(shape));
  };

  he("trans.e0.w", {c, 1, 3, 3});
  zero("trans.e0.b", {c});
  he("trans.e1.w", {2 * c, c, 4, 4});
  zero("trans.e1.b", {2 * c});
  he("trans.e2.w", {4 * c, 2 * c, 4, 4});
  zero("trans.e2.b", {4 * c});
  he("trans.mid.w", {4 * c, 4 * c, 3, 3});
  zero("trans.mid.b", {4 * c});
  he("trans.u1.w", {2 * c, 6 * c, 3, 3});
  zero("trans.u1.b", {2 * c});
  he("trans.u0.w", {c, 3 * c, 3, 3});
  zero("trans.u0.b", {c});
  he("trans.out.w", {1, c, 3, 3});
  zero("trans.out.b", {1});

  int dc = config.disc_channels;
  he("tdisc.c0.w", {dc, 2, 4, 4});
  zero("tdisc.c0.b", {dc});
  he("tdisc.c1.w", {2 * dc, dc, 4, 4});
  zero("tdisc.c1.b", {2 * dc});
  int quarter = config.resolution / 4;
  he("tdisc.fc.w", {2 * dc * quarter * quarter, 1});
  zero("tdisc.fc.b", {1});
  return m;
}

NodeId translator_nodes(Graph& graph, const TranslatorConfig& config, NodeId b,
                        ParamBinder& bind) {
  const Shape& s = graph.shape(b);
  check(s.size() == 4 && s[1] == 1 && s[2] == config.resolution && s[3] == config.resolution,
        "translator: expected [N,1,", config.resolution, ",", config.resolution, "] input");
  auto conv = [&](NodeId x, const std::string& name, int stride) {
    return graph.bias_chan(graph.conv2d(x, bind(name + ".w"), stride, 1), bind(name + ".b"));
  };
  NodeId e0 = graph.leaky_relu(conv(b, "trans.e0", 1), 0.2);
  NodeId e1 = graph.leaky_relu(conv(e0, "trans.e1", 2), 0.2);
  NodeId e2 = graph.leaky_relu(conv(e1, "trans.e2", 2), 0.2);
  NodeId mid = graph.leaky_relu(conv(e2, "trans.mid", 1), 0.2);
  NodeId u1 = graph.leaky_relu(conv(graph.concat_chan(graph.upsample2x(mid), e1), "trans.u1", 1),
                               0.2);
  NodeId u0 = graph.leaky_relu(conv(graph.concat_chan(graph.upsample2x(u1), e0), "trans.u0", 1),
                               0.2);
  return graph.sigmoid(conv(u0, "trans.out", 1));
}

std::vector<LayerSpec> translator_disc_stack(const TranslatorConfig& config) {
  (void)config;
  std::vector<LayerSpec> stack;
  stack.push_back(LayerSpec::conv("tdisc.c0.w", "tdisc.c0.b", 2, 1));
  stack.push_back(LayerSpec::leaky_relu(0.2));
  stack.push_back(LayerSpec::conv("tdisc.c1.w", "tdisc.c1.b", 2, 1));
  stack.push_back(LayerSpec::leaky_relu(0.2));
  stack.push_back(LayerSpec::flatten());
  stack.push_back(LayerSpec::dense("tdisc.fc.w", "tdisc.fc.b"));
  return stack;
}

Tensor translate(const TranslatorModel& model, const Tensor& b) {
  Shape s = b.shape();
  Tensor input = b;
  if (s.size() == 3) {
    input = reshaped(b, {1, s[0], s[1], s[2]});
    s = input.shape();
  }
  check(s.size() == 4, "translate: expected [1,R,R] or [N,1,R,R], got rank ", b.shape().size());
  Graph g;
  ParamBinder frozen(g, model.params, false);
  NodeId out = translator_nodes(g, model.config, g.constant(input, "b"), frozen);
  g.set_output(g.sum(out));
  g.evaluate();
  return g.value(out);
}

TranslatorModel train_translator(const std::vector<const PairedImage*>& train,
                                 const AugmentContext& policy, PolicyKind kind,
                                 const DownstreamConfig& config, const TranslatorConfig& arch) {
  config.validate();
  arch.validate();
  check(!train.empty(), "train_translator: training split is empty");
  for (const PairedImage* img : train) {
    check(img && img->resolution == arch.resolution, "train_translator: dataset resolution ",
          img ? img->resolution : 0, " does not match configured ", arch.resolution);
  }

  TranslatorModel model = init_translator(arch, derive_seed(config.seed, "init"));
  Rng order_rng(derive_seed(config.seed, "order"));
  Rng aug_rng(derive_seed(config.seed, "aug"));

  std::vector<std::string> d_names, g_names;
  for (const auto& [name, tensor] : model.params) {
    (name.rfind("tdisc.", 0) == 0 ? d_names : g_names).push_back(name);
  }

  // The conventional conditional-translation optimizer setup: heavier
  // momentum makes the adversarial signal oscillate.
  AdamConfig adam_config;
  adam_config.beta1 = 0.5;
  AdamOptimizer opt_d(adam_config), opt_g(adam_config);

  std::ofstream log;
  if (!config.log_path.empty()) {
    bool fresh = !std::filesystem::exists(config.log_path) ||
                 std::filesystem::file_size(config.log_path) == 0;
    log.open(config.log_path, std::ios::app);
    check(log.good(), "train_translator: cannot open log file ", config.log_path);
    if (fresh) log << "epoch,iteration,d_loss,g_loss,l1\n";
  }

  std::vector<LayerSpec> disc = translator_disc_stack(arch);
  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  int iteration = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double lr = config.lr_at_epoch(epoch);
    order_rng.shuffle(order);
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
      size_t stop = std::min(order.size(), start + static_cast<size_t>(config.batch_size));
      std::vector<const PairedImage*> batch;
      for (size_t i = start; i < stop; ++i) batch.push_back(train[order[i]]);

      std::vector<PairedImage> augmented;
      try {
        augmented = augment_batch(policy, batch, kind, aug_rng);
      } catch (const Error& e) {
        fail("train_translator: augmentation failed on a batch of [", join_ids(batch),
             "]: ", e.what());
      }
      int n = static_cast<int>(augmented.size());
      Tensor b_img = planes_to_batch(augmented, false);
      Tensor a_img = planes_to_batch(augmented, true);

      double d_loss = 0.0, g_loss = 0.0, l1_value = 0.0;
      try {
        {
          Graph g;
          ParamBinder frozen(g, model.params, /*trainable=*/false);
          ParamBinder trained(g, model.params, /*trainable=*/true);
          NodeId b_in = g.constant(b_img, "b");
          NodeId a_real = g.constant(a_img, "a");
          NodeId fake = translator_nodes(g, arch, b_in, frozen);
          NodeId real_logit = stack_forward(g, disc, g.concat_chan(b_in, a_real), trained).out;
          NodeId fake_logit = stack_forward(g, disc, g.concat_chan(b_in, fake), trained).out;
          g.set_output(g.add(g.mean(g.softplus(g.scale(real_logit, -1.0))),
                             g.mean(g.softplus(fake_logit))));
          d_loss = g.evaluate();
          opt_d.step(model.params, g.backprop(d_names), lr);
        }
        {
          Graph g;
          ParamBinder frozen(g, model.params, /*trainable=*/false);
          ParamBinder trained(g, model.params, /*trainable=*/true);
          NodeId b_in = g.constant(b_img, "b");
          NodeId a_real = g.constant(a_img, "a");
          NodeId fake = translator_nodes(g, arch, b_in, trained);
          NodeId logit = stack_forward(g, disc, g.concat_chan(b_in, fake), frozen).out;
          NodeId l1 = g.mean(g.abs(g.sub(fake, a_real)));
          g.set_output(g.add(g.mean(g.softplus(g.scale(logit, -1.0))),
                             g.scale(l1, config.l1_weight)));
          g_loss = g.evaluate();
          l1_value = g.value(l1).item();
          opt_g.step(model.params, g.backprop(g_names), lr);
        }
      } catch (const Error& e) {
        fail("train_translator: aborted at epoch ", epoch, " iteration ", iteration, " (batch of ",
             n, "): ", e.what());
      }
      if (log.is_open()) {
        log << epoch << ',' << iteration << ',' << d_loss << ',' << g_loss << ',' << l1_value
            << '\n';
      }
      ++iteration;
    }
  }
  if (log.is_open()) log.flush();

  if (!config.checkpoint_path.empty()) save_translator(config.checkpoint_path, model);
  return model;
}

void save_translator(const std::string& path, const TranslatorModel& model) {
  nlohmann::json meta;
  meta["format"] = "latentaug-translator-v1";
  meta["config"] = config_json(model.config);
  save_params(path, model.params, meta);
}

TranslatorModel load_translator(const std::string& path) {
  LoadedParams loaded = load_params(path);
  check(loaded.metadata.value("format", "") == std::string("latentaug-translator-v1"),
        "load_translator: unrecognized format in ", path);
  TranslatorModel m;
  m.config = config_from_json(loaded.metadata.at("config"));
  m.config.validate();
  m.params = std::move(loaded.params);
  return m;
}

SampleMetricRow eval_prediction(const PairedImage& sample, const Tensor& predicted_a,
                                const FeatureExtractor& extractor, const std::string& policy) {
  int res = sample.resolution;
  check(predicted_a.shape() == Shape({res, res}), "eval_prediction: prediction for ",
        sample.sample_id, " must be [", res, ",", res, "]");
  Tensor reference = plane_to_tensor(sample.modality_a, res);
  Tensor mask = plane_to_tensor(sample.body_mask, res);
  ImageMetrics im = image_metrics(reference, predicted_a, mask);

  SampleMetricRow row;
  row.sample_id = sample.sample_id;
  row.policy = policy;
  row.mae = im.mae;
  row.ssim = im.ssim;
  row.psnr = im.psnr;
  row.perc = perceptual_distance(reshaped(reference, {1, res, res}),
                                 reshaped(predicted_a, {1, res, res}), extractor);
  return row;
}

std::vector<SampleMetricRow> eval_translator(const TranslatorModel& model,
                                             const FeatureExtractor& extractor,
                                             const std::vector<const PairedImage*>& test,
                                             const std::string& policy) {
  check(!test.empty(), "eval_translator: test split is empty");
  int res = model.config.resolution;
  std::vector<SampleMetricRow> rows;
  rows.reserve(test.size());
  for (const PairedImage* sample : test) {
    check(sample != nullptr, "eval_translator: null sample");
    check(sample->resolution == res, "eval_translator: sample ", sample->sample_id,
          " resolution ", sample->resolution, " does not match model resolution ", res);
    Tensor b = reshaped(plane_to_tensor(sample->modality_b, res), {1, 1, res, res});
    Tensor predicted = reshaped(translate(model, b), {res, res});
    rows.push_back(eval_prediction(*sample, predicted, extractor, policy));
  }
  return rows;
}

MetricReport summarize_samples(const std::vector<SampleMetricRow>& rows) {
  check(!rows.empty(), "summarize_samples: no rows");
  MetricReport report;
  report.policy = rows[0].policy;
  double mae = 0.0, ssim = 0.0, psnr = 0.0, perc = 0.0;
  for (const SampleMetricRow& row : rows) {
    check(row.policy == report.policy, "summarize_samples: mixed policies '", report.policy,
          "' and '", row.policy, "'");
    mae += row.mae;
    ssim += row.ssim;
    psnr += row.psnr;
    perc += row.perc;
  }
  double n = static_cast<double>(rows.size());
  report.values["mae"] = mae / n;
  report.values["ssim"] = ssim / n;
  report.values["psnr"] = psnr / n;
  report.values["perc"] = perc / n;
  return report;
}

void save_sample_metrics(const std::string& path, const std::vector<SampleMetricRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  check(out.good(), "save_sample_metrics: cannot open ", path);
  out << "sample_id,policy,mae,ssim,psnr,perc\n";
  for (const SampleMetricRow& row : rows) {
    check(row.sample_id.find(',') == std::string::npos &&
              row.policy.find(',') == std::string::npos,
          "save_sample_metrics: ids and policies must not contain commas");
    out << row.sample_id << ',' << row.policy << ',' << number_str(row.mae) << ','
        << number_str(row.ssim) << ',' << number_str(row.psnr) << ',' << number_str(row.perc)
        << '\n';
  }
  out.flush();
  check(out.good(), "save_sample_metrics: write to ", path, " failed");
}

std::vector<SampleMetricRow> load_sample_metrics(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "load_sample_metrics: cannot open ", path);
  std::string line;
  check(static_cast<bool>(std::getline(in, line)), "load_sample_metrics: ", path, " is empty");
  check(line == "sample_id,policy,mae,ssim,psnr,perc", "load_sample_metrics: unexpected header '",
        line, "' in ", path);
  std::vector<SampleMetricRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields = split_csv_line(line);
    check(fields.size() == 6, "load_sample_metrics: line ", line_no, " of ", path, " has ",
          fields.size(), " fields, expected 6");
    SampleMetricRow row;
    row.sample_id = fields[0];
    row.policy = fields[1];
    try {
      row.mae = std::stod(fields[2]);
      row.ssim = std::stod(fields[3]);
      row.psnr = std::stod(fields[4]);
      row.perc = std::stod(fields[5]);
    } catch (const std::exception&) {
      fail("load_sample_metrics: malformed number on line ", line_no, " of ", path);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace latentaug
