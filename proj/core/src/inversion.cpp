#include "latentaug/inversion.hpp"

#include <algorithm>
#include <filesystem>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "latentaug/adam.hpp"
#include "latentaug/checkpoint.hpp"
#include "latentaug/error.hpp"

namespace latentaug {

namespace {

// Per-layer feature maps of a fixed image, evaluated once so the
// optimization loop only recomputes the generator side.
std::vector<Tensor> target_features(const FeatureExtractor& extractor, const Tensor& x) {
  Graph g;
  std::vector<NodeId> feats = extractor.features(g, g.constant(x, "x"));
  g.set_output(g.sum(feats.back()));
  g.evaluate();
  std::vector<Tensor> out;
  for (NodeId f : feats) out.push_back(g.value(f));
  return out;
}

}  // namespace

void InversionConfig::validate() const {
  check(steps >= 1, "inversion config: steps must be >= 1, got ", steps);
  check(lr > 0.0, "inversion config: lr must be positive, got ", lr);
  check(pixel_weight >= 0.0 && perceptual_weight >= 0.0,
        "inversion config: loss weights must be >= 0");
  check(pixel_weight > 0.0 || perceptual_weight > 0.0,
        "inversion config: at least one loss weight must be positive");
}

InversionResult invert(const GanModel& model, const FeatureExtractor& extractor,
                       const PairedImage& x, const InversionConfig& config,
                       const Tensor* w_init) {
  config.validate();
  model.config.validate();
  check(x.resolution == model.config.resolution, "invert: image resolution ", x.resolution,
        " does not match model resolution ", model.config.resolution);
  check(extractor.in_channels() == model.config.channels, "invert: extractor expects ",
        extractor.in_channels(), " channels, model emits ", model.config.channels);

  int d = model.config.latent_dim;
  Tensor w({1, d});
  if (w_init) {
    check(w_init->shape() == Shape{d} || w_init->shape() == Shape{1, d},
          "invert: w_init must have dimension ", d, ", got ", shape_str(w_init->shape()));
    std::copy(w_init->data(), w_init->data() + d, w.data());
  } else {
    check(model.w_mean_samples > 0,
          "invert: model has no estimated latent mean; pass w_init or train first");
    std::copy(model.w_mean.data(), model.w_mean.data() + d, w.data());
  }

  Tensor target = image_to_tensor(x);
  Tensor target_batch({1, model.config.channels, x.resolution, x.resolution});
  std::copy(target.data(), target.data() + target.numel(), target_batch.data());
  std::vector<Tensor> feats_x = target_features(extractor, target_batch);
  std::vector<double> sizes = extractor.feature_sizes(x.resolution, x.resolution);

  Graph g;
  ParamBinder frozen(g, model.params, /*trainable=*/false);
  NodeId win = g.input("w", {1, d});
  NodeId img = generator_nodes(g, model.config, win, frozen);
  NodeId loss = -1;
  if (config.pixel_weight > 0.0) {
    NodeId pix = g.scale(g.sum_sq(g.sub(img, g.constant(target_batch, "target"))),
                         config.pixel_weight / static_cast<double>(target_batch.numel()));
    loss = pix;
  }
  if (config.perceptual_weight > 0.0) {
    std::vector<NodeId> feats = extractor.features(g, img);
    for (size_t l = 0; l < feats.size(); ++l) {
      NodeId term =
          g.scale(g.sum_sq(g.sub(feats[l], g.constant(feats_x[l], "target_feat" + std::to_string(l)))),
                  config.perceptual_weight / sizes[l]);
      loss = (loss < 0) ? term : g.add(loss, term);
    }
  }
  g.set_output(loss);

  InversionResult result;
  result.pixel_weight = config.pixel_weight;
  result.perceptual_weight = config.perceptual_weight;
  result.final_loss = std::numeric_limits<double>::infinity();
  AdamState adam({1, d});
  for (int step = 0; step < config.steps; ++step) {
    double value = 0.0;
    try {
      g.bind("w", w);
      value = g.evaluate();
    } catch (const Error& e) {
      fail("invert: aborted at step ", step, ": ", e.what());
    }
    result.trajectory.push_back(value);
    if (value < result.final_loss) {
      result.final_loss = value;
      result.w_star = Tensor({d});
      std::copy(w.data(), w.data() + d, result.w_star.data());
    }
    adam.step(w, g.backprop({"w"}).at("w"), config.lr);
  }
  return result;
}

const Tensor& LatentTable::at(const std::string& sample_id) const {
  auto it = latents.find(sample_id);
  check(it != latents.end(), "latent table: no entry for sample '", sample_id, "'");
  return it->second;
}

Tensor LatentTable::select(const std::vector<std::string>& sample_ids) const {
  check(!sample_ids.empty(), "latent table: empty selection");
  std::vector<std::string> missing;
  for (const auto& id : sample_ids) {
    if (!latents.count(id)) missing.push_back(id);
  }
  if (!missing.empty()) {
    std::ostringstream oss;
    for (size_t i = 0; i < missing.size(); ++i) oss << (i ? ", " : "") << missing[i];
    fail("latent table: missing ", missing.size(), " sample(s): ", oss.str());
  }
  Tensor out({static_cast<int>(sample_ids.size()), dim});
  for (size_t i = 0; i < sample_ids.size(); ++i) {
    const Tensor& row = latents.at(sample_ids[i]);
    std::copy(row.data(), row.data() + dim, out.data() + static_cast<int64_t>(i) * dim);
  }
  return out;
}

LatentTable invert_dataset(const GanModel& model, const FeatureExtractor& extractor,
                           const std::vector<const PairedImage*>& images,
                           const InversionConfig& config) {
  check(!images.empty(), "invert_dataset: no images");
  LatentTable table;
  table.dim = model.config.latent_dim;
  for (const PairedImage* img : images) {
    check(img != nullptr, "invert_dataset: null image");
    check(!table.latents.count(img->sample_id), "invert_dataset: duplicate sample id '",
          img->sample_id, "'");
    InversionResult r = invert(model, extractor, *img, config);
    table.ids.push_back(img->sample_id);
    table.latents[img->sample_id] = r.w_star;
  }
  return table;
}

void save_latent_table(const std::string& path, const LatentTable& table) {
  check(!table.ids.empty(), "save_latent_table: empty table");
  check(table.ids.size() == table.latents.size(),
        "save_latent_table: id list and latent map disagree");
  std::vector<double> blob;
  blob.reserve(table.ids.size() * static_cast<size_t>(table.dim));
  for (const auto& id : table.ids) {
    auto it = table.latents.find(id);
    check(it != table.latents.end(), "save_latent_table: id '", id, "' has no latent");
    check(it->second.shape() == Shape{table.dim}, "save_latent_table: latent for '", id,
          "' has shape ", shape_str(it->second.shape()), ", expected [", table.dim, "]");
    blob.insert(blob.end(), it->second.data(), it->second.data() + table.dim);
  }
  std::string blob_path = with_extension(path, ".bin");
  write_blob(blob_path, blob.data(), blob.size() * sizeof(double));

  nlohmann::json j;
  j["format"] = "latentaug-latents-v1";
  j["dim"] = table.dim;
  j["count"] = table.ids.size();
  j["blob"] = std::filesystem::path(blob_path).filename().string();
  j["ids"] = table.ids;
  save_json(path, j);
}

LatentTable load_latent_table(const std::string& path) {
  nlohmann::json j = load_json(path);
  check(j.value("format", "") == std::string("latentaug-latents-v1"),
        "load_latent_table: unrecognized format in ", path);
  LatentTable table;
  table.dim = j.at("dim").get<int>();
  check(table.dim >= 1, "load_latent_table: bad dim ", table.dim);
  table.ids = j.at("ids").get<std::vector<std::string>>();
  size_t count = j.at("count").get<size_t>();
  check(count == table.ids.size(), "load_latent_table: count ", count, " does not match ",
        table.ids.size(), " ids");

  std::string blob_path =
      (std::filesystem::path(path).parent_path() / j.at("blob").get<std::string>()).string();
  std::vector<char> bytes =
      read_blob(blob_path, count * static_cast<size_t>(table.dim) * sizeof(double));
  const double* values = reinterpret_cast<const double*>(bytes.data());
  for (size_t i = 0; i < table.ids.size(); ++i) {
    Tensor row({table.dim});
    std::copy(values + i * static_cast<size_t>(table.dim),
              values + (i + 1) * static_cast<size_t>(table.dim), row.data());
    check(!table.latents.count(table.ids[i]), "load_latent_table: duplicate id '", table.ids[i],
          "'");
    table.latents[table.ids[i]] = std::move(row);
  }
  return table;
}

}  // namespace latentaug
