#pragma once

#include <map>
#include <string>
#include <utility>

#include <json.hpp>

#include "latentaug/tensor.hpp"

namespace latentaug {

// Parameter checkpoints: a JSON manifest next to a raw little-endian
// float64 blob. The manifest lists tensors in name order with shapes and
// element offsets, so a rerun under the same seed produces byte-identical
// files.
//
// `path` names the manifest; the blob lives at the same path with a .bin
// extension.
void save_params(const std::string& path, const std::map<std::string, Tensor>& params,
                 const nlohmann::json& metadata = nlohmann::json::object());

struct LoadedParams {
  std::map<std::string, Tensor> params;
  nlohmann::json metadata;
};

LoadedParams load_params(const std::string& path);

// Raw blob helpers shared with the dataset / latent-table writers.
void write_blob(const std::string& path, const void* data, size_t bytes);
std::vector<char> read_blob(const std::string& path, size_t expected_bytes);

// Reads a JSON file, failing with the path on parse errors.
nlohmann::json load_json(const std::string& path);
void save_json(const std::string& path, const nlohmann::json& j);

// Replaces (or appends) the path's extension.
std::string with_extension(const std::string& path, const std::string& ext);

}  // namespace latentaug
