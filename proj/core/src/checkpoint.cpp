#include "latentaug/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "latentaug/error.hpp"

namespace latentaug {

namespace fs = std::filesystem;
using nlohmann::json;

std::string with_extension(const std::string& path, const std::string& ext) {
  return fs::path(path).replace_extension(ext).string();
}

void write_blob(const std::string& path, const void* data, size_t bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check(out.good(), "cannot open '", path, "' for writing");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  check(out.good(), "write failed for '", path, "'");
}

std::vector<char> read_blob(const std::string& path, size_t expected_bytes) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  check(in.good(), "cannot open '", path, "'");
  auto size = static_cast<size_t>(in.tellg());
  check(size == expected_bytes, "blob '", path, "' has ", size, " bytes, expected ",
        expected_bytes);
  std::vector<char> buf(size);
  in.seekg(0);
  in.read(buf.data(), static_cast<std::streamsize>(size));
  check(in.good(), "read failed for '", path, "'");
  return buf;
}

json load_json(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open '", path, "'");
  json j = json::parse(in, nullptr, /*allow_exceptions=*/false);
  check(!j.is_discarded(), "malformed JSON in '", path, "'");
  return j;
}

void save_json(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  check(out.good(), "cannot open '", path, "' for writing");
  out << j.dump(2) << "\n";
  check(out.good(), "write failed for '", path, "'");
}

void save_params(const std::string& path, const std::map<std::string, Tensor>& params,
                 const json& metadata) {
  std::string blob_path = with_extension(path, ".bin");

  json tensors = json::array();
  std::vector<double> blob;
  int64_t offset = 0;
  for (const auto& [name, t] : params) {
    json entry;
    entry["name"] = name;
    entry["shape"] = t.shape();
    entry["offset"] = offset;
    entry["size"] = t.numel();
    tensors.push_back(std::move(entry));
    blob.insert(blob.end(), t.data(), t.data() + t.numel());
    offset += t.numel();
  }

  json manifest;
  manifest["format"] = "latentaug-params-v1";
  manifest["blob"] = fs::path(blob_path).filename().string();
  manifest["dtype"] = "float64le";
  manifest["tensors"] = std::move(tensors);
  manifest["metadata"] = metadata;

  write_blob(blob_path, blob.data(), blob.size() * sizeof(double));
  save_json(path, manifest);
}

LoadedParams load_params(const std::string& path) {
  json manifest = load_json(path);
  check(manifest.value("format", "") == "latentaug-params-v1", "'", path,
        "' is not a parameter checkpoint manifest");
  check(manifest.value("dtype", "") == "float64le", "'", path, "' has unsupported dtype '",
        manifest.value("dtype", ""), "'");

  std::string blob_path =
      (fs::path(path).parent_path() / manifest.at("blob").get<std::string>()).string();

  int64_t total = 0;
  for (const auto& entry : manifest.at("tensors")) {
    total += entry.at("size").get<int64_t>();
  }
  std::vector<char> raw = read_blob(blob_path, static_cast<size_t>(total) * sizeof(double));

  LoadedParams out;
  out.metadata = manifest.value("metadata", json::object());
  for (const auto& entry : manifest.at("tensors")) {
    std::string name = entry.at("name").get<std::string>();
    Shape shape = entry.at("shape").get<Shape>();
    int64_t offset = entry.at("offset").get<int64_t>();
    int64_t size = entry.at("size").get<int64_t>();
    check(numel_of(shape) == size, "tensor '", name, "' in '", path, "' declares shape ",
          shape_str(shape), " but size ", size);
    check(offset >= 0 && offset + size <= total, "tensor '", name, "' in '", path,
          "' is out of blob bounds");
    std::vector<double> data(static_cast<size_t>(size));
    std::memcpy(data.data(), raw.data() + offset * static_cast<int64_t>(sizeof(double)),
                static_cast<size_t>(size) * sizeof(double));
    out.params.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

}  // namespace latentaug
