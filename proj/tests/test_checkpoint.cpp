#include "latentaug/checkpoint.hpp"

#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "latentaug/error.hpp"
#include "latentaug/rng.hpp"

namespace latentaug {
namespace {

namespace fs = std::filesystem;

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("latentaug-ckpt-" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

std::map<std::string, Tensor> sample_params() {
  Rng rng(99);
  std::map<std::string, Tensor> p;
  Tensor a({3, 4});
  Tensor b({2, 2, 3, 3});
  Tensor c({5});
  for (int64_t i = 0; i < a.numel(); ++i) a[i] = rng.normal();
  for (int64_t i = 0; i < b.numel(); ++i) b[i] = rng.normal();
  for (int64_t i = 0; i < c.numel(); ++i) c[i] = rng.normal();
  p.emplace("dense.w", std::move(a));
  p.emplace("conv.w", std::move(b));
  p.emplace("bias", std::move(c));
  return p;
}

TEST_F(CheckpointTest, RoundtripIsBitExact) {
  auto params = sample_params();
  nlohmann::json meta;
  meta["iterations"] = 123;
  meta["seed"] = 42;
  save_params(path("model.json"), params, meta);

  auto loaded = load_params(path("model.json"));
  EXPECT_EQ(loaded.metadata.at("iterations"), 123);
  EXPECT_EQ(loaded.metadata.at("seed"), 42);
  ASSERT_EQ(loaded.params.size(), params.size());
  for (const auto& [name, t] : params) {
    const Tensor& l = loaded.params.at(name);
    ASSERT_EQ(l.shape(), t.shape());
    for (int64_t i = 0; i < t.numel(); ++i) ASSERT_EQ(l[i], t[i]) << name << "[" << i << "]";
  }
}

TEST_F(CheckpointTest, RewritingProducesIdenticalBytes) {
  auto params = sample_params();
  save_params(path("a.json"), params);
  save_params(path("b.json"), params);

  auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  // Manifests name their own blob file, so compare blobs and the tensor
  // tables separately.
  EXPECT_EQ(slurp(path("a.bin")), slurp(path("b.bin")));
  EXPECT_EQ(load_json(path("a.json")).at("tensors"), load_json(path("b.json")).at("tensors"));
}

TEST_F(CheckpointTest, MissingFileFails) {
  EXPECT_THROW(load_params(path("nope.json")), Error);
}

TEST_F(CheckpointTest, MalformedJsonFails) {
  std::ofstream(path("bad.json")) << "{ not json";
  EXPECT_THROW(load_params(path("bad.json")), Error);
}

TEST_F(CheckpointTest, WrongFormatTagFails) {
  std::ofstream(path("other.json")) << R"({"format":"something-else"})";
  EXPECT_THROW(load_params(path("other.json")), Error);
}

TEST_F(CheckpointTest, TruncatedBlobFails) {
  auto params = sample_params();
  save_params(path("model.json"), params);
  fs::resize_file(path("model.bin"), 8);
  try {
    load_params(path("model.json"));
    FAIL() << "expected size mismatch";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("expected"), std::string::npos);
  }
}

}  // namespace
}  // namespace latentaug
