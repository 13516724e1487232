#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <string>

#include "dsdf/checkpoint.hpp"
#include "dsdf/model.hpp"
#include "dsdf/params.hpp"

using namespace dsdf;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "dsdf_checkpoint_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

ModelConfig tiny() {
  ModelConfig c;
  c.image_size = 16;
  c.embed_dim = 8;
  c.blood_dim = 8;
  return c;
}

}  // namespace

TEST(ParamStore, SeededInitIsReproducibleAndBounded) {
  ParamStore<float> a(11), b(11), c(12);
  auto wa = a.uniform("w", {10, 10}, 25), wb = b.uniform("w", {10, 10}, 25), wc = c.uniform("w", {10, 10}, 25);
  bool differs = false;
  for (std::size_t i = 0; i < wa.size(); ++i) {
    EXPECT_EQ(wa[i], wb[i]);
    EXPECT_LE(std::abs(wa[i]), std::sqrt(1.f / 25.f));
    differs = differs || wa[i] != wc[i];
  }
  EXPECT_TRUE(differs);
  EXPECT_THROW(a.zeros("w", {1}), ContractError);
  EXPECT_EQ(param_group("csaf.ffn.w1"), "csaf");
}

TEST(ParamStore, ModelParametersCarryModulePrefixes) {
  DeepfakeDetector<float> model(tiny(), 1);
  std::set<std::string> groups;
  for (const auto& [name, t] : model.params().entries()) groups.insert(param_group(name));
  EXPECT_EQ(groups, (std::set<std::string>{"spatial", "freq", "csaf", "mpe", "ctrm", "head", "blood"}));
}

TEST(Checkpoint, LayoutIsLittleEndianAsDocumented) {
  const std::string bytes = encode_checkpoint<float>({{"ab", Tensor<float>({2}, {1.0f, -2.5f})}});
  std::string want = "DSDF";
  auto u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) want.push_back(char((v >> (8 * i)) & 0xFF));
  };
  u32(1);  // version
  u32(1);  // count
  u32(2);
  want += "ab";
  u32(1);  // rank
  u32(2);  // extent
  u32(std::bit_cast<std::uint32_t>(1.0f));
  u32(std::bit_cast<std::uint32_t>(-2.5f));
  EXPECT_EQ(bytes, want);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(-1e6f, 1e6f);
  std::vector<float> special{0.0f, -0.0f, std::numeric_limits<float>::denorm_min(), std::numeric_limits<float>::max(),
                             1.0f / 3.0f};
  for (int i = 0; i < 200; ++i) special.push_back(u(rng));
  std::vector<NamedTensor<float>> saved{{"x.values", Tensor<float>({special.size()}, special)},
                                        {"y", Tensor<float>({2, 3, 1}, {1, 2, 3, 4, 5, 6})}};
  const auto path = temp_file("roundtrip.dsdf");
  save_checkpoint(path.string(), saved);
  const auto loaded = read_checkpoint(path.string());
  ASSERT_EQ(loaded.size(), 2u);
  EXPECT_EQ(loaded[0].name, "x.values");
  EXPECT_EQ(loaded[1].tensor.shape(), (Shape{2, 3, 1}));
  for (std::size_t i = 0; i < special.size(); ++i) {
    EXPECT_EQ(std::bit_cast<std::uint32_t>(loaded[0].tensor[i]), std::bit_cast<std::uint32_t>(special[i]));
  }
}

TEST(Checkpoint, ModelSaveLoadReproducesForwardPass) {
  DeepfakeDetector<float> a(tiny(), 5), b(tiny(), 6);
  const auto path = temp_file("model.dsdf");
  save_checkpoint(path.string(), a.params().entries());
  load_into(b.params(), read_checkpoint(path.string()));
  std::mt19937_64 rng(1);
  RgbImage img(16, 16);
  std::uniform_real_distribution<double> u(0, 1);
  for (auto& v : img.data) v = u(rng);
  const auto in = prepare_inputs<float>(img);
  NoGradGuard ng;
  EXPECT_EQ(a.forward(in).p[0], b.forward(in).p[0]);
}

TEST(Checkpoint, CorruptMagicIsRejected) {
  std::string bytes = encode_checkpoint<float>({{"a", Tensor<float>({1}, {1.f})}});
  bytes[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bytes, "mem"), CheckpointError);
}

TEST(Checkpoint, TruncationAndTrailingBytesAreRejected) {
  const std::string bytes = encode_checkpoint<float>({{"a", Tensor<float>({3}, {1.f, 2.f, 3.f})}});
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 1), "mem"), CheckpointError);
  EXPECT_THROW(decode_checkpoint(bytes + "x", "mem"), CheckpointError);
  std::string bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_THROW(decode_checkpoint(bad_version, "mem"), CheckpointError);
  EXPECT_THROW(read_checkpoint(temp_file("missing.dsdf").string()), CheckpointError);
}

TEST(Checkpoint, GeometryMismatchNamesTheTensor) {
  ModelConfig wider = tiny();
  wider.embed_dim = 12;
  DeepfakeDetector<float> small(tiny(), 1), big(wider, 1);
  try {
    load_into(big.params(), decode_checkpoint(encode_checkpoint(small.params().entries()), "mem"));
    FAIL() << "expected a checkpoint error";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("spatial.stem.w"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, UnknownTensorNameIsRejected) {
  ParamStore<float> store(1);
  store.zeros("a", {2});
  EXPECT_THROW(load_into(store, {{"b", Tensor<float>({2}, {0.f, 0.f})}}), CheckpointError);
  EXPECT_THROW(load_into(store, {}), CheckpointError);
}
