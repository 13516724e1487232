#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "dsdf/corpus.hpp"
#include "dsdf/frequency.hpp"
#include "dsdf/train.hpp"
#include "support/oracles.hpp"

using namespace dsdf;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "dsdf_harness_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_flat_images(const fs::path& dir, std::size_t n) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < n; ++i) write_png((dir / (std::to_string(i) + ".png")).string(), RgbImage(8, 8, 0.5));
}

double high_band_energy(const RgbImage& img) {
  const auto feats = analyze_frequency(to_grayscale(img));
  return feats.stats[kBandCount - 1].energy;
}

TrainConfig small_run() {
  TrainConfig c;
  c.model.image_size = 16;
  c.model.embed_dim = 8;
  c.model.bins = 16;
  c.model.blood_dim = 8;
  c.epochs = 3;
  c.batch = 4;
  c.lr = 3e-3;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(Auc, PerfectAndInvertedRankings) {
  EXPECT_EQ(auc({{0.9, 1}, {0.8, 1}, {0.2, 0}, {0.1, 0}}), 1.0);
  EXPECT_EQ(auc({{0.1, 1}, {0.2, 1}, {0.8, 0}, {0.9, 0}}), 0.0);
  EXPECT_EQ(auc({{0.5, 1}, {0.5, 0}}), 0.5);
}

TEST(Auc, WorkedExample) { EXPECT_EQ(auc({{0.9, 1}, {0.8, 0}, {0.7, 1}, {0.1, 0}}), 0.75); }

TEST(Auc, MatchesPairwiseCountWithTies) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> coarse(0, 9), label(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + std::size_t(trial % 49);
    std::vector<ScoredLabel> s;
    for (std::size_t i = 0; i < n; ++i) s.emplace_back(coarse(rng) / 10.0, label(rng));
    s[0].second = 0;
    s[1].second = 1;
    // Both sides are exact rationals with the same denominator, so equality is exact.
    EXPECT_EQ(auc(s), oracle::brute_auc(s)) << "trial " << trial;
  }
}

TEST(Auc, SingleClassIsAnError) {
  EXPECT_THROW(auc({{0.3, 1}, {0.4, 1}}), MetricError);
  EXPECT_THROW(auc({{0.3, 2}, {0.4, 0}}), MetricError);
  EXPECT_THROW(accuracy({}), MetricError);
  EXPECT_EQ(accuracy({{0.9, 1}, {0.5, 1}, {0.2, 0}, {0.6, 0}}), 0.5);
}

TEST(Loss, BceAtTheLabelIsZeroAndAtOneHalfIsLn2) {
  EXPECT_EQ(binary_cross_entropy(Tensor<double>({1}, {1.0}), 1.0)[0], 0.0);
  EXPECT_EQ(binary_cross_entropy(Tensor<double>({1}, {0.0}), 0.0)[0], 0.0);
  EXPECT_NEAR(binary_cross_entropy(Tensor<double>({1}, {0.5}), 1.0)[0], std::log(2.0), 1e-15);
  EXPECT_NEAR(binary_cross_entropy(Tensor<double>({1}, {0.5}), 0.0)[0], std::log(2.0), 1e-15);
  EXPECT_TRUE(std::isfinite(binary_cross_entropy(Tensor<double>({1}, {0.0}), 1.0)[0]));
}

TEST(Corpus, StratifiedEightyTwentySplit) {
  const fs::path root = scratch("split");
  write_flat_images(root / "real", 10);
  write_flat_images(root / "fake", 10);
  const Corpus c = ingest(root, 3);
  ASSERT_EQ(c.entries.size(), 20u);
  EXPECT_EQ(c.train.size(), 16u);
  ASSERT_EQ(c.val.size(), 4u);
  int fakes = 0;
  for (auto i : c.val) fakes += c.entries[i].label;
  EXPECT_EQ(fakes, 2);
  EXPECT_EQ(c.entries.front().id, "real/0.png");

  const Corpus again = ingest(root, 3);
  EXPECT_EQ(again.val, c.val);
  bool moved = false;
  for (std::uint64_t seed = 4; seed < 10 && !moved; ++seed) moved = ingest(root, seed).val != c.val;
  EXPECT_TRUE(moved);
}

TEST(Corpus, MissingOrEmptyClassIsAnError) {
  const fs::path root = scratch("empty");
  write_flat_images(root / "real", 4);
  EXPECT_THROW(ingest(root, 1), CorpusError);
  fs::create_directories(root / "fake");
  std::ofstream(root / "fake" / "notes.txt") << "not an image";
  EXPECT_THROW(ingest(root, 1), CorpusError);
  write_flat_images(root / "fake", 1);
  EXPECT_THROW(ingest(root, 1), CorpusError);  // one image cannot be split
}

TEST(Synth, BalancedAndReproducible) {
  const fs::path a = scratch("synth_a"), b = scratch("synth_b");
  const Corpus ca = synth(8, 16, 9, a);
  synth(8, 16, 9, b);
  int fakes = 0;
  for (const auto& e : ca.entries) fakes += e.label;
  EXPECT_EQ(ca.entries.size(), 8u);
  EXPECT_EQ(fakes, 4);
  for (const auto& e : ca.entries) EXPECT_EQ(slurp(e.path), slurp(b / e.id)) << e.id;
  EXPECT_THROW(synth(7, 16, 1, scratch("odd")), CorpusError);
}

TEST(Synth, FakesCarryMoreHighBandEnergy) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 8; ++i) {
    const RgbImage real = synth_real_image(64, rng);
    const RgbImage fake = synth_fake_image(real, rng);
    EXPECT_GT(high_band_energy(fake), high_band_energy(real)) << "pair " << i;
  }
}

TEST(Config, UnknownKeysAndBadValuesAreRejected) {
  EXPECT_THROW(config_from_json(nlohmann::json{{"learning_rate", 0.1}}), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json{{"precision", "f16"}}), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json{{"epochs", "many"}}), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json{{"image_size", 30}}), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::array()), ConfigError);
  EXPECT_EQ(config_from_json(nlohmann::json::object()).model.image_size, 224u);
}

TEST(Config, FileRoundTrip) {
  TrainConfig c = small_run();
  c.precision = "f64";
  c.model.scales = {1, 2, 4};
  const auto path = (scratch("config") / "c.json").string();
  save_config(path, c);
  const TrainConfig back = load_config(path);
  EXPECT_EQ(to_json(back), to_json(c));
  std::ofstream(path) << "{ not json";
  EXPECT_THROW(load_config(path), ConfigError);
}

class SmallTraining : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    corpus_ = new Corpus(synth(20, 16, 4, scratch("train_corpus")));
    const ModelConfig m = small_run().model;
    train_set_ = new Dataset<float>(load_dataset<float>(*corpus_, corpus_->train, m));
    val_set_ = new Dataset<float>(load_dataset<float>(*corpus_, corpus_->val, m));
  }
  static void TearDownTestSuite() {
    delete corpus_;
    delete train_set_;
    delete val_set_;
  }
  static Corpus* corpus_;
  static Dataset<float>* train_set_;
  static Dataset<float>* val_set_;
};

Corpus* SmallTraining::corpus_ = nullptr;
Dataset<float>* SmallTraining::train_set_ = nullptr;
Dataset<float>* SmallTraining::val_set_ = nullptr;

TEST_F(SmallTraining, WritesOneMetricsRowPerEpochAndABestCheckpoint) {
  const fs::path out = scratch("run_rows");
  const TrainResult r = train(*train_set_, *val_set_, small_run(), out);
  EXPECT_EQ(r.history.size(), 3u);
  std::ifstream csv(r.metrics);
  std::string line;
  std::size_t lines = 0;
  std::getline(csv, line);
  EXPECT_EQ(line, "epoch,train_loss,val_auc,val_accuracy,val_auc_network,val_auc_blood");
  while (std::getline(csv, line)) ++lines;
  EXPECT_EQ(lines, 3u);
  EXPECT_TRUE(fs::exists(out / kCheckpointFile));
  EXPECT_EQ(load_config((out / kConfigFile).string()).seed, 5u);
  for (const auto& m : r.history) {
    EXPECT_TRUE(std::isfinite(m.train_loss));
    EXPECT_LE(m.val_auc, r.best_auc);
  }

  // Reloading the saved checkpoint reproduces the best validation AUC.
  const auto model = load_model<float>(small_run(), r.checkpoint.string());
  EXPECT_NEAR(evaluate(model, *val_set_).auc, r.best_auc, 1e-6);
}

TEST_F(SmallTraining, EqualSeedsGiveBitIdenticalArtifacts) {
  const fs::path a = scratch("run_a"), b = scratch("run_b");
  train(*train_set_, *val_set_, small_run(), a);
  train(*train_set_, *val_set_, small_run(), b);
  EXPECT_EQ(slurp(a / kCheckpointFile), slurp(b / kCheckpointFile));
  EXPECT_EQ(slurp(a / kMetricsFile), slurp(b / kMetricsFile));
}

TEST_F(SmallTraining, NonFiniteValuesAreReportedAsDivergence) {
  TrainConfig c = small_run();
  c.batch = 64;  // one batch, so sample 0 is always visited
  const float nan = std::numeric_limits<float>::quiet_NaN();
  auto divergence_message = [&](const Dataset<float>& data) {
    try {
      train(data, *val_set_, c, scratch("run_nan"));
    } catch (const DivergenceError& e) {
      return std::string(e.what());
    }
    return std::string("no divergence");
  };

  // The frequency stream has residual paths all the way to p_i, so the loss itself goes non-finite.
  Dataset<float> freq_poisoned = *train_set_;
  freq_poisoned.samples[0].freq_map = Tensor<float>::full(freq_poisoned.samples[0].freq_map.shape(), nan);
  const std::string loss_msg = divergence_message(freq_poisoned);
  EXPECT_NE(loss_msg.find(freq_poisoned.ids[0]), std::string::npos) << loss_msg;
  EXPECT_NE(loss_msg.find("p_i"), std::string::npos) << loss_msg;

  // ReLU zeroes NaN activations in the spatial stem; the NaN shows up in its weight gradient instead.
  Dataset<float> image_poisoned = *train_set_;
  image_poisoned.samples[0].image = Tensor<float>::full(image_poisoned.samples[0].image.shape(), nan);
  const std::string grad_msg = divergence_message(image_poisoned);
  EXPECT_NE(grad_msg.find("spatial.stem.w (gradient)"), std::string::npos) << grad_msg;
}

TEST(Gradcheck, EveryParameterGroupAgreesWithFiniteDifferences) {
  const auto rows = gradcheck<double>(gradcheck_geometry());
  ASSERT_EQ(rows.size(), 7u);
  for (const auto& r : rows) {
    EXPECT_GT(r.checked, 0u) << r.group;
    EXPECT_LT(r.max_rel_error, 1e-3) << r.group;
  }
}
