#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "dsdf/blood.hpp"
#include "support/oracles.hpp"

using namespace dsdf;

namespace {

std::vector<double> values(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

Tensor<double> random_histogram(std::size_t bins, std::mt19937_64& rng) {
  auto h = oracle::random_tensor<double>({bins}, rng, 0, 1);
  double s = 0;
  for (double v : h.data()) s += v;
  for (auto& v : h.mutable_data()) v /= s;
  return h;
}

RgbImage random_image(std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  RgbImage img(size, size);
  for (auto& v : img.data) v = u(rng);
  return img;
}

}  // namespace

TEST(Histogram, ConstantChannelFillsOneBin) {
  const auto h = histogram(Tensor<double>::full({4, 4}, 0.3), 10);
  for (std::size_t b = 0; b < 10; ++b) EXPECT_EQ(h[b], b == 3 ? 1.0 : 0.0);
  EXPECT_EQ(histogram(Tensor<double>::full({2, 2}, 1.0), 4)[3], 1.0);
  EXPECT_EQ(histogram(Tensor<double>::full({2, 2}, 0.0), 4)[0], 1.0);
}

TEST(Histogram, KnownValuesAndBinEdges) {
  const auto h = histogram(Tensor<double>({5}, {0.0, 0.24, 0.25, 0.7, 1.0}), 4);
  EXPECT_EQ(values(h), (std::vector<double>{0.4, 0.2, 0.2, 0.2}));
  EXPECT_THROW(histogram(Tensor<double>({1}, {0.5}), 0), DimensionError);
}

TEST(Histogram, SumsToOneAndIgnoresPixelOrder) {
  std::mt19937_64 rng(1);
  for (std::size_t bins : {1u, 7u, 64u, 256u}) {
    auto ch = oracle::random_tensor<double>({13, 11}, rng, 0, 1);
    const auto h = histogram(ch, bins);
    double s = 0;
    for (double v : h.data()) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
    auto d = ch.mutable_data();
    std::shuffle(d.begin(), d.end(), rng);
    EXPECT_EQ(values(histogram(ch, bins)), values(h));
  }
}

TEST(BloodHistograms, FourDistributionsOfTheRequestedSize) {
  const auto h = blood_histograms(random_image(16, 2), 32);
  for (const auto* t : {&h.red, &h.cr, &h.lab_a, &h.lbp}) {
    ASSERT_EQ(t->shape(), (Shape{32}));
    double s = 0;
    for (double v : t->data()) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(HistogramCrossAttention, WeightsAreRowStochastic) {
  ParamStore<double> store(1);
  HistogramCrossAttention<double> att(store, "x", 16, 8);
  std::mt19937_64 rng(1);
  NoGradGuard ng;
  const auto r = att.forward(random_histogram(16, rng), random_histogram(16, rng));
  ASSERT_EQ(r.attention.shape(), (Shape{16, 16}));
  EXPECT_EQ(r.attended.shape(), (Shape{1, 8}));
  for (std::size_t i = 0; i < 16; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 16; ++j) s += r.attention[i * 16 + j];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(HistogramCrossAttention, ZeroedQueryOrKeyProjectionGivesUniformWeights) {
  ParamStore<double> store(2);
  HistogramCrossAttention<double> att(store, "x", 8, 4);
  for (auto& v : att.wk().mutable_data()) v = 0.0;
  std::mt19937_64 rng(2);
  NoGradGuard ng;
  const auto r = att.forward(random_histogram(8, rng), random_histogram(8, rng));
  for (double w : r.attention.data()) EXPECT_NEAR(w, 1.0 / 8.0, 1e-15);
}

TEST(HistogramCrossAttention, MatchesNaiveComputation) {
  const std::size_t bins = 6, dim = 4;
  ParamStore<double> store(3);
  HistogramCrossAttention<double> att(store, "x", bins, dim);
  std::mt19937_64 rng(3);
  const auto hq = random_histogram(bins, rng), hk = random_histogram(bins, rng);
  auto tokens = [&](const Tensor<double>& h, const char* embed, const char* bias) {
    const auto e = store.get(std::string("x.") + embed), b = store.get(std::string("x.") + bias),
               pos = store.get("x.pos");
    std::vector<double> t(bins * dim);
    for (std::size_t i = 0; i < bins; ++i)
      for (std::size_t d = 0; d < dim; ++d) t[i * dim + d] = h[i] * double(bins) * e[d] + b[d] + pos[i * dim + d];
    return t;
  };
  const auto tq = tokens(hq, "q_embed", "q_bias"), tk = tokens(hk, "kv_embed", "kv_bias");
  const auto q = oracle::matmul(tq, values(att.wq()), bins, dim, dim);
  const auto k = oracle::matmul(tk, values(att.wk()), bins, dim, dim);
  const auto v = oracle::matmul(tk, values(att.wv()), bins, dim, dim);
  const auto [out, w] = oracle::attention(q, k, v, bins, bins, dim, dim);
  NoGradGuard ng;
  const auto r = att.forward(hq, hk);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(r.attention[i], w[i], 1e-12);
  for (std::size_t d = 0; d < dim; ++d) {
    double m = 0;
    for (std::size_t i = 0; i < bins; ++i) m += out[i * dim + d] / double(bins);
    EXPECT_NEAR(r.attended[d], m, 1e-12);
  }
  EXPECT_THROW(att.forward(random_histogram(5, rng), hk), DimensionError);
}

TEST(BloodBranch, ProbabilityIsOpenUnitIntervalAndDeterministic) {
  ParamStore<double> a(4), b(4);
  BloodBranch<double> ba(a, 64, 16), bb(b, 64, 16);
  NoGradGuard ng;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto in = to_blood_inputs<double>(blood_histograms(random_image(16, seed)));
    const auto fa = ba.forward(in), fb = bb.forward(in);
    EXPECT_GT(fa.probability[0], 0.0);
    EXPECT_LT(fa.probability[0], 1.0);
    EXPECT_EQ(fa.probability[0], fb.probability[0]);
    EXPECT_EQ(fa.fused.shape(), (Shape{1, 32}));
  }
}

TEST(BloodBranch, LogsBothAttentionMaps) {
  ParamStore<double> store(5);
  BloodBranch<double> branch(store, 16, 8);
  AttentionLog<double> log;
  NoGradGuard ng;
  branch.forward(to_blood_inputs<double>(blood_histograms(random_image(16, 1), 16)), &log);
  ASSERT_EQ(log.maps.size(), 2u);
  EXPECT_EQ(log.maps[0].first, "blood.red_cr");
  EXPECT_EQ(log.maps[1].first, "blood.a_lbp");
}

TEST(BloodBranch, GradientsMatchFiniteDifferences) {
  ParamStore<double> store(6);
  BloodBranch<double> branch(store, 8, 8);
  const auto in = to_blood_inputs<double>(blood_histograms(random_image(16, 6), 8));
  std::vector<Tensor<double>> tensors;
  for (const auto& e : store.entries()) tensors.push_back(e.tensor);
  auto loss = [&] { return binary_cross_entropy(branch.forward(in).probability, 1.0); };
  // Many of these gradients are ~1e-6, so a 1e-6 step is dominated by roundoff.
  EXPECT_LT(oracle::max_grad_error(loss, tensors, 1e-4), 1e-5);
}
