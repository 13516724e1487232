#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <utility>

#include "dsdf/error.hpp"
#include "dsdf/image.hpp"
#include "dsdf/layers.hpp"
#include "dsdf/ops.hpp"
#include "dsdf/params.hpp"

namespace dsdf {

inline constexpr std::size_t kDefaultBins = 64;

/// L1-normalized histogram of values in [0,1] using `bins` equal-width bins;
/// v = 1 falls in the last bin.
inline Tensor<double> histogram(const Tensor<double>& channel, std::size_t bins = kDefaultBins) {
  if (channel.size() == 0 || bins == 0) throw DimensionError("histogram of an empty channel");
  std::vector<double> counts(bins, 0.0);
  for (double v : channel.data()) {
    const double scaled = std::floor(std::clamp(v, 0.0, 1.0) * double(bins));
    counts[std::min(std::size_t(scaled), bins - 1)] += 1.0;
  }
  for (auto& c : counts) c /= double(channel.size());
  return Tensor<double>({bins}, std::move(counts));
}

/// The four colour/texture histograms, ordered {red, Cr, Lab a, LBP}.
struct BloodHistograms {
  Tensor<double> red, cr, lab_a, lbp;
};

inline BloodHistograms blood_histograms(const RgbImage& img, std::size_t bins = kDefaultBins) {
  std::vector<double> red(img.width * img.height);
  for (std::size_t i = 0; i < red.size(); ++i) red[i] = img.data[3 * i];
  Tensor<double> codes = lbp(to_grayscale(img));
  std::vector<double> scaled(codes.data().begin(), codes.data().end());
  for (auto& c : scaled) c /= 255.0;
  return {histogram(Tensor<double>({img.height, img.width}, std::move(red)), bins),
          histogram(to_ycbcr_cr(img), bins), histogram(to_lab_a(img), bins),
          histogram(Tensor<double>(codes.shape(), std::move(scaled)), bins)};
}

template <typename T>
struct CrossAttendResult {
  Tensor<T> attended;  // [1 x d_b], mean over query tokens
  Tensor<T> attention; // [bins x bins], row-stochastic
};

/// Single-head cross-attention between two histograms, each bin a token.
template <typename T>
class HistogramCrossAttention {
 public:
  HistogramCrossAttention() = default;

  HistogramCrossAttention(ParamStore<T>& store, const std::string& prefix, std::size_t bins, std::size_t dim)
      : bins_(bins) {
    q_embed_ = store.uniform(prefix + ".q_embed", {1, dim}, 1);
    q_bias_ = store.zeros(prefix + ".q_bias", {dim});
    kv_embed_ = store.uniform(prefix + ".kv_embed", {1, dim}, 1);
    kv_bias_ = store.zeros(prefix + ".kv_bias", {dim});
    pos_ = store.uniform(prefix + ".pos", {bins, dim}, dim);
    wq_ = store.uniform(prefix + ".wq", {dim, dim}, dim);
    wk_ = store.uniform(prefix + ".wk", {dim, dim}, dim);
    wv_ = store.uniform(prefix + ".wv", {dim, dim}, dim);
  }

  /// Bin value (scaled by the bin count so a uniform histogram reads 1) times
  /// a learned vector, plus bias and per-bin positional embedding.
  Tensor<T> tokens(const Tensor<T>& hist, const Tensor<T>& embed, const Tensor<T>& bias) const {
    if (hist.size() != bins_) {
      throw DimensionError(detail::concat("histogram has ", hist.size(), " bins, expected ", bins_));
    }
    const Tensor<T> column = scale(reshape(hist, {bins_, 1}), T(bins_));
    return add(add_bias(matmul(column, embed), bias), pos_);
  }

  CrossAttendResult<T> forward(const Tensor<T>& query_hist, const Tensor<T>& kv_hist) const {
    const Tensor<T> q_tok = tokens(query_hist, q_embed_, q_bias_);
    const Tensor<T> kv_tok = tokens(kv_hist, kv_embed_, kv_bias_);
    auto [out, weights] = scaled_dot_attention(matmul(q_tok, wq_), matmul(kv_tok, wk_), matmul(kv_tok, wv_));
    return {mean_rows(out), weights};
  }

  Tensor<T>& wq() { return wq_; }
  Tensor<T>& wk() { return wk_; }
  Tensor<T>& wv() { return wv_; }

 private:
  std::size_t bins_ = 0;
  Tensor<T> q_embed_, q_bias_, kv_embed_, kv_bias_, pos_, wq_, wk_, wv_;
};

/// Histogram inputs for the branch, already converted to the model precision.
template <typename T>
struct BloodInputs {
  Tensor<T> red, cr, lab_a, lbp;
};

template <typename T>
BloodInputs<T> to_blood_inputs(const BloodHistograms& h) {
  return {tensor_cast<T>(h.red), tensor_cast<T>(h.cr), tensor_cast<T>(h.lab_a), tensor_cast<T>(h.lbp)};
}

template <typename T>
struct BloodFeatures {
  Tensor<T> attended_red_cr;  // [1 x d_b]
  Tensor<T> attended_a_lbp;   // [1 x d_b]
  Tensor<T> fused;            // [1 x 2 d_b]
  Tensor<T> probability;      // p_j, [1 x 1]
  Tensor<T> attention_red_cr; // [bins x bins]
  Tensor<T> attention_a_lbp;  // [bins x bins]
};

/// Colour/texture branch: (red -> Cr) and (Lab a -> LBP) cross-attention,
/// concatenation, then a 2-layer MLP with sigmoid output.
template <typename T>
class BloodBranch {
 public:
  BloodBranch() = default;

  BloodBranch(ParamStore<T>& store, std::size_t bins, std::size_t dim) {
    red_cr_ = HistogramCrossAttention<T>(store, "blood.red_cr", bins, dim);
    a_lbp_ = HistogramCrossAttention<T>(store, "blood.a_lbp", bins, dim);
    w1_ = store.uniform("blood.mlp.w1", {2 * dim, dim}, 2 * dim);
    b1_ = store.zeros("blood.mlp.b1", {dim});
    w2_ = store.uniform("blood.mlp.w2", {dim, 1}, dim);
    b2_ = store.zeros("blood.mlp.b2", {1});
  }

  BloodFeatures<T> forward(const BloodInputs<T>& in, AttentionLog<T>* log = nullptr) const {
    BloodFeatures<T> f;
    auto first = red_cr_.forward(in.red, in.cr);
    auto second = a_lbp_.forward(in.lab_a, in.lbp);
    f.attended_red_cr = first.attended;
    f.attended_a_lbp = second.attended;
    f.attention_red_cr = first.attention;
    f.attention_a_lbp = second.attention;
    if (log) {
      log->record("blood.red_cr", first.attention);
      log->record("blood.a_lbp", second.attention);
    }
    f.fused = concat_cols<T>({first.attended, second.attended});
    const Tensor<T> hidden = relu(add_bias(matmul(f.fused, w1_), b1_));
    f.probability = sigmoid(add_bias(matmul(hidden, w2_), b2_));
    return f;
  }

  HistogramCrossAttention<T>& red_cr() { return red_cr_; }
  HistogramCrossAttention<T>& a_lbp() { return a_lbp_; }

 private:
  HistogramCrossAttention<T> red_cr_, a_lbp_;
  Tensor<T> w1_, b1_, w2_, b2_;
};

}  // namespace dsdf
