#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "dsdf/error.hpp"
#include "dsdf/layers.hpp"
#include "dsdf/ops.hpp"
#include "dsdf/params.hpp"

namespace dsdf {

/// Cross-stream attention fusion of the spatial map S and frequency map F
/// (both P x P x C):
///   H1 = CrossAttn(q=S, kv=F) + F
///   H2 = CrossAttn(q=F, kv=S) + S
///   H  = H1 + H2,  H_fused = H + FFN(H)
template <typename T>
class CrossStreamFusion {
 public:
  CrossStreamFusion() = default;

  CrossStreamFusion(ParamStore<T>& store, std::size_t dim, std::size_t heads) : heads_(heads) {
    spatial_query_ = AttentionParams<T>::make(store, "csaf.spatial_query", dim);
    freq_query_ = AttentionParams<T>::make(store, "csaf.freq_query", dim);
    ffn_ = FeedForwardParams<T>::make(store, "csaf.ffn", dim, 4 * dim);
  }

  Tensor<T> forward(const Tensor<T>& spatial, const Tensor<T>& freq, AttentionLog<T>* log = nullptr) const {
    if (spatial.shape() != freq.shape() || spatial.rank() != 3) {
      throw DimensionError(detail::concat("csaf: spatial ", shape_str(spatial.shape()), " and frequency ",
                                          shape_str(freq.shape()), " maps must share a P x P x C shape"));
    }
    const Shape grid = spatial.shape();
    const std::size_t tokens = grid[0] * grid[1], dim = grid[2];
    const Tensor<T> s = reshape(spatial, {tokens, dim});
    const Tensor<T> f = reshape(freq, {tokens, dim});
    const Tensor<T> h1 = add(multi_head_attention(s, f, spatial_query_, heads_, log, "csaf.spatial_query"), f);
    const Tensor<T> h2 = add(multi_head_attention(f, s, freq_query_, heads_, log, "csaf.freq_query"), s);
    const Tensor<T> h = add(h1, h2);
    return reshape(add(h, feed_forward(h, ffn_)), grid);
  }

  AttentionParams<T>& spatial_query() { return spatial_query_; }
  AttentionParams<T>& freq_query() { return freq_query_; }
  FeedForwardParams<T>& ffn() { return ffn_; }

 private:
  std::size_t heads_ = 0;
  AttentionParams<T> spatial_query_, freq_query_;
  FeedForwardParams<T> ffn_;
};

/// [T_min x T] matrix averaging each (ratio x ratio) block of a (g x g) token
/// grid, where g = ratio * sqrt(T_min). Rows follow the coarse grid row-major.
template <typename T>
Tensor<T> token_pool_matrix(std::size_t fine_grid, std::size_t ratio) {
  if (ratio == 0 || fine_grid % ratio) {
    throw DimensionError(detail::concat("token grid ", fine_grid, " not divisible by ", ratio));
  }
  const std::size_t coarse = fine_grid / ratio;
  std::vector<T> m(coarse * coarse * fine_grid * fine_grid, T(0));
  const T w = T(1) / T(ratio * ratio);
  for (std::size_t cy = 0; cy < coarse; ++cy)
    for (std::size_t cx = 0; cx < coarse; ++cx)
      for (std::size_t dy = 0; dy < ratio; ++dy)
        for (std::size_t dx = 0; dx < ratio; ++dx) {
          const std::size_t row = cy * coarse + cx;
          const std::size_t col = (cy * ratio + dy) * fine_grid + cx * ratio + dx;
          m[row * fine_grid * fine_grid + col] = w;
        }
  return Tensor<T>({coarse * coarse, fine_grid * fine_grid}, std::move(m));
}

/// Patches the fused map at several scales, runs one pre-norm transformer
/// block per scale, pools finer scales to T_min = (P/k_max)^2 tokens and sums
/// the scales with softmax-normalized learned weights. Scales are held
/// coarse-first.
template <typename T>
class MultiscaleEmbedding {
 public:
  MultiscaleEmbedding() = default;

  MultiscaleEmbedding(ParamStore<T>& store, std::size_t grid, std::size_t channels, std::size_t dim,
                      std::vector<std::size_t> scales, std::size_t heads)
      : grid_(grid), dim_(dim), heads_(heads), scales_(std::move(scales)) {
    if (scales_.empty()) throw ConfigError("multiscale embedding needs at least one patch size");
    std::sort(scales_.begin(), scales_.end(), std::greater<>());
    if (std::adjacent_find(scales_.begin(), scales_.end()) != scales_.end()) {
      throw ConfigError("multiscale patch sizes must be distinct");
    }
    for (std::size_t k : scales_) {
      if (k == 0 || grid % k || scales_.front() % k) {
        throw ConfigError(detail::concat("patch size ", k, " must divide the grid ", grid,
                                         " and the largest patch size ", scales_.front()));
      }
    }
    for (std::size_t k : scales_) {
      const std::string prefix = "mpe.k" + std::to_string(k);
      const std::size_t in = k * k * channels, g = grid / k;
      Branch b;
      b.patch = k;
      b.proj_w = store.uniform(prefix + ".patch.w", {in, dim}, in);
      b.proj_b = store.zeros(prefix + ".patch.b", {dim});
      b.pos = store.uniform(prefix + ".pos", {g * g, dim}, dim);
      b.block = EncoderBlockParams<T>::make(store, prefix + ".block", dim);
      if (k != scales_.front()) b.pool = token_pool_matrix<T>(g, scales_.front() / k);
      branches_.push_back(std::move(b));
    }
    logits_ = store.zeros("mpe.scale_logits", {scales_.size()});
  }

  /// Per-scale token sequences, each already aligned to T_min rows.
  std::vector<Tensor<T>> branch_tokens(const Tensor<T>& fused, AttentionLog<T>* log = nullptr) const {
    if (fused.rank() != 3 || fused.extent(0) != grid_ || fused.extent(1) != grid_) {
      throw DimensionError(detail::concat("multiscale embedding built for a ", grid_, "x", grid_,
                                          " grid, got ", shape_str(fused.shape())));
    }
    std::vector<Tensor<T>> out;
    for (const auto& b : branches_) {
      Tensor<T> x = add(add_bias(matmul(extract_patches(fused, b.patch), b.proj_w), b.proj_b), b.pos);
      x = pre_norm_block(x, b.block, heads_, log, "mpe.k" + std::to_string(b.patch));
      if (b.pool.defined()) x = matmul(b.pool, x);
      out.push_back(std::move(x));
    }
    return out;
  }

  Tensor<T> forward(const Tensor<T>& fused, AttentionLog<T>* log = nullptr) const {
    const auto tokens = branch_tokens(fused, log);
    const Tensor<T> weights = softmax(logits_, 0);
    Tensor<T> total;
    for (std::size_t s = 0; s < tokens.size(); ++s) {
      std::vector<std::size_t> pick{s};
      Tensor<T> term = scale_by(tokens[s], gather(weights, pick, {1}));
      total = total.defined() ? add(total, term) : term;
    }
    return total;
  }

  std::size_t min_tokens() const {
    const std::size_t g = grid_ / scales_.front();
    return g * g;
  }
  const std::vector<std::size_t>& scales() const { return scales_; }
  Tensor<T>& logits() { return logits_; }

 private:
  struct Branch {
    std::size_t patch = 0;
    Tensor<T> proj_w, proj_b, pos, pool;
    EncoderBlockParams<T> block;
  };

  std::size_t grid_ = 0, dim_ = 0, heads_ = 0;
  std::vector<std::size_t> scales_;
  std::vector<Branch> branches_;
  Tensor<T> logits_;
};

/// Prepends a learnable class token and runs post-norm encoder layers;
/// returns the refined class token [1 x D].
template <typename T>
class ClassTokenRefiner {
 public:
  static constexpr std::size_t kDepth = 2;

  ClassTokenRefiner() = default;

  ClassTokenRefiner(ParamStore<T>& store, std::size_t dim, std::size_t heads) : heads_(heads) {
    token_ = store.uniform("ctrm.class_token", {1, dim}, dim);
    for (std::size_t i = 0; i < kDepth; ++i) {
      layers_.push_back(EncoderBlockParams<T>::make(store, "ctrm.layer" + std::to_string(i), dim));
    }
  }

  /// concat(C, F) followed by the encoder layers; the full (T+1) x D sequence.
  Tensor<T> encode(const Tensor<T>& tokens, AttentionLog<T>* log = nullptr) const {
    if (tokens.rank() != 2 || tokens.extent(1) != token_.extent(1)) {
      throw DimensionError("ctrm expects T x D tokens, got " + shape_str(tokens.shape()));
    }
    Tensor<T> x = concat_rows<T>({token_, tokens});
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      x = post_norm_block(x, layers_[i], heads_, log, "ctrm.layer" + std::to_string(i));
    }
    return x;
  }

  Tensor<T> forward(const Tensor<T>& tokens, AttentionLog<T>* log = nullptr) const {
    return slice_rows(encode(tokens, log), 0, 1);
  }

 private:
  std::size_t heads_ = 0;
  Tensor<T> token_;
  std::vector<EncoderBlockParams<T>> layers_;
};

enum class Label { kReal = 0, kFake = 1 };

inline const char* label_name(Label l) { return l == Label::kFake ? "fake" : "real"; }

inline constexpr double kDefaultAlpha = 0.8;
inline constexpr double kDefaultBeta = 0.2;
inline constexpr double kDecisionThreshold = 0.5;

/// p = (alpha p_i + beta p_j) / (alpha + beta).
template <typename T>
Tensor<T> combine_probabilities(const Tensor<T>& p_i, const Tensor<T>& p_j, double alpha, double beta) {
  if (!(alpha > 0) || !(beta > 0)) throw ConfigError("combination weights must be positive");
  const double denom = alpha + beta;
  return add(scale(reshape(p_i, {1}), T(alpha / denom)), scale(reshape(p_j, {1}), T(beta / denom)));
}

struct Verdict {
  double p_i = 0, p_j = 0, p = 0;
  Label label = Label::kReal;
};

/// Fake iff p > 0.5; a tie is real.
inline Label decide(double p) { return p > kDecisionThreshold ? Label::kFake : Label::kReal; }

inline Verdict make_verdict(double p_i, double p_j, double alpha = kDefaultAlpha, double beta = kDefaultBeta) {
  Verdict v{p_i, p_j, (alpha * p_i + beta * p_j) / (alpha + beta), Label::kReal};
  v.label = decide(v.p);
  return v;
}

/// sigmoid(c W_c + b_c)
template <typename T>
class ClassifierHead {
 public:
  ClassifierHead() = default;
  ClassifierHead(ParamStore<T>& store, std::size_t dim) {
    w_ = store.uniform("head.w", {dim, 1}, dim);
    b_ = store.zeros("head.b", {1});
  }
  Tensor<T> forward(const Tensor<T>& class_token) const {
    return sigmoid(add_bias(matmul(class_token, w_), b_));
  }

 private:
  Tensor<T> w_, b_;
};

}  // namespace dsdf
