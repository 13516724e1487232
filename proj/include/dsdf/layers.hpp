#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "dsdf/error.hpp"
#include "dsdf/ops.hpp"
#include "dsdf/params.hpp"

// Transformer building blocks shared by the frequency encoder, the fusion
// stages and the class-token refiner.

namespace dsdf {

/// Optional sink for attention-weight matrices produced during a forward pass.
template <typename T>
struct AttentionLog {
  std::vector<std::pair<std::string, Tensor<T>>> maps;
  void record(std::string site, Tensor<T> weights) { maps.emplace_back(std::move(site), std::move(weights)); }
};

/// softmax(q k^T / sqrt(d_k)) v for one head. Returns {output, weights}.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k,
                                                     const Tensor<T>& v) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.extent(1) != k.extent(1) ||
      k.extent(0) != v.extent(0)) {
    throw DimensionError(detail::concat("attention: incompatible q/k/v ", shape_str(q.shape()), " ",
                                        shape_str(k.shape()), " ", shape_str(v.shape())));
  }
  const T inv_sqrt_dk = T(1) / std::sqrt(T(k.extent(1)));
  Tensor<T> weights = softmax(scale(matmul(q, transpose(k)), inv_sqrt_dk), 1);
  return {matmul(weights, v), weights};
}

template <typename T>
struct AttentionParams {
  Tensor<T> wq, wk, wv, wo;

  static AttentionParams make(ParamStore<T>& store, const std::string& prefix, std::size_t dim) {
    return {store.uniform(prefix + ".wq", {dim, dim}, dim), store.uniform(prefix + ".wk", {dim, dim}, dim),
            store.uniform(prefix + ".wv", {dim, dim}, dim), store.uniform(prefix + ".wo", {dim, dim}, dim)};
  }
};

/// Multi-head attention with queries from `query_seq` and keys/values from
/// `context`. Self-attention passes the same sequence twice.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& query_seq, const Tensor<T>& context,
                               const AttentionParams<T>& p, std::size_t heads,
                               AttentionLog<T>* log = nullptr, const std::string& site = {}) {
  const std::size_t dim = query_seq.shape().back();
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError(detail::concat("embedding dim ", dim, " is not divisible by ", heads, " heads"));
  }
  const std::size_t dk = dim / heads;
  const Tensor<T> q = matmul(query_seq, p.wq);
  const Tensor<T> k = matmul(context, p.wk);
  const Tensor<T> v = matmul(context, p.wv);
  std::vector<Tensor<T>> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t b = h * dk, e = b + dk;
    auto [out, weights] = heads == 1 ? scaled_dot_attention(q, k, v)
                                     : scaled_dot_attention(slice_cols(q, b, e), slice_cols(k, b, e),
                                                            slice_cols(v, b, e));
    if (log) log->record(site + ".head" + std::to_string(h), weights);
    outputs.push_back(std::move(out));
  }
  const Tensor<T> merged = heads == 1 ? outputs[0] : concat_cols(outputs);
  return matmul(merged, p.wo);
}

template <typename T>
struct FeedForwardParams {
  Tensor<T> w1, b1, w2, b2;

  static FeedForwardParams make(ParamStore<T>& store, const std::string& prefix, std::size_t dim,
                                std::size_t hidden) {
    return {store.uniform(prefix + ".w1", {dim, hidden}, dim), store.zeros(prefix + ".b1", {hidden}),
            store.uniform(prefix + ".w2", {hidden, dim}, hidden), store.zeros(prefix + ".b2", {dim})};
  }
};

/// relu(x W1 + b1) W2 + b2, applied row-wise.
template <typename T>
Tensor<T> feed_forward(const Tensor<T>& x, const FeedForwardParams<T>& p) {
  return add_bias(matmul(relu(add_bias(matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

template <typename T>
struct LayerNormParams {
  Tensor<T> gain, bias;

  static LayerNormParams make(ParamStore<T>& store, const std::string& prefix, std::size_t dim) {
    return {store.ones(prefix + ".gain", {dim}), store.zeros(prefix + ".bias", {dim})};
  }
};

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const LayerNormParams<T>& p) {
  return layer_norm(x, p.gain, p.bias, x.rank() - 1);
}

/// Encoder block parameters (attention, FFN and their two norms).
template <typename T>
struct EncoderBlockParams {
  LayerNormParams<T> norm1;
  AttentionParams<T> attn;
  LayerNormParams<T> norm2;
  FeedForwardParams<T> ffn;

  static EncoderBlockParams make(ParamStore<T>& store, const std::string& prefix, std::size_t dim) {
    EncoderBlockParams b;
    b.norm1 = LayerNormParams<T>::make(store, prefix + ".norm1", dim);
    b.attn = AttentionParams<T>::make(store, prefix + ".attn", dim);
    b.norm2 = LayerNormParams<T>::make(store, prefix + ".norm2", dim);
    b.ffn = FeedForwardParams<T>::make(store, prefix + ".ffn", dim, 4 * dim);
    return b;
  }
};

/// Pre-norm block: x + MHSA(LN(x)), then + FFN(LN(.)).
template <typename T>
Tensor<T> pre_norm_block(const Tensor<T>& x, const EncoderBlockParams<T>& p, std::size_t heads,
                         AttentionLog<T>* log = nullptr, const std::string& site = {}) {
  const Tensor<T> n1 = layer_norm(x, p.norm1);
  const Tensor<T> h = add(x, multi_head_attention(n1, n1, p.attn, heads, log, site));
  return add(h, feed_forward(layer_norm(h, p.norm2), p.ffn));
}

/// Post-norm block: X <- LN(X + MultiHead(X)); X <- LN(X + FFN(X)).
template <typename T>
Tensor<T> post_norm_block(const Tensor<T>& x, const EncoderBlockParams<T>& p, std::size_t heads,
                          AttentionLog<T>* log = nullptr, const std::string& site = {}) {
  const Tensor<T> h = layer_norm(add(x, multi_head_attention(x, x, p.attn, heads, log, site)), p.norm1);
  return layer_norm(add(h, feed_forward(h, p.ffn)), p.norm2);
}

/// Row-major index map turning a P x P x C grid into (P/k)^2 tokens of
/// k*k*C values each (row-major within the patch, channel fastest).
inline std::vector<std::size_t> patch_index(std::size_t height, std::size_t width, std::size_t channels,
                                            std::size_t k) {
  if (k == 0 || height % k || width % k) {
    throw DimensionError(detail::concat("patch size ", k, " does not divide ", height, "x", width));
  }
  const std::size_t gh = height / k, gw = width / k;
  std::vector<std::size_t> index;
  index.reserve(height * width * channels);
  for (std::size_t py = 0; py < gh; ++py)
    for (std::size_t px = 0; px < gw; ++px)
      for (std::size_t y = 0; y < k; ++y)
        for (std::size_t x = 0; x < k; ++x)
          for (std::size_t c = 0; c < channels; ++c)
            index.push_back(((py * k + y) * width + px * k + x) * channels + c);
  return index;
}

/// H x W x C map -> [(H/k)(W/k) x k*k*C] patch matrix.
template <typename T>
Tensor<T> extract_patches(const Tensor<T>& map, std::size_t k) {
  if (map.rank() != 3) throw DimensionError("extract_patches expects H x W x C, got " + shape_str(map.shape()));
  const std::size_t H = map.extent(0), W = map.extent(1), C = map.extent(2);
  auto index = patch_index(H, W, C, k);
  return gather(map, std::move(index), {(H / k) * (W / k), k * k * C});
}

}  // namespace dsdf
