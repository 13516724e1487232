#pragma once

#include <string>
#include <vector>

#include "dsdf/error.hpp"
#include "dsdf/layers.hpp"
#include "dsdf/ops.hpp"
#include "dsdf/params.hpp"

namespace dsdf {

/// Shallow transformer over k x k patches of the band feature map.
/// (S x S x 8) -> tokens ((S/k)^2 x D) -> 2 pre-norm blocks -> (S/k x S/k x D).
template <typename T>
class FrequencyEncoder {
 public:
  static constexpr std::size_t kDepth = 2;

  FrequencyEncoder() = default;

  FrequencyEncoder(ParamStore<T>& store, std::size_t image_size, std::size_t channels, std::size_t patch,
                   std::size_t dim, std::size_t heads)
      : image_size_(image_size), channels_(channels), patch_(patch), dim_(dim), heads_(heads) {
    if (patch == 0 || image_size % patch) {
      throw ConfigError(detail::concat("patch size ", patch, " does not divide image size ", image_size));
    }
    if (heads == 0 || dim % heads) throw ConfigError(detail::concat("dim ", dim, " not divisible by ", heads, " heads"));
    const std::size_t in = patch * patch * channels;
    const std::size_t grid = image_size / patch;
    proj_w_ = store.uniform("freq.patch.w", {in, dim}, in);
    proj_b_ = store.zeros("freq.patch.b", {dim});
    pos_ = store.uniform("freq.pos", {grid * grid, dim}, dim);
    for (std::size_t i = 0; i < kDepth; ++i) {
      blocks_.push_back(EncoderBlockParams<T>::make(store, "freq.block" + std::to_string(i), dim));
    }
  }

  /// T_p = W Flatten(patch) + b + E_p for every patch, row-major over the grid.
  Tensor<T> patchify(const Tensor<T>& fmap) const {
    if (fmap.rank() != 3 || fmap.extent(2) != channels_) {
      throw DimensionError(detail::concat("frequency encoder expects H x W x ", channels_, ", got ",
                                          shape_str(fmap.shape())));
    }
    if (fmap.extent(0) != image_size_ || fmap.extent(1) != image_size_) {
      throw DimensionError(detail::concat("frequency encoder built for ", image_size_, "x", image_size_,
                                          ", got ", shape_str(fmap.shape())));
    }
    const Tensor<T> tokens = add_bias(matmul(extract_patches(fmap, patch_), proj_w_), proj_b_);
    return add(tokens, pos_);
  }

  Tensor<T> forward(const Tensor<T>& fmap, AttentionLog<T>* log = nullptr) const {
    Tensor<T> x = patchify(fmap);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      x = pre_norm_block(x, blocks_[i], heads_, log, "freq.block" + std::to_string(i));
    }
    const std::size_t grid = image_size_ / patch_;
    return reshape(x, {grid, grid, dim_});
  }

  const Tensor<T>& positional() const { return pos_; }

 private:
  std::size_t image_size_ = 0, channels_ = 0, patch_ = 0, dim_ = 0, heads_ = 0;
  Tensor<T> proj_w_, proj_b_, pos_;
  std::vector<EncoderBlockParams<T>> blocks_;
};

}  // namespace dsdf
