#pragma once

#include <string>

#include "dsdf/error.hpp"
#include "dsdf/ops.hpp"
#include "dsdf/params.hpp"

namespace dsdf {

/// Small residual CNN: image (S x S x 3) -> spatial feature map (S/4 x S/4 x C).
///
///   stem    3x3 stride 2, 3 -> C/4, ReLU
///   block   3x3 stride 2, C/4 -> C/2, ReLU, 3x3 stride 1, C/2 -> C/2
///           + 1x1 stride 2 projection shortcut, ReLU
///   project 1x1, C/2 -> C
template <typename T>
class SpatialEncoder {
 public:
  SpatialEncoder() = default;

  SpatialEncoder(ParamStore<T>& store, std::size_t channels) : channels_(channels) {
    if (channels % 4 != 0) {
      throw ConfigError(detail::concat("spatial encoder width ", channels, " must be divisible by 4"));
    }
    const std::size_t c1 = channels / 4, c2 = channels / 2;
    stem_w_ = store.uniform("spatial.stem.w", {3, 3, 3, c1}, 9 * 3);
    stem_b_ = store.zeros("spatial.stem.b", {c1});
    down_w_ = store.uniform("spatial.block.down.w", {3, 3, c1, c2}, 9 * c1);
    down_b_ = store.zeros("spatial.block.down.b", {c2});
    conv_w_ = store.uniform("spatial.block.conv.w", {3, 3, c2, c2}, 9 * c2);
    conv_b_ = store.zeros("spatial.block.conv.b", {c2});
    skip_w_ = store.uniform("spatial.block.skip.w", {1, 1, c1, c2}, c1);
    skip_b_ = store.zeros("spatial.block.skip.b", {c2});
    proj_w_ = store.uniform("spatial.proj.w", {1, 1, c2, channels}, c2);
    proj_b_ = store.zeros("spatial.proj.b", {channels});
  }

  Tensor<T> forward(const Tensor<T>& image) const {
    if (image.rank() != 3 || image.extent(2) != 3 || image.extent(0) != image.extent(1) ||
        image.extent(0) % 4 != 0) {
      throw DimensionError("spatial encoder needs a square S x S x 3 image with S divisible by 4, got " +
                           shape_str(image.shape()));
    }
    const Tensor<T> stem = relu(add_bias(conv2d(image, stem_w_, 2, 1), stem_b_));
    const Tensor<T> down = relu(add_bias(conv2d(stem, down_w_, 2, 1), down_b_));
    const Tensor<T> body = add_bias(conv2d(down, conv_w_, 1, 1), conv_b_);
    const Tensor<T> shortcut = add_bias(conv2d(stem, skip_w_, 2, 0), skip_b_);
    const Tensor<T> block = relu(add(body, shortcut));
    return add_bias(conv2d(block, proj_w_, 1, 0), proj_b_);
  }

  std::size_t channels() const { return channels_; }

 private:
  std::size_t channels_ = 0;
  Tensor<T> stem_w_, stem_b_, down_w_, down_b_, conv_w_, conv_b_, skip_w_, skip_b_, proj_w_, proj_b_;
};

}  // namespace dsdf
