#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

#include "dsdf/error.hpp"
#include "dsdf/tensor.hpp"

// Differentiable operations over Tensor. Every function records a backward
// closure when grad mode is on and at least one input is tracked.

namespace dsdf {

namespace detail {

template <typename T>
Tensor<T> record(Shape shape, std::vector<T> data, std::initializer_list<Tensor<T>> inputs,
                 std::function<void(Node<T>&)> fn) {
  Tensor<T> out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool tracked = false;
  for (const auto& in : inputs) tracked = tracked || in.requires_grad();
  if (!tracked) return out;
  Node<T>* n = out.node();
  n->requires_grad = true;
  for (const auto& in : inputs) n->parents.push_back(in.node_ptr());
  n->backward_fn = std::move(fn);
  return out;
}

template <typename T>
Tensor<T> record_many(Shape shape, std::vector<T> data, const std::vector<Tensor<T>>& inputs,
                      std::function<void(Node<T>&)> fn) {
  Tensor<T> out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool tracked = false;
  for (const auto& in : inputs) tracked = tracked || in.requires_grad();
  if (!tracked) return out;
  Node<T>* n = out.node();
  n->requires_grad = true;
  for (const auto& in : inputs) n->parents.push_back(in.node_ptr());
  n->backward_fn = std::move(fn);
  return out;
}

// Gradient buffer of parent `i`, or an empty span when it is not tracked.
template <typename T>
std::span<T> parent_grad(Node<T>& self, std::size_t i) {
  Node<T>* p = self.parents[i].get();
  if (!p->requires_grad) return {};
  return p->grad_span();
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(concat(op, ": shape mismatch ", shape_str(a.shape()), " vs ",
                                shape_str(b.shape())));
  }
}

template <typename T>
void require_rank(const Tensor<T>& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw DimensionError(concat(op, ": expected rank ", rank, ", got ", shape_str(a.shape())));
  }
}

// outer x axis x inner decomposition for reductions along one axis.
struct AxisSplit {
  std::size_t outer = 1, length = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError(concat("axis ", axis, " out of range for shape ", shape_str(shape)));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace detail

namespace detail {

template <typename T>
std::vector<T> transposed(const T* src, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  return out;
}

// C[m x n] += A[m x k] B[k x n], all row-major. Long output rows use a row
// axpy; short ones switch to dot products over a transposed B with eight
// independent partial sums, which the compiler can vectorize without
// reassociating. Both orders are fixed, so results are reproducible.
template <typename T>
void gemm_acc(T* __restrict C, const T* __restrict A, const T* __restrict B, std::size_t m, std::size_t k,
              std::size_t n) {
  if (n >= 16) {
    for (std::size_t i = 0; i < m; ++i) {
      T* row = C + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = A[i * k + p];
        const T* brow = B + p * n;
        for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
      }
    }
    return;
  }
  const std::vector<T> bt = transposed(B, k, n);
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = A + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* bcol = bt.data() + j * k;
      T lanes[8] = {};
      std::size_t p = 0;
      for (; p + 8 <= k; p += 8)
        for (std::size_t t = 0; t < 8; ++t) lanes[t] += arow[p + t] * bcol[p + t];
      T acc = 0;
      for (; p < k; ++p) acc += arow[p] * bcol[p];
      for (std::size_t t = 0; t < 8; ++t) acc += lanes[t];
      C[i * n + j] += acc;
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw DimensionError(detail::concat("matmul: incompatible shapes ", shape_str(a.shape()),
                                        " and ", shape_str(b.shape())));
  }
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  std::vector<T> out(m * n, T(0));
  detail::gemm_acc(out.data(), a.data().data(), b.data().data(), m, k, n);
  return detail::record<T>({m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    const auto& A = self.parents[0]->data;
    const auto& B = self.parents[1]->data;
    const auto& G = self.grad;
    if (auto dA = detail::parent_grad(self, 0); !dA.empty()) {
      const auto bt = detail::transposed(B.data(), k, n);
      detail::gemm_acc(dA.data(), G.data(), bt.data(), m, n, k);  // dA += G B^T
    }
    if (auto dB = detail::parent_grad(self, 1); !dB.empty()) {
      const auto at = detail::transposed(A.data(), m, k);
      detail::gemm_acc(dB.data(), at.data(), G.data(), k, m, n);  // dB += A^T G
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t r = a.extent(0), c = a.extent(1);
  std::vector<T> out(r * c);
  auto A = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = A[i * c + j];
  return detail::record<T>({c, r}, std::move(out), {a}, [r, c](Node<T>& self) {
    auto dA = detail::parent_grad(self, 0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) dA[i * c + j] += self.grad[j * r + i];
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::record<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto d = detail::parent_grad(self, p); !d.empty())
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::record<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    if (auto d = detail::parent_grad(self, 0); !d.empty())
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    if (auto d = detail::parent_grad(self, 1); !d.empty())
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= self.grad[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::record<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    const auto& A = self.parents[0]->data;
    const auto& B = self.parents[1]->data;
    if (auto d = detail::parent_grad(self, 0); !d.empty())
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * B[i];
    if (auto d = detail::parent_grad(self, 1); !d.empty())
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * A[i];
  });
}

/// x + b where b is broadcast along every axis but the last.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  if (bias.rank() != 1 || bias.extent(0) != x.shape().back()) {
    throw DimensionError(detail::concat("add_bias: bias ", shape_str(bias.shape()),
                                        " does not match last axis of ", shape_str(x.shape())));
  }
  const std::size_t n = bias.size();
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias[i % n];
  return detail::record<T>(x.shape(), std::move(out), {x, bias}, [n](Node<T>& self) {
    if (auto d = detail::parent_grad(self, 0); !d.empty())
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    if (auto d = detail::parent_grad(self, 1); !d.empty())
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i % n] += self.grad[i];
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return detail::record<T>(x.shape(), std::move(out), {x}, [factor](Node<T>& self) {
    auto d = detail::parent_grad(self, 0);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * factor;
  });
}

/// x multiplied by a one-element tensor.
template <typename T>
Tensor<T> scale_by(const Tensor<T>& x, const Tensor<T>& factor) {
  if (factor.size() != 1) {
    throw DimensionError("scale_by: factor must hold one value, got " + shape_str(factor.shape()));
  }
  const T f = factor[0];
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * f;
  return detail::record<T>(x.shape(), std::move(out), {x, factor}, [](Node<T>& self) {
    const auto& X = self.parents[0]->data;
    const T f = self.parents[1]->data[0];
    if (auto d = detail::parent_grad(self, 0); !d.empty())
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * f;
    if (auto d = detail::parent_grad(self, 1); !d.empty()) {
      T acc = 0;
      for (std::size_t i = 0; i < X.size(); ++i) acc += self.grad[i] * X[i];
      d[0] += acc;
    }
  });
}

/// Records the ReLU activation patterns of one forward pass and replays them
/// on later passes, so finite differences of a piecewise-linear network can be
/// taken without straddling a kink. Only used by gradient checks.
class ReluMaskTape {
 public:
  ReluMaskTape() : previous_(active()) { active() = this; }
  ~ReluMaskTape() { active() = previous_; }
  ReluMaskTape(const ReluMaskTape&) = delete;
  ReluMaskTape& operator=(const ReluMaskTape&) = delete;

  /// Switches from recording to replaying; each later pass starts from the first mask.
  void replay() {
    replaying_ = true;
    cursor_ = 0;
  }
  void rewind() { cursor_ = 0; }
  std::size_t size() const { return masks_.size(); }

  static ReluMaskTape*& active() {
    thread_local ReluMaskTape* tape = nullptr;
    return tape;
  }

  template <typename T>
  bool keep(std::span<const T> x, std::size_t i, std::size_t& slot) {
    if (i == 0) {
      if (replaying_) {
        if (cursor_ >= masks_.size() || masks_[cursor_].size() != x.size()) {
          throw ContractError("relu mask replay does not match the recorded pass");
        }
        slot = cursor_++;
      } else {
        masks_.emplace_back(x.size());
        slot = masks_.size() - 1;
      }
    }
    if (!replaying_) masks_[slot][i] = x[i] > T(0);
    return masks_[slot][i] != 0;
  }

 private:
  ReluMaskTape* previous_;
  std::vector<std::vector<char>> masks_;
  std::size_t cursor_ = 0;
  bool replaying_ = false;
};

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  if (ReluMaskTape* tape = ReluMaskTape::active()) {
    std::size_t slot = 0;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = tape->keep(x.data(), i, slot) ? x[i] : T(0);
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  }
  return detail::record<T>(x.shape(), std::move(out), {x}, [](Node<T>& self) {
    auto d = detail::parent_grad(self, 0);
    const auto& X = self.parents[0]->data;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (X[i] > T(0)) d[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x[i];
    // Branch keeps exp() from overflowing for large |v|.
    out[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  }
  return detail::record<T>(x.shape(), std::move(out), {x}, [](Node<T>& self) {
    auto d = detail::parent_grad(self, 0);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const T y = self.data[i];
      d[i] += self.grad[i] * y * (T(1) - y);
    }
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const auto s = detail::split_axis(x.shape(), axis);
  std::vector<T> out(x.size());
  auto X = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.length * s.inner + in;
      T peak = X[base];
      for (std::size_t l = 1; l < s.length; ++l) peak = std::max(peak, X[base + l * s.inner]);
      T total = 0;
      for (std::size_t l = 0; l < s.length; ++l) {
        const T e = std::exp(X[base + l * s.inner] - peak);
        out[base + l * s.inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < s.length; ++l) out[base + l * s.inner] /= total;
    }
  }
  return detail::record<T>(x.shape(), std::move(out), {x}, [s](Node<T>& self) {
    auto d = detail::parent_grad(self, 0);
    const auto& Y = self.data;
    const auto& G = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.length * s.inner + in;
        T dot = 0;
        for (std::size_t l = 0; l < s.length; ++l) {
          const std::size_t i = base + l * s.inner;
          dot += G[i] * Y[i];
        }
        for (std::size_t l = 0; l < s.length; ++l) {
          const std::size_t i = base + l * s.inner;
          d[i] += Y[i] * (G[i] - dot);
        }
      }
    }
  });
}

inline constexpr double kLayerNormEpsilon = 1e-5;

/// Normalizes every slice along `axis` to zero mean and unit variance, then
/// applies per-position gain and bias (both of extent shape[axis]).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     std::size_t axis) {
  const auto s = detail::split_axis(x.shape(), axis);
  if (s.length < 2) throw DimensionError("layer_norm: axis extent must be at least 2");
  if (gain.size() != s.length || bias.size() != s.length) {
    throw DimensionError(detail::concat("layer_norm: gain/bias ", shape_str(gain.shape()), "/",
                                        shape_str(bias.shape()), " vs axis extent ", s.length));
  }
  const std::size_t slices = s.outer * s.inner;
  std::vector<T> out(x.size());
  std::vector<T> xhat(x.size());
  std::vector<T> inv_std(slices);
  auto X = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.length * s.inner + in;
      T mean = 0;
      for (std::size_t l = 0; l < s.length; ++l) mean += X[base + l * s.inner];
      mean /= T(s.length);
      T var = 0;
      for (std::size_t l = 0; l < s.length; ++l) {
        const T dv = X[base + l * s.inner] - mean;
        var += dv * dv;
      }
      var /= T(s.length);
      const T is = T(1) / std::sqrt(var + T(kLayerNormEpsilon));
      inv_std[o * s.inner + in] = is;
      for (std::size_t l = 0; l < s.length; ++l) {
        const std::size_t i = base + l * s.inner;
        xhat[i] = (X[i] - mean) * is;
        out[i] = xhat[i] * gain[l] + bias[l];
      }
    }
  }
  return detail::record<T>(
      x.shape(), std::move(out), {x, gain, bias},
      [s, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        const auto& G = self.grad;
        const auto& gain = self.parents[1]->data;
        auto dx = detail::parent_grad(self, 0);
        auto dg = detail::parent_grad(self, 1);
        auto db = detail::parent_grad(self, 2);
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.length * s.inner + in;
            T mean_dy = 0, mean_dy_xhat = 0;
            for (std::size_t l = 0; l < s.length; ++l) {
              const std::size_t i = base + l * s.inner;
              const T dy = G[i] * gain[l];
              mean_dy += dy;
              mean_dy_xhat += dy * xhat[i];
              if (!dg.empty()) dg[l] += G[i] * xhat[i];
              if (!db.empty()) db[l] += G[i];
            }
            if (dx.empty()) continue;
            mean_dy /= T(s.length);
            mean_dy_xhat /= T(s.length);
            const T is = inv_std[o * s.inner + in];
            for (std::size_t l = 0; l < s.length; ++l) {
              const std::size_t i = base + l * s.inner;
              dx[i] += is * (G[i] * gain[l] - mean_dy - xhat[i] * mean_dy_xhat);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  return detail::record<T>({1}, {acc}, {x}, [](Node<T>& self) {
    auto d = detail::parent_grad(self, 0);
    for (auto& v : d) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / T(x.size()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw DimensionError(detail::concat("reshape: cannot view ", shape_str(x.shape()), " as ",
                                        shape_str(shape)));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return detail::record<T>(std::move(shape), std::move(out), {x}, [](Node<T>& self) {
    auto d = detail::parent_grad(self, 0);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
  });
}

/// out[i] = x[index[i]]; backward scatter-adds. Patch extraction and token
/// regrouping are expressed through this.
template <typename T>
Tensor<T> gather(const Tensor<T>& x, std::vector<std::size_t> index, Shape shape) {
  if (shape_size(shape) != index.size()) {
    throw DimensionError(detail::concat("gather: ", index.size(), " indices for shape ",
                                        shape_str(shape)));
  }
  std::vector<T> out(index.size());
  auto X = x.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= X.size()) throw DimensionError("gather: index out of range");
    out[i] = X[index[i]];
  }
  return detail::record<T>(std::move(shape), std::move(out), {x},
                           [index = std::move(index)](Node<T>& self) {
                             auto d = detail::parent_grad(self, 0);
                             for (std::size_t i = 0; i < index.size(); ++i) d[index[i]] += self.grad[i];
                           });
}

/// Rows [begin, end) of a matrix.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  detail::require_rank(x, 2, "slice_rows");
  if (begin >= end || end > x.extent(0)) throw DimensionError("slice_rows: bad range");
  const std::size_t cols = x.extent(1);
  std::vector<T> out(x.data().begin() + begin * cols, x.data().begin() + end * cols);
  return detail::record<T>({end - begin, cols}, std::move(out), {x}, [begin, cols](Node<T>& self) {
    auto d = detail::parent_grad(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) d[begin * cols + i] += self.grad[i];
  });
}

/// Columns [begin, end) of a matrix.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  detail::require_rank(x, 2, "slice_cols");
  if (begin >= end || end > x.extent(1)) throw DimensionError("slice_cols: bad range");
  const std::size_t rows = x.extent(0), cols = x.extent(1), w = end - begin;
  std::vector<T> out(rows * w);
  auto X = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = X[r * cols + begin + c];
  return detail::record<T>({rows, w}, std::move(out), {x}, [=](Node<T>& self) {
    auto d = detail::parent_grad(self, 0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) d[r * cols + begin + c] += self.grad[r * w + c];
  });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t cols = parts[0].shape().back();
  std::size_t rows = 0;
  std::vector<T> out;
  for (const auto& p : parts) {
    detail::require_rank(p, 2, "concat_rows");
    if (p.extent(1) != cols) throw DimensionError("concat_rows: column mismatch");
    rows += p.extent(0);
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return detail::record_many<T>({rows, cols}, std::move(out), parts, [](Node<T>& self) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      const std::size_t n = self.parents[p]->data.size();
      if (auto d = detail::parent_grad(self, p); !d.empty())
        for (std::size_t i = 0; i < n; ++i) d[i] += self.grad[offset + i];
      offset += n;
    }
  });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts[0].extent(0);
  std::size_t cols = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    detail::require_rank(p, 2, "concat_cols");
    if (p.extent(0) != rows) throw DimensionError("concat_cols: row mismatch");
    widths.push_back(p.extent(1));
    cols += p.extent(1);
  }
  std::vector<T> out(rows * cols);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto P = parts[p].data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < widths[p]; ++c) out[r * cols + offset + c] = P[r * widths[p] + c];
    offset += widths[p];
  }
  return detail::record_many<T>({rows, cols}, std::move(out), parts,
                                [rows, cols, widths](Node<T>& self) {
                                  std::size_t offset = 0;
                                  for (std::size_t p = 0; p < widths.size(); ++p) {
                                    if (auto d = detail::parent_grad(self, p); !d.empty()) {
                                      for (std::size_t r = 0; r < rows; ++r)
                                        for (std::size_t c = 0; c < widths[p]; ++c)
                                          d[r * widths[p] + c] += self.grad[r * cols + offset + c];
                                    }
                                    offset += widths[p];
                                  }
                                });
}

/// Column-wise mean of a matrix: [N x D] -> [1 x D].
template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x) {
  detail::require_rank(x, 2, "mean_rows");
  const std::size_t rows = x.extent(0), cols = x.extent(1);
  std::vector<T> out(cols, T(0));
  auto X = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += X[r * cols + c];
  for (auto& v : out) v /= T(rows);
  return detail::record<T>({1, cols}, std::move(out), {x}, [rows, cols](Node<T>& self) {
    auto d = detail::parent_grad(self, 0);
    const T inv = T(1) / T(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) d[r * cols + c] += self.grad[c] * inv;
  });
}

/// 2-D convolution over an H x W x C_in map with a k x k x C_in x C_out
/// kernel and zero padding. No bias; use add_bias on the result.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride,
                 std::size_t padding) {
  detail::require_rank(input, 3, "conv2d");
  detail::require_rank(kernel, 4, "conv2d");
  const std::size_t H = input.extent(0), W = input.extent(1), C = input.extent(2);
  const std::size_t kh = kernel.extent(0), kw = kernel.extent(1), Co = kernel.extent(3);
  if (kernel.extent(2) != C) {
    throw DimensionError(detail::concat("conv2d: kernel ", shape_str(kernel.shape()),
                                        " does not match input channels of ", shape_str(input.shape())));
  }
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  if (kh > H + 2 * padding || kw > W + 2 * padding) {
    throw DimensionError(detail::concat("conv2d: kernel ", shape_str(kernel.shape()),
                                        " larger than padded input ", shape_str(input.shape())));
  }
  const std::size_t Ho = (H + 2 * padding - kh) / stride + 1;
  const std::size_t Wo = (W + 2 * padding - kw) / stride + 1;
  std::vector<T> out(Ho * Wo * Co, T(0));
  auto I = input.data();
  auto K = kernel.data();
  for (std::size_t oy = 0; oy < Ho; ++oy) {
    for (std::size_t ox = 0; ox < Wo; ++ox) {
      T* o = out.data() + (oy * Wo + ox) * Co;
      for (std::size_t m = 0; m < kh; ++m) {
        const std::ptrdiff_t iy = std::ptrdiff_t(oy * stride + m) - std::ptrdiff_t(padding);
        if (iy < 0 || iy >= std::ptrdiff_t(H)) continue;
        for (std::size_t n = 0; n < kw; ++n) {
          const std::ptrdiff_t ix = std::ptrdiff_t(ox * stride + n) - std::ptrdiff_t(padding);
          if (ix < 0 || ix >= std::ptrdiff_t(W)) continue;
          const T* px = I.data() + (std::size_t(iy) * W + std::size_t(ix)) * C;
          const T* kp = K.data() + (m * kw + n) * C * Co;
          for (std::size_t c = 0; c < C; ++c) {
            const T v = px[c];
            const T* krow = kp + c * Co;
            for (std::size_t k = 0; k < Co; ++k) o[k] += v * krow[k];
          }
        }
      }
    }
  }
  return detail::record<T>({Ho, Wo, Co}, std::move(out), {input, kernel}, [=](Node<T>& self) {
    const auto& I = self.parents[0]->data;
    const auto& K = self.parents[1]->data;
    auto dI = detail::parent_grad(self, 0);
    auto dK = detail::parent_grad(self, 1);
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        const T* g = self.grad.data() + (oy * Wo + ox) * Co;
        for (std::size_t m = 0; m < kh; ++m) {
          const std::ptrdiff_t iy = std::ptrdiff_t(oy * stride + m) - std::ptrdiff_t(padding);
          if (iy < 0 || iy >= std::ptrdiff_t(H)) continue;
          for (std::size_t n = 0; n < kw; ++n) {
            const std::ptrdiff_t ix = std::ptrdiff_t(ox * stride + n) - std::ptrdiff_t(padding);
            if (ix < 0 || ix >= std::ptrdiff_t(W)) continue;
            const std::size_t pix = (std::size_t(iy) * W + std::size_t(ix)) * C;
            const std::size_t kbase = (m * kw + n) * C * Co;
            for (std::size_t c = 0; c < C; ++c) {
              const T* krow = K.data() + kbase + c * Co;
              if (!dI.empty()) {
                T acc = 0;
                for (std::size_t k = 0; k < Co; ++k) acc += g[k] * krow[k];
                dI[pix + c] += acc;
              }
              if (!dK.empty()) {
                const T v = I[pix + c];
                T* dk = dK.data() + kbase + c * Co;
                for (std::size_t k = 0; k < Co; ++k) dk[k] += v * g[k];
              }
            }
          }
        }
      }
    }
  });
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, std::size_t window, std::size_t stride) {
  detail::require_rank(input, 3, "max_pool2d");
  const std::size_t H = input.extent(0), W = input.extent(1), C = input.extent(2);
  if (window == 0 || stride == 0 || window > H || window > W) {
    throw DimensionError(detail::concat("max_pool2d: window ", window, " exceeds input ",
                                        shape_str(input.shape())));
  }
  const std::size_t Ho = (H - window) / stride + 1, Wo = (W - window) / stride + 1;
  std::vector<T> out(Ho * Wo * C);
  std::vector<std::size_t> argmax(out.size());
  auto I = input.data();
  for (std::size_t oy = 0; oy < Ho; ++oy) {
    for (std::size_t ox = 0; ox < Wo; ++ox) {
      for (std::size_t c = 0; c < C; ++c) {
        std::size_t best = (oy * stride * W + ox * stride) * C + c;
        for (std::size_t m = 0; m < window; ++m)
          for (std::size_t n = 0; n < window; ++n) {
            const std::size_t i = ((oy * stride + m) * W + ox * stride + n) * C + c;
            if (I[i] > I[best]) best = i;
          }
        const std::size_t o = (oy * Wo + ox) * C + c;
        out[o] = I[best];
        argmax[o] = best;
      }
    }
  }
  return detail::record<T>({Ho, Wo, C}, std::move(out), {input},
                           [argmax = std::move(argmax)](Node<T>& self) {
                             auto d = detail::parent_grad(self, 0);
                             for (std::size_t o = 0; o < argmax.size(); ++o) d[argmax[o]] += self.grad[o];
                           });
}

/// Mean over both spatial axes of an H x W x C map -> [C].
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
  detail::require_rank(input, 3, "global_avg_pool");
  const std::size_t HW = input.extent(0) * input.extent(1), C = input.extent(2);
  std::vector<T> out(C, T(0));
  auto I = input.data();
  for (std::size_t p = 0; p < HW; ++p)
    for (std::size_t c = 0; c < C; ++c) out[c] += I[p * C + c];
  for (auto& v : out) v /= T(HW);
  return detail::record<T>({C}, std::move(out), {input}, [HW, C](Node<T>& self) {
    auto d = detail::parent_grad(self, 0);
    const T inv = T(1) / T(HW);
    for (std::size_t p = 0; p < HW; ++p)
      for (std::size_t c = 0; c < C; ++c) d[p * C + c] += self.grad[c] * inv;
  });
}

inline constexpr double kProbabilityClamp = 1e-7;

/// Binary cross-entropy of a single probability against a label in [0,1].
/// Each log term only sees its own side clamped, so p == label gives exactly 0.
template <typename T>
Tensor<T> binary_cross_entropy(const Tensor<T>& p, T label) {
  if (p.size() != 1) throw DimensionError("binary_cross_entropy expects one probability");
  const T eps = T(kProbabilityClamp);
  const T x = p[0];
  T loss = 0;
  if (label != T(0)) loss -= label * std::log(std::max(x, eps));
  if (label != T(1)) loss -= (T(1) - label) * std::log(std::max(T(1) - x, eps));
  return detail::record<T>({1}, {loss}, {p}, [label, eps](Node<T>& self) {
    auto d = detail::parent_grad(self, 0);
    const T raw = self.parents[0]->data[0];
    T g = 0;
    if (label != T(0) && raw >= eps) g -= label / raw;
    if (label != T(1) && T(1) - raw >= eps) g += (T(1) - label) / (T(1) - raw);
    d[0] += self.grad[0] * g;
  });
}

}  // namespace dsdf
