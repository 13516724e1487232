#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dsdf/error.hpp"

namespace dsdf {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// True when newly created tensors record the operations that produced them.
inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables tape recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// One vertex of the recorded computation. Leaves have no backward_fn.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads `grad` of this node and accumulates into the parents' grads.
  std::function<void(Node&)> backward_fn;

  std::span<T> grad_span() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// Dense row-major N-D array with optional reverse-mode gradient tracking.
///
/// A Tensor is a cheap handle: copies share the same storage and graph node.
/// Values are fixed once an operation has produced them; only parameter
/// leaves are mutated (by initializers, optimizers and checkpoint loading).
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    for (auto extent : shape) {
      if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
    if (shape_size(shape) != data.size()) {
      throw DimensionError(detail::concat("shape ", shape_str(shape), " needs ", shape_size(shape),
                                          " values, got ", data.size()));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }
  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }
  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }
  std::size_t extent(std::size_t axis) const { return node_->shape.at(axis); }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }
  T operator[](std::size_t i) const { return node_->data[i]; }

  T item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_span(); }
  void zero_grad() { node_->grad.assign(node_->data.size(), T(0)); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

  /// Reverse pass from this scalar. Gradients accumulate into every tracked
  /// ancestor; interior graph edges are released afterwards.
  void backward() const {
    if (size() != 1) {
      throw ContractError("backward() needs a scalar loss, got shape " + shape_str(shape()));
    }
    if (!requires_grad()) return;

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen{node_.get()};
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
    while (!stack.empty()) {
      auto& top = stack.back();
      if (top.second < top.first->parents.size()) {
        Node<T>* parent = top.first->parents[top.second++].get();
        if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
      } else {
        order.push_back(top.first);
        stack.pop_back();
      }
    }

    node_->grad_span()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = *it;
      if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
    for (Node<T>* n : order) {
      if (n->backward_fn) {
        n->backward_fn = nullptr;
        n->parents.clear();
      }
    }
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Element-type conversion; the result is an untracked leaf.
template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  auto src = t.data();
  return Tensor<To>(t.shape(), std::vector<To>(src.begin(), src.end()));
}

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

}  // namespace dsdf
