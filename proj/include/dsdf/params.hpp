#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dsdf/error.hpp"
#include "dsdf/tensor.hpp"

namespace dsdf {

/// Ordered registry of learnable tensors.
///
/// Registration order is the initialization order, the checkpoint order and
/// the optimizer order; a fixed seed therefore fixes every initial value.
template <typename T>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

  /// uniform(-sqrt(1/fan_in), +sqrt(1/fan_in))
  Tensor<T> uniform(const std::string& name, Shape shape, std::size_t fan_in) {
    const double bound = std::sqrt(1.0 / double(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> values(shape_size(shape));
    for (auto& v : values) v = T(dist(rng_));
    return add(name, Tensor<T>(std::move(shape), std::move(values), true));
  }

  Tensor<T> zeros(const std::string& name, Shape shape) {
    return add(name, Tensor<T>::zeros(std::move(shape), true));
  }

  Tensor<T> ones(const std::string& name, Shape shape) {
    return add(name, Tensor<T>::full(std::move(shape), T(1), true));
  }

  const std::vector<NamedTensor<T>>& entries() const { return entries_; }
  std::vector<NamedTensor<T>>& entries() { return entries_; }

  Tensor<T> get(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ContractError(detail::concat("no parameter named '", name, "'"));
    return entries_[it->second].tensor;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

 private:
  Tensor<T> add(const std::string& name, Tensor<T> t) {
    if (!index_.emplace(name, entries_.size()).second) {
      throw ContractError("duplicate parameter name '" + name + "'");
    }
    entries_.push_back({name, t});
    return t;
  }

  std::mt19937_64 rng_;
  std::vector<NamedTensor<T>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Name prefix up to the first '.', e.g. "spatial" for "spatial.stem.w".
inline std::string param_group(std::string_view name) {
  return std::string(name.substr(0, name.find('.')));
}

}  // namespace dsdf
