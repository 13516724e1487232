#pragma once

#include <cmath>
#include <vector>

#include "dsdf/params.hpp"

namespace dsdf {

/// Adam with bias correction. Parameters without a gradient are skipped.
template <typename T>
class Adam {
 public:
  explicit Adam(ParamStore<T>& store, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : store_(store), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& e : store.entries()) {
      m_.emplace_back(e.tensor.size(), 0.0);
      v_.emplace_back(e.tensor.size(), 0.0);
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, double(t_));
    const double c2 = 1.0 - std::pow(beta2_, double(t_));
    auto& entries = store_.entries();
    for (std::size_t p = 0; p < entries.size(); ++p) {
      Tensor<T>& param = entries[p].tensor;
      if (!param.has_grad()) continue;
      auto w = param.mutable_data();
      auto g = param.grad();
      auto& m = m_[p];
      auto& v = v_[p];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = double(g[i]);
        m[i] = beta1_ * m[i] + (1 - beta1_) * gi;
        v[i] = beta2_ * v[i] + (1 - beta2_) * gi * gi;
        w[i] = T(double(w[i]) - lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_));
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  ParamStore<T>& store_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace dsdf
