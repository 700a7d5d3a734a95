#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "mcn/tape.hpp"

namespace mcn {

inline double lr_schedule(std::uint64_t iter, double base, double factor, std::uint64_t period) {
  if (period == 0) return base;
  return base * std::pow(factor, static_cast<double>(iter / period));
}

struct SgdConfig {
  double base_lr = 0.01;
  double factor = 0.1;
  std::uint64_t period = 50000;
  double momentum = 0.9;

  double lr(std::uint64_t iter) const { return lr_schedule(iter, base_lr, factor, period); }
};

// Nesterov momentum with the parameters stored at the lookahead point:
//   v' = mu v - lr g
//   x += (1 + mu) v' - mu v
// With mu = 0 this is plain SGD.
template <typename T>
class Nesterov {
 public:
  explicit Nesterov(SgdConfig cfg) : cfg_(cfg) {}

  const SgdConfig& config() const { return cfg_; }

  // `params` must be passed in the same order every call.
  void step(const std::vector<Parameter<T>*>& params, std::uint64_t iter) {
    if (velocity_.empty()) {
      for (auto* p : params) velocity_.emplace_back(p->value.shape());
    }
    if (velocity_.size() != params.size())
      throw ShapeError("nesterov_step: " + std::to_string(params.size()) + " parameters, state holds " +
                       std::to_string(velocity_.size()));
    const T lr = static_cast<T>(cfg_.lr(iter));
    const T mu = static_cast<T>(cfg_.momentum);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter<T>& p = *params[i];
      if (p.frozen) continue;
      p.value.require_same_shape(velocity_[i], ("nesterov_step velocity " + p.name).c_str());
      p.value.require_same_shape(p.grad, ("nesterov_step gradient " + p.name).c_str());
      auto x = p.value.data();
      auto v = velocity_[i].data();
      auto g = p.grad.data();
      for (std::size_t k = 0; k < x.size(); ++k) {
        const T v_old = v[k];
        v[k] = mu * v_old - lr * g[k];
        x[k] += (T(1) + mu) * v[k] - mu * v_old;
      }
    }
  }

  const std::vector<Tensor<T>>& velocity() const { return velocity_; }

 private:
  SgdConfig cfg_;
  std::vector<Tensor<T>> velocity_;
};

}  // namespace mcn
