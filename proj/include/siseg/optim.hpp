#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "siseg/tensor.hpp"

namespace siseg::nn {

/// Cosine annealing with warm restarts: starts at lr_max, decays to lr_min
/// over `period` epochs, then resets. Accepts a fractional epoch so any
/// point of the cycle can be queried.
inline double cosine_lr(double epoch, double lr_max = 1e-3, double lr_min = 1e-5,
                        double period = 25.0) {
  const double phase = std::fmod(epoch, period) / period;
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(M_PI * phase));
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
};

/// AdamW with decoupled weight decay: parameters are first scaled by
/// (1 - lr*wd), then updated with the bias-corrected Adam step computed
/// from the gradients currently stored on the parameters.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Tensor<T>> params, AdamWConfig cfg = {})
      : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.emplace_back(p.size(), T(0));
      v_.emplace_back(p.size(), T(0));
    }
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const T decay = static_cast<T>(1.0 - lr * cfg_.weight_decay);
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      auto& vals = params_[pi].values();
      const auto& grads = params_[pi].grad();
      auto& m = m_[pi];
      auto& v = v_[pi];
      for (std::size_t i = 0; i < vals.size(); ++i) {
        vals[i] *= decay;
        const T g = grads[i];
        m[i] = static_cast<T>(cfg_.beta1) * m[i] + static_cast<T>(1.0 - cfg_.beta1) * g;
        v[i] = static_cast<T>(cfg_.beta2) * v[i] + static_cast<T>(1.0 - cfg_.beta2) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        vals[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::int64_t step_count() const { return t_; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> m_, v_;
  AdamWConfig cfg_;
  std::int64_t t_ = 0;
};

}  // namespace siseg::nn
