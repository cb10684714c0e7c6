#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "duet/common.hpp"

namespace duet {

struct AdamWConfig {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double grad_clip_norm = 1.0;  // global norm; <= 0 disables clipping

  void validate() const {
    if (learning_rate < 0.0) throw ValidationError("learning_rate must be >= 0");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
      throw ValidationError("adam betas must lie in [0, 1)");
    if (eps <= 0.0) throw ValidationError("adam eps must be > 0");
    if (weight_decay < 0.0) throw ValidationError("weight_decay must be >= 0");
  }
};

// Adaptive-moment update with decoupled weight decay and bias correction.
// Moments are kept in double; parameters round to float on write-back.
class AdamW {
 public:
  AdamW(AdamWConfig config, const std::vector<std::size_t>& block_sizes)
      : config_(config) {
    config_.validate();
    m_.reserve(block_sizes.size());
    v_.reserve(block_sizes.size());
    for (std::size_t n : block_sizes) {
      m_.emplace_back(n, 0.0);
      v_.emplace_back(n, 0.0);
    }
  }

  // Applies one update; returns the pre-clip global gradient norm.
  double step(const std::vector<std::span<float>>& params,
              const std::vector<std::span<double>>& grads) {
    if (params.size() != m_.size() || grads.size() != m_.size())
      throw ValidationError("optimizer block count mismatch");
    for (std::size_t b = 0; b < m_.size(); ++b)
      if (params[b].size() != m_[b].size() || grads[b].size() != m_[b].size())
        throw ValidationError("optimizer block shape mismatch");

    double sq = 0.0;
    for (const auto& g : grads)
      for (double v : g) sq += v * v;
    const double gnorm = std::sqrt(sq);
    double clip = 1.0;
    if (config_.grad_clip_norm > 0.0 && gnorm > config_.grad_clip_norm)
      clip = config_.grad_clip_norm / gnorm;

    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, t_);
    const double bc2 = 1.0 - std::pow(config_.beta2, t_);
    const double lr = config_.learning_rate;

    for (std::size_t b = 0; b < m_.size(); ++b) {
      auto p = params[b];
      auto g = grads[b];
      auto& m = m_[b];
      auto& v = v_[b];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = g[i] * clip;
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        double pi = static_cast<double>(p[i]);
        pi -= lr * config_.weight_decay * pi;
        pi -= lr * mhat / (std::sqrt(vhat) + config_.eps);
        p[i] = static_cast<float>(pi);
      }
    }
    return gnorm;
  }

  std::int64_t steps_taken() const { return t_; }

 private:
  AdamWConfig config_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace duet
