#pragma once

#include "privlm/params.hpp"

#include <cmath>
#include <cstdint>

namespace privlm {

// Bias-corrected Adam over a flat parameter vector.
class Adam {
 public:
  explicit Adam(double learning_rate = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                double epsilon = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

  void step(Vec& params, const Vec& grad) {
    if (m_.size() != params.size()) {
      m_ = Vec::Zero(params.size());
      v_ = Vec::Zero(params.size());
    }
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
  }

  std::uint64_t steps() const { return t_; }
  double learning_rate() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  Vec m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace privlm
