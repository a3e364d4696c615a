#pragma once

#include <cmath>
#include <vector>

#include "cts/error.hpp"
#include "cts/tensor.hpp"

namespace cts {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Frozen parameters keep both their value and
/// their moment estimates untouched.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamOptions opts = {})
      : params_(std::move(params)), opts_(opts) {
    for (Parameter* p : params_) {
      m_.push_back(Tensor::zeros(p->value.shape()));
      v_.push_back(Tensor::zeros(p->value.shape()));
    }
  }

  /// Applies one update and zeroes every gradient. A non-finite gradient in
  /// any trainable parameter aborts the step before anything is modified.
  void step() { step(opts_.lr); }

  void step(double lr) {
    for (Parameter* p : params_) {
      if (p->trainable && !p->grad.all_finite()) {
        throw NumericError("adam: non-finite gradient in " + p->name);
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Parameter& p = *params_[i];
      if (p.trainable) {
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (std::size_t k = 0; k < p.value.size(); ++k) {
          const double g = p.grad[k];
          m[k] = opts_.beta1 * m[k] + (1.0 - opts_.beta1) * g;
          v[k] = opts_.beta2 * v[k] + (1.0 - opts_.beta2) * g * g;
          const double mhat = m[k] / bc1;
          const double vhat = v[k] / bc2;
          p.value[k] -= lr * mhat / (std::sqrt(vhat) + opts_.eps);
        }
      }
      p.zero_grad();
    }
  }

  long steps_taken() const { return t_; }
  const AdamOptions& options() const { return opts_; }

 private:
  std::vector<Parameter*> params_;
  AdamOptions opts_;
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

/// One Adam update on a fresh optimizer state.
inline void adam_step(const std::vector<Parameter*>& params, double lr, double beta1 = 0.9,
                      double beta2 = 0.999, double eps = 1e-8) {
  Adam opt(params, AdamOptions{lr, beta1, beta2, eps});
  opt.step();
}

}  // namespace cts
