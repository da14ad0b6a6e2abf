#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gnem/tensor.hpp"

namespace gnem {

/// A trainable tensor plus its gradient accumulator and Adam moments.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> m, v;  // first/second moment

  Parameter() = default;
  Parameter(std::string n, Tensor<T> val) : name(std::move(n)), value(std::move(val)) {
    grad = Tensor<T>::zeros(value.shape());
    m = Tensor<T>::zeros(value.shape());
    v = Tensor<T>::zeros(value.shape());
  }
};

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay and bias correction. Parameters are
/// updated in place; a NaN gradient fails the whole step naming the parameter.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {
    GNEM_CHECK(cfg_.lr > 0, "AdamW: lr must be > 0, got ", cfg_.lr);
    GNEM_CHECK(cfg_.beta1 >= 0 && cfg_.beta1 < 1 && cfg_.beta2 >= 0 && cfg_.beta2 < 1,
               "AdamW: betas must lie in [0,1), got ", cfg_.beta1, ", ", cfg_.beta2);
  }

  const AdamWConfig& config() const { return cfg_; }
  int64_t step_count() const { return step_; }
  void set_step_count(int64_t s) { step_ = s; }

  /// One update over all parameters at the given learning rate (callers pass
  /// the scheduled rate; cfg.lr is the base).
  void step(std::vector<Parameter<T>*>& params, double lr) {
    ++step_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));
    for (auto* p : params) {
      for (size_t i = 0; i < p->grad.numel(); ++i) {
        if (std::isnan(double(p->grad[i])) || std::isinf(double(p->grad[i]))) {
          throw contract_error("AdamW: non-finite gradient in parameter '" + p->name + "'");
        }
      }
      for (size_t i = 0; i < p->value.numel(); ++i) {
        double g = double(p->grad[i]);
        double m = cfg_.beta1 * double(p->m[i]) + (1.0 - cfg_.beta1) * g;
        double v = cfg_.beta2 * double(p->v[i]) + (1.0 - cfg_.beta2) * g * g;
        p->m[i] = T(m);
        p->v[i] = T(v);
        double mhat = m / bc1;
        double vhat = v / bc2;
        double upd = mhat / (std::sqrt(vhat) + cfg_.eps);
        // decoupled decay
        double x = double(p->value[i]);
        x -= lr * (upd + cfg_.weight_decay * x);
        p->value[i] = T(x);
      }
    }
  }

  void step(std::vector<Parameter<T>*>& params) { step(params, cfg_.lr); }

 private:
  AdamWConfig cfg_;
  int64_t step_ = 0;
};

/// Cosine decay from base_lr at step 0 to exactly 0 at step total_steps-1.
inline double cosine_lr(double base_lr, int64_t step, int64_t total_steps) {
  if (total_steps <= 1) return base_lr;
  double t = double(step) / double(total_steps - 1);
  if (t >= 1.0) return 0.0;
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * t));
}

}  // namespace gnem
