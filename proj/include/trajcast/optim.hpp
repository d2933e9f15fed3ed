#pragma once

#include <cmath>

#include "trajcast/param_tree.hpp"

namespace trajcast {

// Cosine annealing from lr_init at step 0 down to lr_min at total_steps.
inline double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr_init,
                        double lr_min) {
  if (total_steps <= 0) throw ConfigError("cosine_lr: total_steps must be > 0");
  if (step < 0 || step > total_steps)
    throw ConfigError("cosine_lr: step out of [0, total_steps]");
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + std::cos(3.14159265358979323846 * t));
}

// AdamW with decoupled weight decay: decay acts on the weights directly and
// never enters the moment estimates.
template <typename T>
class AdamW {
 public:
  struct Hyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
  };

  explicit AdamW(const ParamTree<T>& params, Hyper h = {})
      : h_(h), m_(params.zeros_like()), v_(params.zeros_like()) {}

  const Hyper& hyper() const { return h_; }
  std::int64_t step_count() const { return t_; }

  void step(ParamTree<T>& params, const ParamTree<T>& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(h_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(h_.beta2, static_cast<double>(t_));
    for (auto& [name, p] : params) {
      if (!grads.contains(name))
        throw ConsistencyError("adamw: missing gradient for parameter " + name);
      const Tensor<T>& gt = grads.at(name);
      if (gt.shape != p.shape)
        throw ConsistencyError("adamw: gradient shape mismatch for " + name);
      Tensor<T>& mt = m_.at(name);
      Tensor<T>& vt = v_.at(name);
      for (std::size_t i = 0; i < p.data.size(); ++i) {
        const double gv = static_cast<double>(gt.data[i]);
        double m = static_cast<double>(mt.data[i]);
        double v = static_cast<double>(vt.data[i]);
        m = h_.beta1 * m + (1.0 - h_.beta1) * gv;
        v = h_.beta2 * v + (1.0 - h_.beta2) * gv * gv;
        mt.data[i] = static_cast<T>(m);
        vt.data[i] = static_cast<T>(v);
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        double w = static_cast<double>(p.data[i]);
        w -= lr * (mhat / (std::sqrt(vhat) + h_.eps) + h_.weight_decay * w);
        p.data[i] = static_cast<T>(w);
      }
    }
  }

 private:
  Hyper h_;
  ParamTree<T> m_;
  ParamTree<T> v_;
  std::int64_t t_ = 0;
};

// Global-norm gradient clipping; returns the pre-clip norm.
template <typename T>
double clip_grad_norm(ParamTree<T>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (const T v : g.data) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& [name, g] : grads)
      for (T& v : g.data) v *= s;
  }
  return norm;
}

}  // namespace trajcast
