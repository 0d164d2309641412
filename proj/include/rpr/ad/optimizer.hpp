#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "rpr/ad/graph.hpp"

namespace rpr::ad {

struct RAdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// First/second moment accumulators per parameter plus the shared step count.
template <typename T>
struct RAdamState {
  std::int64_t step = 0;
  std::vector<Array<T>> m;
  std::vector<Array<T>> v;
};

/// Adaptive-moment update with variance rectification (Rectified Adam).
/// While the approximated SMA length is at most 5 the step falls back to
/// bias-corrected momentum SGD.
template <typename T>
class RAdam {
 public:
  explicit RAdam(RAdamConfig cfg = {}) : cfg_(cfg) {}

  const RAdamConfig& config() const { return cfg_; }
  RAdamConfig& config() { return cfg_; }
  RAdamState<T>& state() { return state_; }
  const RAdamState<T>& state() const { return state_; }

  /// `grads[i]` belongs to `params[i]`. Throws NumericalError naming the
  /// offending parameter before touching any value.
  void step(ParameterSet<T>& params, const std::vector<Array<T>>& grads) {
    if (grads.size() != params.size()) throw InvalidArgument("optimizer: gradient count does not match parameters");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (grads[i].size() != params[i].shape.size()) throw ShapeError("optimizer: gradient shape mismatch for " + params[i].name);
      if (!grads[i].allFinite()) throw NumericalError("optimizer: non-finite gradient for " + params[i].name);
    }
    if (state_.m.size() != params.size()) {
      state_.m.clear();
      state_.v.clear();
      for (std::size_t i = 0; i < params.size(); ++i) {
        state_.m.push_back(Array<T>::Zero(params[i].shape.size()));
        state_.v.push_back(Array<T>::Zero(params[i].shape.size()));
      }
    }
    const std::int64_t t = ++state_.step;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double b1t = std::pow(b1, static_cast<double>(t));
    const double b2t = std::pow(b2, static_cast<double>(t));
    const double rho_inf = 2.0 / (1.0 - b2) - 1.0;
    const double rho_t = rho_inf - 2.0 * static_cast<double>(t) * b2t / (1.0 - b2t);
    const bool rectified = rho_t > 5.0;
    double rect = 0.0;
    if (rectified) {
      rect = std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter<T>& p = params[i];
      if (!p.trainable) continue;
      Array<T> g = grads[i];
      if (cfg_.weight_decay != 0.0) g += T(cfg_.weight_decay) * p.value;
      state_.m[i] = T(b1) * state_.m[i] + T(1 - b1) * g;
      state_.v[i] = T(b2) * state_.v[i] + T(1 - b2) * g.square();
      const Array<T> m_hat = state_.m[i] / T(1 - b1t);
      if (rectified) {
        const Array<T> denom = (state_.v[i] / T(1 - b2t)).sqrt() + T(cfg_.eps);
        p.value -= T(cfg_.lr * rect) * m_hat / denom;
      } else {
        p.value -= T(cfg_.lr) * m_hat;
      }
    }
  }

 private:
  RAdamConfig cfg_;
  RAdamState<T> state_;
};

}  // namespace rpr::ad
