#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "echomap/common.hpp"

namespace echomap::nn {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-5;
};

template <typename T>
struct AdamWState {
  std::vector<T> m, v;
  long long step = 0;
};

/// Adam moments on the raw gradient; the decay multiplies the weights
/// directly (w <- w - lr * wd * w) and never enters the moments.
template <typename T>
void adamw_step(std::span<T> params, std::span<const T> grads, AdamWState<T>& state, const AdamWConfig& cfg) {
  if (params.size() != grads.size()) throw Error("adamw_step: parameter/gradient size mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), T{});
    state.v.assign(params.size(), T{});
  }
  if (state.m.size() != params.size()) throw Error("adamw_step: optimizer state size mismatch");
  for (T g : grads) {
    if (!std::isfinite(static_cast<double>(g))) throw Error("adamw_step: non-finite gradient");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T decay = static_cast<T>(1.0 - cfg.lr * cfg.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    state.m[i] = b1 * state.m[i] + (T{1} - b1) * g;
    state.v[i] = b2 * state.v[i] + (T{1} - b2) * g * g;
    const double m_hat = static_cast<double>(state.m[i]) / bc1;
    const double v_hat = static_cast<double>(state.v[i]) / bc2;
    params[i] = decay * params[i] - static_cast<T>(cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
  }
}

}  // namespace echomap::nn
