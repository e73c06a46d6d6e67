#pragma once

#include <cmath>
#include <map>

#include "dunet/config.hpp"
#include "dunet/param_store.hpp"

namespace dunet {

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline double poly_lr(int64_t step, int64_t total_steps, double lr0,
                      double power) {
  require(step >= 0 && step <= total_steps, "poly_lr step out of range");
  return lr0 * std::pow(1.0 - static_cast<double>(step) /
                                  static_cast<double>(total_steps),
                        power);
}

template <typename T>
struct AdamState {
  std::map<std::string, std::vector<T>> m, v;
  int64_t t = 0;
};

// Bias-corrected Adam over the trainable entries. Frozen entries are never
// touched; a NaN gradient aborts with the parameter name.
template <typename T>
void adam_step(ParamStore<T>& store, AdamState<T>& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  ++state.t;
  const double bc1 = 1.0 - std::pow(beta1, state.t);
  const double bc2 = 1.0 - std::pow(beta2, state.t);
  for (auto& [name, p] : store.entries()) {
    if (!p.trainable) continue;
    auto& grad = p.var.grad();
    if (grad.empty()) continue;
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) {
      m.assign(grad.size(), T(0));
      v.assign(grad.size(), T(0));
    }
    auto& data = p.var.data();
    for (size_t i = 0; i < grad.size(); ++i) {
      const double g = grad[i];
      if (std::isnan(g))
        throw NumericError("NaN gradient in parameter " + name);
      m[i] = static_cast<T>(beta1 * m[i] + (1.0 - beta1) * g);
      v[i] = static_cast<T>(beta2 * v[i] + (1.0 - beta2) * g * g);
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      data[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

}  // namespace dunet
