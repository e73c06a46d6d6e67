#pragma once

#include <functional>

#include "dunet/tensor.hpp"

namespace dunet {

template <typename T>
struct GradCheckReport {
  std::vector<T> max_rel_err;  // one per checked input
  bool pass = true;
  T worst = T(0);
};

// Central finite differences against the analytic gradient. `f` must rebuild
// its graph from the given leaves on every call. Coordinates are subsampled
// (seeded) when an input is larger than max_coords.
template <typename T>
GradCheckReport<T> gradcheck(
    const std::function<Var<T>(const std::vector<Var<T>>&)>& f,
    const std::vector<Var<T>>& inputs, T eps = T(1e-4), T tol = T(1e-4),
    int64_t max_coords = 64, uint64_t seed = 0) {
  GradCheckReport<T> rep;
  for (const auto& in : inputs) {
    require(in.requires_grad(), "gradcheck inputs must require grad");
    in.node()->ensure_grad();
    in.node()->zero_grad();
  }
  Var<T> loss = f(inputs);
  require(loss.size() == 1, "gradcheck target must be scalar");
  backward(loss);

  std::mt19937_64 rng(seed);
  for (const auto& in : inputs) {
    const int64_t n = in.size();
    std::vector<int64_t> coords(n);
    std::iota(coords.begin(), coords.end(), 0);
    if (max_coords > 0 && n > max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords);
    }
    T worst = T(0);
    auto& data = in.node()->value;
    for (int64_t c : coords) {
      const T orig = data[c];
      data[c] = orig + eps;
      T fp = f(inputs).item();
      data[c] = orig - eps;
      T fm = f(inputs).item();
      data[c] = orig;
      T numeric = (fp - fm) / (2 * eps);
      T analytic = in.grad()[c];
      T denom = std::max(T(1), std::max(std::abs(numeric), std::abs(analytic)));
      worst = std::max(worst, std::abs(numeric - analytic) / denom);
    }
    rep.max_rel_err.push_back(worst);
    rep.worst = std::max(rep.worst, worst);
    if (worst > tol) rep.pass = false;
  }
  return rep;
}

}  // namespace dunet
