#pragma once

#include "dunet/adapter.hpp"
#include "dunet/config.hpp"
#include "dunet/ops.hpp"
#include "dunet/param_store.hpp"

namespace dunet {

// Fidelity-aware projection module. Shared-context / scale-specific low-rank
// decomposition, FiLM modulation of the specific branch, then a per-scale
// refinement block (depthwise separable conv + SE + projection shortcut).

template <typename T>
void init_fapm(const FapmConfig& cfg, std::mt19937_64& rng,
               ParamStore<T>& store) {
  cfg.validate();
  const int D = cfg.in_dim, R = cfg.rank, k = cfg.dw_kernel;
  store.add("fapm.ctx.w", {R, D, 1, 1},
            he_normal<T>(int64_t(R) * D, D, rng), true);
  store.add_zeros("fapm.ctx.b", {R}, true);
  for (size_t i = 0; i < cfg.out_dims.size(); ++i) {
    const int Dp = cfg.out_dims[i];
    const int hid = cfg.se_hidden(static_cast<int>(i));
    const std::string p = "fapm.s" + std::to_string(i) + ".";
    store.add(p + "sp.w", {R, D, 1, 1}, he_normal<T>(int64_t(R) * D, D, rng),
              true);
    store.add_zeros(p + "sp.b", {R}, true);
    // FiLM generator: zero weights, gamma bias 1, beta bias 0 -> identity
    // modulation before any training step.
    store.add_zeros(p + "gen.w", {2 * R, R, 1, 1}, true);
    {
      std::vector<T> gb(2 * R, T(0));
      std::fill(gb.begin(), gb.begin() + R, T(1));
      store.add(p + "gen.b", {2 * R}, std::move(gb), true);
    }
    store.add(p + "wr.w", {Dp, R, 1, 1}, he_normal<T>(int64_t(Dp) * R, R, rng),
              true);
    store.add_zeros(p + "wr.b", {Dp}, true);
    store.add(p + "dw.w", {Dp, 1, k, k},
              he_normal<T>(int64_t(Dp) * k * k, int64_t(k) * k, rng), true);
    store.add_zeros(p + "dw.b", {Dp}, true);
    store.add(p + "pw.w", {Dp, Dp, 1, 1},
              he_normal<T>(int64_t(Dp) * Dp, Dp, rng), true);
    store.add_zeros(p + "pw.b", {Dp}, true);
    store.add(p + "se.w1", {hid, Dp}, he_normal<T>(int64_t(hid) * Dp, Dp, rng),
              true);
    store.add_zeros(p + "se.b1", {hid}, true);
    store.add(p + "se.w2", {Dp, hid},
              he_normal<T>(int64_t(Dp) * hid, hid, rng), true);
    store.add_zeros(p + "se.b2", {Dp}, true);
    if (R != Dp) {
      store.add(p + "sc.w", {Dp, R, 1, 1},
                he_normal<T>(int64_t(Dp) * R, R, rng), true);
      store.add_zeros(p + "sc.b", {Dp}, true);
    }
  }
}

// Ablation baseline: one plain 1x1 projection per scale.
template <typename T>
void init_fapm_baseline(const FapmConfig& cfg, std::mt19937_64& rng,
                        ParamStore<T>& store) {
  const int D = cfg.in_dim;
  for (size_t i = 0; i < cfg.out_dims.size(); ++i) {
    const int Dp = cfg.out_dims[i];
    const std::string p = "fapm_baseline.s" + std::to_string(i) + ".";
    store.add(p + "w", {Dp, D, 1, 1}, he_normal<T>(int64_t(Dp) * D, D, rng),
              true);
    store.add_zeros(p + "b", {Dp}, true);
  }
}

template <typename T>
std::pair<Var<T>, Var<T>> decompose(const Var<T>& c_prime,
                                    const ParamStore<T>& store, int scale) {
  Var<T> z_ctx = conv2d(c_prime, store.get("fapm.ctx.w"),
                        store.get("fapm.ctx.b"));
  const std::string p = "fapm.s" + std::to_string(scale) + ".";
  Var<T> z_sp = conv2d(c_prime, store.get(p + "sp.w"), store.get(p + "sp.b"));
  return {z_ctx, z_sp};
}

template <typename T>
struct FilmResult {
  Var<T> gamma, beta, z_mod;
};

template <typename T>
FilmResult<T> film_modulate(const Var<T>& z_ctx, const Var<T>& z_sp,
                            const ParamStore<T>& store, int scale) {
  require(z_ctx.shape() == z_sp.shape(),
          "film branches must share shape: " + shape_str(z_ctx.shape()) +
              " vs " + shape_str(z_sp.shape()));
  const int64_t R = z_ctx.dim(1);
  const std::string p = "fapm.s" + std::to_string(scale) + ".";
  Var<T> gb = conv2d(z_ctx, store.get(p + "gen.w"), store.get(p + "gen.b"));
  Var<T> gamma = slice_axis(gb, 1, 0, R);
  Var<T> beta = slice_axis(gb, 1, R, R);
  return {gamma, beta, add(mul(gamma, z_sp), beta)};
}

template <typename T>
Var<T> refine(const Var<T>& z_mod, const ParamStore<T>& store, int scale,
              const FapmConfig& cfg) {
  const std::string p = "fapm.s" + std::to_string(scale) + ".";
  const int64_t B = z_mod.dim(0);
  const int Dp = cfg.out_dims[scale];
  const int k = cfg.dw_kernel;
  Var<T> y = conv2d(z_mod, store.get(p + "wr.w"), store.get(p + "wr.b"));
  Var<T> yp = conv2d(y, store.get(p + "dw.w"), store.get(p + "dw.b"), 1,
                     k / 2, Dp);
  yp = conv2d(yp, store.get(p + "pw.w"), store.get(p + "pw.b"));
  Var<T> s = global_avg_pool(yp);
  s = relu(linear(s, store.get(p + "se.w1"), store.get(p + "se.b1")));
  s = sigmoid(linear(s, store.get(p + "se.w2"), store.get(p + "se.b2")));
  Var<T> gated = mul(yp, reshape(s, {B, Dp, 1, 1}));
  Var<T> shortcut = cfg.rank == Dp
                        ? z_mod
                        : conv2d(z_mod, store.get(p + "sc.w"),
                                 store.get(p + "sc.b"));
  return add(gated, shortcut);
}

template <typename T>
Pyramid<T> fapm_forward(const Pyramid<T>& pyramid, const ParamStore<T>& store,
                        const FapmConfig& cfg) {
  require(pyramid.size() == cfg.out_dims.size(),
          "fapm expects " + std::to_string(cfg.out_dims.size()) +
              " scales, got " + std::to_string(pyramid.size()));
  Pyramid<T> skips;
  for (size_t i = 0; i < pyramid.size(); ++i) {
    require(pyramid[i].dim(1) == cfg.in_dim,
            "fapm scale " + std::to_string(i) + " channel dim " +
                std::to_string(pyramid[i].dim(1)) + " != " +
                std::to_string(cfg.in_dim));
    auto [z_ctx, z_sp] = decompose(pyramid[i], store, static_cast<int>(i));
    auto film = film_modulate(z_ctx, z_sp, store, static_cast<int>(i));
    skips.push_back(refine(film.z_mod, store, static_cast<int>(i), cfg));
  }
  return skips;
}

template <typename T>
Pyramid<T> fapm_baseline_forward(const Pyramid<T>& pyramid,
                                 const ParamStore<T>& store) {
  Pyramid<T> skips;
  for (size_t i = 0; i < pyramid.size(); ++i) {
    const std::string p = "fapm_baseline.s" + std::to_string(i) + ".";
    skips.push_back(conv2d(pyramid[i], store.get(p + "w"),
                           store.get(p + "b")));
  }
  return skips;
}

}  // namespace dunet
