#pragma once

#include "dunet/config.hpp"
#include "dunet/ops.hpp"
#include "dunet/param_store.hpp"

namespace dunet {

// Dual-branch encoder front-end: a conv spatial prior pyramid enriched
// against frozen backbone taps through deformable cross-attention stages.

template <typename T>
using Pyramid = std::vector<Var<T>>;  // shallow -> deep, all D channels

template <typename T>
void init_adapter(const AdapterConfig& cfg, std::mt19937_64& rng,
                  ParamStore<T>& store) {
  cfg.validate();
  const int D = cfg.channels;
  const int N = cfg.num_scales;
  const int K = cfg.num_points;
  const int h = cfg.num_heads;
  store.add("adapter.spm.stem1.w", {D, 3, 3, 3},
            he_normal<T>(int64_t(D) * 3 * 9, 27, rng), true);
  store.add_zeros("adapter.spm.stem1.b", {D}, true);
  store.add("adapter.spm.stem2.w", {D, D, 3, 3},
            he_normal<T>(int64_t(D) * D * 9, int64_t(D) * 9, rng), true);
  store.add_zeros("adapter.spm.stem2.b", {D}, true);
  for (int i = 1; i < N; ++i) {
    const std::string p = "adapter.spm.down" + std::to_string(i) + ".";
    store.add(p + "w", {D, D, 3, 3},
              he_normal<T>(int64_t(D) * D * 9, int64_t(D) * 9, rng), true);
    store.add_zeros(p + "b", {D}, true);
  }
  for (int i = 0; i < N; ++i) {
    const std::string p = "adapter.spm.proj" + std::to_string(i) + ".";
    store.add(p + "w", {D, D, 1, 1}, he_normal<T>(int64_t(D) * D, D, rng),
              true);
    store.add_zeros(p + "b", {D}, true);
  }
  // One attention head set per interaction stage, shared across scales.
  // Weight-logit and output heads are zero-initialized so every stage is
  // the identity (with residual) at init. Offset biases point the K samples
  // in distinct directions; with coincident samples the weight-logit head
  // would sit at an exactly-zero-gradient symmetry point forever.
  for (int s = 0; s < N; ++s) {
    const std::string p = "adapter.ib" + std::to_string(s) + ".";
    store.add(p + "value.w", {D, D, 1, 1},
              he_normal<T>(int64_t(D) * D, D, rng), true);
    store.add_zeros(p + "value.b", {D}, true);
    store.add_zeros(p + "offset.w", {2 * K * h, D, 1, 1}, true);
    {
      std::vector<T> ob(2 * K * h);
      for (int i = 0; i < K * h; ++i) {
        const double a = 2.0 * M_PI * i / (K * h);
        const double r = 1.0 + i % K;
        ob[2 * i + 0] = static_cast<T>(r * std::cos(a));
        ob[2 * i + 1] = static_cast<T>(r * std::sin(a));
      }
      store.add(p + "offset.b", {2 * K * h}, std::move(ob), true);
    }
    store.add_zeros(p + "weight.w", {K * h, D, 1, 1}, true);
    store.add_zeros(p + "weight.b", {K * h}, true);
    store.add_zeros(p + "out.w", {D, D, 1, 1}, true);
    store.add_zeros(p + "out.b", {D}, true);
  }
}

inline int64_t adapter_param_count(const AdapterConfig& cfg) {
  const int64_t D = cfg.channels, N = cfg.num_scales;
  const int64_t K = cfg.num_points, h = cfg.num_heads;
  int64_t spm = (D * 3 * 9 + D) + (D * D * 9 + D)     // stem
                + (N - 1) * (D * D * 9 + D)           // downs
                + N * (D * D + D);                    // projections
  int64_t ib = (D * D + D)                            // value proj
               + (2 * K * h * D + 2 * K * h)          // offsets
               + (K * h * D + K * h)                  // weight logits
               + (D * D + D);                         // output proj
  return spm + N * ib;
}

// Spatial prior module: stem to stride 4, then stride-2 downs; each level
// projected to D channels by a 1x1 conv.
template <typename T>
Pyramid<T> spm_forward(const Var<T>& x, const AdapterConfig& cfg,
                       const ParamStore<T>& store) {
  require(x.ndim() == 4 && x.dim(1) == 3,
          "spm input must be [B,3,H,W], got " + shape_str(x.shape()));
  const int max_stride = cfg.pyramid_strides.back();
  require(x.dim(2) % max_stride == 0 && x.dim(3) % max_stride == 0,
          "spm input dims must be divisible by " +
              std::to_string(max_stride) + ", got " + shape_str(x.shape()));
  require(cfg.pyramid_strides[0] == 4, "spm expects the first stride to be 4");
  for (int i = 1; i < cfg.num_scales; ++i)
    require(cfg.pyramid_strides[i] == 2 * cfg.pyramid_strides[i - 1],
            "spm expects doubling strides");

  Var<T> y = gelu(conv2d(x, store.get("adapter.spm.stem1.w"),
                         store.get("adapter.spm.stem1.b"), 2, 1));
  y = gelu(conv2d(y, store.get("adapter.spm.stem2.w"),
                  store.get("adapter.spm.stem2.b"), 2, 1));
  Pyramid<T> levels{y};
  for (int i = 1; i < cfg.num_scales; ++i) {
    const std::string p = "adapter.spm.down" + std::to_string(i) + ".";
    y = gelu(conv2d(y, store.get(p + "w"), store.get(p + "b"), 2, 1));
    levels.push_back(y);
  }
  Pyramid<T> out;
  for (int i = 0; i < cfg.num_scales; ++i) {
    const std::string p = "adapter.spm.proj" + std::to_string(i) + ".";
    out.push_back(conv2d(levels[i], store.get(p + "w"), store.get(p + "b")));
  }
  return out;
}

// Normalized cell-center reference points for a query grid, repeated K
// times per cell: [B, Hq*Wq*K, 2] with (x,y) layout.
template <typename T>
Var<T> reference_points(int64_t B, int64_t Hq, int64_t Wq, int64_t K) {
  std::vector<T> pts(B * Hq * Wq * K * 2);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t qy = 0; qy < Hq; ++qy)
      for (int64_t qx = 0; qx < Wq; ++qx)
        for (int64_t k = 0; k < K; ++k) {
          int64_t i = (((b * Hq + qy) * Wq + qx) * K + k) * 2;
          pts[i + 0] = (static_cast<T>(qx) + T(0.5)) / static_cast<T>(Wq);
          pts[i + 1] = (static_cast<T>(qy) + T(0.5)) / static_cast<T>(Hq);
        }
  return Var<T>::leaf({B, Hq * Wq * K, 2}, std::move(pts), false);
}

// Deformable cross-attention: each query cell predicts K offsets and K
// softmax weights (per head), samples the projected value map there and
// combines. prefix names the head parameters ("adapter.ib{s}.").
template <typename T>
Var<T> deformable_cross_attn(const Var<T>& query, const Var<T>& value,
                             const ParamStore<T>& store,
                             const std::string& prefix,
                             const AdapterConfig& cfg) {
  require(query.ndim() == 4 && value.ndim() == 4,
          "deformable attention expects [B,D,H,W] maps");
  require(query.dim(1) == value.dim(1),
          "deformable attention channel mismatch: " +
              shape_str(query.shape()) + " vs " + shape_str(value.shape()));
  const int64_t B = query.dim(0), D = query.dim(1);
  const int64_t Hq = query.dim(2), Wq = query.dim(3);
  const int64_t Hv = value.dim(2), Wv = value.dim(3);
  const int64_t K = cfg.num_points, heads = cfg.num_heads;
  const int64_t dh = D / heads;
  const int64_t Q = Hq * Wq;
  const T off_scale = T(1) / static_cast<T>(std::max(Hv, Wv));

  Var<T> v = conv2d(value, store.get(prefix + "value.w"),
                    store.get(prefix + "value.b"));
  Var<T> off_all = conv2d(query, store.get(prefix + "offset.w"),
                          store.get(prefix + "offset.b"));
  Var<T> logit_all = conv2d(query, store.get(prefix + "weight.w"),
                            store.get(prefix + "weight.b"));

  std::vector<Var<T>> head_outs;
  for (int64_t h = 0; h < heads; ++h) {
    Var<T> off = slice_axis(off_all, 1, h * 2 * K, 2 * K);
    // [B,2K,Hq,Wq] -> [B,Q*K,2]: point p for cell q, sample k
    Var<T> off_pts = reshape(
        transpose(reshape(off, {B, K, 2, Q}), {0, 3, 1, 2}), {B, Q * K, 2});
    Var<T> points =
        add(scale(off_pts, off_scale), reference_points<T>(B, Hq, Wq, K));

    Var<T> logit = slice_axis(logit_all, 1, h * K, K);
    Var<T> w = softmax(logit, 1);  // over the K samples
    Var<T> w_pts =
        reshape(transpose(reshape(w, {B, K, Q}), {0, 2, 1}), {B, 1, Q * K});

    Var<T> vh = heads == 1 ? v : slice_axis(v, 1, h * dh, dh);
    Var<T> sampled = bilinear_sample(vh, points);          // [B,dh,Q*K]
    Var<T> weighted = mul(sampled, w_pts);                 // broadcast over dh
    Var<T> combined = sum_axis(reshape(weighted, {B, dh, Q, K}), 3);
    head_outs.push_back(reshape(combined, {B, dh, Hq, Wq}));
  }
  Var<T> merged = heads == 1 ? head_outs[0] : concat(head_outs, 1);
  return conv2d(merged, store.get(prefix + "out.w"),
                store.get(prefix + "out.b"));
}

// One interaction stage: every pyramid scale queries the stage's backbone
// tap. Zero-init heads + residual make this the identity at init.
template <typename T>
Pyramid<T> interaction_block(const Pyramid<T>& state, const Var<T>& f_vit,
                             const ParamStore<T>& store,
                             const std::string& prefix,
                             const AdapterConfig& cfg, bool residual) {
  Pyramid<T> out;
  for (const auto& map : state) {
    Var<T> upd = deformable_cross_attn(map, f_vit, store, prefix, cfg);
    out.push_back(residual ? add(map, upd) : upd);
  }
  return out;
}

template <typename T>
Pyramid<T> adapter_forward(const Var<T>& x, const std::vector<Var<T>>& taps,
                           const ParamStore<T>& store,
                           const AdapterConfig& cfg) {
  require(static_cast<int>(taps.size()) == cfg.num_scales,
          "adapter needs " + std::to_string(cfg.num_scales) +
              " backbone taps, got " + std::to_string(taps.size()));
  Pyramid<T> state = spm_forward(x, cfg, store);
  for (int s = 0; s < cfg.num_scales; ++s)
    state = interaction_block(state, taps[s], store,
                              "adapter.ib" + std::to_string(s) + ".", cfg,
                              cfg.interaction_residual);
  return state;
}

}  // namespace dunet
