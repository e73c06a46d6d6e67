#pragma once

#include "dunet/config.hpp"
#include "dunet/ops.hpp"
#include "dunet/param_store.hpp"

namespace dunet {

// Frozen ViT-style backbone stub. Patch embedding + learned positional grid
// + pre-norm transformer blocks; intermediate token maps are captured at the
// configured tap layers and returned as dense [B,D,gh,gw] maps.

template <typename T>
void init_backbone(const BackboneConfig& cfg, uint64_t seed,
                   ParamStore<T>& store) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const int D = cfg.embed_dim;
  const int ps = cfg.patch_size;
  const int hid = cfg.mlp_ratio * D;
  store.add("backbone.patch_embed.w", {D, 3, ps, ps},
            he_normal<T>(int64_t(D) * 3 * ps * ps, int64_t(3) * ps * ps, rng),
            false);
  store.add_zeros("backbone.patch_embed.b", {D}, false);
  store.add("backbone.pos", {1, D, cfg.pos_grid, cfg.pos_grid},
            normal_init<T>(int64_t(D) * cfg.pos_grid * cfg.pos_grid, 0.02,
                           rng),
            false);
  for (int l = 0; l < cfg.depth; ++l) {
    const std::string p = "backbone.block" + std::to_string(l) + ".";
    store.add(p + "ln1.g", {D}, std::vector<T>(D, T(1)), false);
    store.add_zeros(p + "ln1.b", {D}, false);
    for (const char* h : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
      store.add(p + h, {D, D}, he_normal<T>(int64_t(D) * D, D, rng), false);
    for (const char* h : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"})
      store.add_zeros(p + h, {D}, false);
    store.add(p + "ln2.g", {D}, std::vector<T>(D, T(1)), false);
    store.add_zeros(p + "ln2.b", {D}, false);
    store.add(p + "mlp.w1", {hid, D}, he_normal<T>(int64_t(hid) * D, D, rng),
              false);
    store.add_zeros(p + "mlp.b1", {hid}, false);
    store.add(p + "mlp.w2", {D, hid}, he_normal<T>(int64_t(D) * hid, hid, rng),
              false);
    store.add_zeros(p + "mlp.b2", {D}, false);
  }
}

// Closed-form count of the frozen registry above.
inline int64_t backbone_param_count(const BackboneConfig& cfg) {
  const int64_t D = cfg.embed_dim, ps = cfg.patch_size, g = cfg.pos_grid;
  const int64_t hid = int64_t(cfg.mlp_ratio) * D;
  int64_t patch = D * 3 * ps * ps + D;
  int64_t pos = D * g * g;
  int64_t block = 2 * (2 * D)                    // two layer norms
                  + 4 * (D * D + D)              // qkv + out projections
                  + (hid * D + hid) + (D * hid + D);  // mlp
  return patch + pos + cfg.depth * block;
}

template <typename T>
Var<T> attention_block(const Var<T>& tokens, const ParamStore<T>& store,
                       const std::string& p, int num_heads) {
  const int64_t B = tokens.dim(0), N = tokens.dim(1), D = tokens.dim(2);
  const int64_t dh = D / num_heads;
  auto split_heads = [&](const Var<T>& t) {
    return transpose(reshape(t, {B, N, num_heads, dh}), {0, 2, 1, 3});
  };
  Var<T> q = split_heads(linear(tokens, store.get(p + "attn.wq"),
                                store.get(p + "attn.bq")));
  Var<T> k = split_heads(linear(tokens, store.get(p + "attn.wk"),
                                store.get(p + "attn.bk")));
  Var<T> v = split_heads(linear(tokens, store.get(p + "attn.wv"),
                                store.get(p + "attn.bv")));
  Var<T> scores = scale(matmul(q, transpose(k, {0, 1, 3, 2})),
                        T(1) / std::sqrt(static_cast<T>(dh)));
  Var<T> att = softmax(scores, 3);
  Var<T> ctx = reshape(transpose(matmul(att, v), {0, 2, 1, 3}), {B, N, D});
  return linear(ctx, store.get(p + "attn.wo"), store.get(p + "attn.bo"));
}

// Returns the tap maps, one per entry of cfg.tap_layers, each [B,D,gh,gw].
template <typename T>
std::vector<Var<T>> backbone_forward(const Var<T>& x,
                                     const BackboneConfig& cfg,
                                     const ParamStore<T>& store) {
  require(x.ndim() == 4 && x.dim(1) == 3,
          "backbone input must be [B,3,H,W], got " + shape_str(x.shape()));
  const int64_t H = x.dim(2), W = x.dim(3);
  require(H % cfg.patch_size == 0 && W % cfg.patch_size == 0,
          "backbone input dims must be divisible by patch size " +
              std::to_string(cfg.patch_size) + ", got " +
              shape_str(x.shape()));
  const int64_t B = x.dim(0), D = cfg.embed_dim;
  const int64_t gh = H / cfg.patch_size, gw = W / cfg.patch_size;

  Var<T> p = conv2d(x, store.get("backbone.patch_embed.w"),
                    store.get("backbone.patch_embed.b"), cfg.patch_size, 0, 1);
  Var<T> pos = bilinear_resize(store.get("backbone.pos"), gh, gw);
  p = add(p, pos);
  Var<T> t = transpose(reshape(p, {B, D, gh * gw}), {0, 2, 1});  // [B,N,D]

  std::vector<Var<T>> taps;
  size_t tap_idx = 0;
  for (int l = 0; l < cfg.depth; ++l) {
    const std::string pre = "backbone.block" + std::to_string(l) + ".";
    Var<T> n1 = layer_norm(t, store.get(pre + "ln1.g"),
                           store.get(pre + "ln1.b"), 2);
    t = add(t, attention_block(n1, store, pre, cfg.num_heads));
    Var<T> n2 = layer_norm(t, store.get(pre + "ln2.g"),
                           store.get(pre + "ln2.b"), 2);
    Var<T> h = gelu(linear(n2, store.get(pre + "mlp.w1"),
                           store.get(pre + "mlp.b1")));
    t = add(t, linear(h, store.get(pre + "mlp.w2"),
                      store.get(pre + "mlp.b2")));
    if (tap_idx < cfg.tap_layers.size() && cfg.tap_layers[tap_idx] == l + 1) {
      taps.push_back(reshape(transpose(t, {0, 2, 1}), {B, D, gh, gw}));
      ++tap_idx;
    }
  }
  require(taps.size() == cfg.tap_layers.size(), "tap collection incomplete");
  return taps;
}

}  // namespace dunet
