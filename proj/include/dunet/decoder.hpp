#pragma once

#include "dunet/adapter.hpp"
#include "dunet/config.hpp"
#include "dunet/ops.hpp"
#include "dunet/param_store.hpp"

namespace dunet {

// Standard U-Net decoder over the FAPM skips: bilinear x2 upsampling,
// concat with the next-shallower skip, two 3x3 conv+gelu blocks per level,
// then a 1x1 class head and a final bilinear upsample to input resolution.

template <typename T>
void init_decoder(const DecoderConfig& cfg, std::mt19937_64& rng,
                  ParamStore<T>& store) {
  cfg.validate();
  const auto& dims = cfg.skip_dims;
  const int n = static_cast<int>(dims.size());
  int prev = dims[n - 1];
  for (int i = n - 2; i >= 0; --i) {
    const int w = dims[i];
    const int in1 = prev + w;
    const std::string p = "decoder.up" + std::to_string(i) + ".";
    store.add(p + "conv1.w", {w, in1, 3, 3},
              he_normal<T>(int64_t(w) * in1 * 9, int64_t(in1) * 9, rng), true);
    store.add_zeros(p + "conv1.b", {w}, true);
    store.add(p + "conv2.w", {w, w, 3, 3},
              he_normal<T>(int64_t(w) * w * 9, int64_t(w) * 9, rng), true);
    store.add_zeros(p + "conv2.b", {w}, true);
    prev = w;
  }
  store.add("decoder.head.w", {cfg.num_classes, dims[0], 1, 1},
            he_normal<T>(int64_t(cfg.num_classes) * dims[0], dims[0], rng),
            true);
  store.add_zeros("decoder.head.b", {cfg.num_classes}, true);
}

inline int64_t decoder_param_count(const DecoderConfig& cfg) {
  const auto& dims = cfg.skip_dims;
  const int n = static_cast<int>(dims.size());
  int64_t total = 0;
  int64_t prev = dims[n - 1];
  for (int i = n - 2; i >= 0; --i) {
    const int64_t w = dims[i];
    total += w * (prev + w) * 9 + w + w * w * 9 + w;
    prev = w;
  }
  total += int64_t(cfg.num_classes) * dims[0] + cfg.num_classes;
  return total;
}

template <typename T>
Var<T> decoder_forward(const Pyramid<T>& skips, const ParamStore<T>& store,
                       const DecoderConfig& cfg) {
  const int n = static_cast<int>(cfg.skip_dims.size());
  require(static_cast<int>(skips.size()) == n,
          "decoder expects " + std::to_string(n) + " skips, got " +
              std::to_string(skips.size()));
  for (int i = 0; i < n; ++i) {
    require(skips[i].dim(1) == cfg.skip_dims[i],
            "skip " + std::to_string(i) + " channel dim " +
                std::to_string(skips[i].dim(1)) + " != configured " +
                std::to_string(cfg.skip_dims[i]));
    if (i + 1 < n)
      require(skips[i].dim(2) == 2 * skips[i + 1].dim(2) &&
                  skips[i].dim(3) == 2 * skips[i + 1].dim(3),
              "skip " + std::to_string(i) + " spatial dims inconsistent with "
              "skip " + std::to_string(i + 1));
  }
  Var<T> y = skips[n - 1];
  for (int i = n - 2; i >= 0; --i) {
    y = bilinear_resize(y, skips[i].dim(2), skips[i].dim(3));
    y = concat<T>({y, skips[i]}, 1);
    const std::string p = "decoder.up" + std::to_string(i) + ".";
    y = gelu(conv2d(y, store.get(p + "conv1.w"), store.get(p + "conv1.b"), 1,
                    1));
    y = gelu(conv2d(y, store.get(p + "conv2.w"), store.get(p + "conv2.b"), 1,
                    1));
  }
  Var<T> logits = conv2d(y, store.get("decoder.head.w"),
                         store.get("decoder.head.b"));
  const int f = cfg.final_upsample_factor;
  return bilinear_resize(logits, logits.dim(2) * f, logits.dim(3) * f);
}

// Argmax over the class axis; exact ties go to the lowest class index.
template <typename T>
std::vector<int32_t> predict_mask(const Var<T>& logits) {
  require(logits.ndim() == 4, "predict_mask expects [B,C,H,W]");
  const int64_t B = logits.dim(0), C = logits.dim(1),
                HW = logits.dim(2) * logits.dim(3);
  std::vector<int32_t> mask(B * HW);
  const auto& v = logits.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < HW; ++i) {
      int32_t best = 0;
      T bv = v[(b * C) * HW + i];
      for (int64_t c = 1; c < C; ++c) {
        T x = v[(b * C + c) * HW + i];
        if (x > bv) {
          bv = x;
          best = static_cast<int32_t>(c);
        }
      }
      mask[b * HW + i] = best;
    }
  return mask;
}

}  // namespace dunet
