#pragma once

#include "dunet/backbone.hpp"
#include "dunet/adapter.hpp"
#include "dunet/config.hpp"
#include "dunet/decoder.hpp"
#include "dunet/fapm.hpp"
#include "dunet/param_store.hpp"

namespace dunet {

// Full assembly: frozen backbone taps -> adapter pyramid -> FAPM skips
// (or the 1x1 ablation baseline) -> decoder logits.
template <typename T>
struct Model {
  ModelConfig cfg;
  ParamStore<T> store;

  Var<T> forward(const Var<T>& x) const {
    auto taps = backbone_forward(x, cfg.backbone, store);
    auto pyramid = adapter_forward(x, taps, store, cfg.adapter);
    auto skips = cfg.use_fapm_baseline
                     ? fapm_baseline_forward(pyramid, store)
                     : fapm_forward(pyramid, store, cfg.fapm);
    return decoder_forward(skips, store, cfg.decoder);
  }
};

// Backbone init draws from seed; the trainable modules share a second
// stream so adding/removing the baseline never shifts backbone bytes.
template <typename T>
Model<T> build_model(const ModelConfig& cfg) {
  cfg.validate();
  Model<T> m;
  m.cfg = cfg;
  init_backbone(cfg.backbone, cfg.seed, m.store);
  std::mt19937_64 rng(cfg.seed + 1);
  init_adapter(cfg.adapter, rng, m.store);
  if (cfg.use_fapm_baseline)
    init_fapm_baseline(cfg.fapm, rng, m.store);
  else
    init_fapm(cfg.fapm, rng, m.store);
  init_decoder(cfg.decoder, rng, m.store);
  return m;
}

// Sliding-window inference with Gaussian importance weighting
// (sigma = window/8, peak-normalized). A single covering tile falls back to
// the plain forward pass, bit for bit.
template <typename T>
Var<T> sliding_window_infer(const Model<T>& model, const Var<T>& image,
                            int window, double overlap) {
  require(image.ndim() == 4, "sliding_window_infer expects [B,3,H,W]");
  require(window % 32 == 0, "window must be divisible by 32");
  require(overlap >= 0.0 && overlap < 1.0, "overlap must be in [0,1)");
  const int64_t B = image.dim(0), H = image.dim(2), W = image.dim(3);
  if (window >= H && window >= W) return model.forward(image);

  auto positions = [&](int64_t n) {
    std::vector<int64_t> pos;
    if (window >= n) {
      pos.push_back(0);
      return pos;
    }
    int64_t stride = std::max<int64_t>(
        1, static_cast<int64_t>(std::llround(window * (1.0 - overlap))));
    for (int64_t p = 0;; p += stride) {
      if (p + window >= n) {
        pos.push_back(n - window);
        break;
      }
      pos.push_back(p);
    }
    return pos;
  };
  auto ys = positions(H);
  auto xs = positions(W);
  if (ys.size() == 1 && xs.size() == 1 && window >= H && window >= W)
    return model.forward(image);

  // peak-normalized Gaussian tile weight
  std::vector<T> gw(static_cast<size_t>(window) * window);
  {
    const double sigma = window / 8.0;
    const double c = (window - 1) / 2.0;
    double mx = 0.0;
    for (int y = 0; y < window; ++y)
      for (int x = 0; x < window; ++x) {
        double d2 = (y - c) * (y - c) + (x - c) * (x - c);
        double v = std::exp(-d2 / (2.0 * sigma * sigma));
        gw[y * static_cast<size_t>(window) + x] = static_cast<T>(v);
        mx = std::max(mx, v);
      }
    for (auto& v : gw) v = static_cast<T>(v / mx);
  }

  const int64_t C = model.cfg.decoder.num_classes;
  std::vector<T> acc(B * C * H * W, T(0));
  std::vector<T> wsum(static_cast<size_t>(H) * W, T(0));
  const auto& img = image.data();
  for (int64_t y0 : ys)
    for (int64_t x0 : xs) {
      std::vector<T> tile(B * 3 * window * window);
      for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < 3; ++c)
          for (int64_t y = 0; y < window; ++y)
            for (int64_t x = 0; x < window; ++x)
              tile[((b * 3 + c) * window + y) * window + x] =
                  img[((b * 3 + c) * H + y0 + y) * W + x0 + x];
      Var<T> logits = model.forward(
          Var<T>::leaf({B, 3, window, window}, std::move(tile), false));
      const auto& lv = logits.data();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
          for (int64_t y = 0; y < window; ++y)
            for (int64_t x = 0; x < window; ++x) {
              T w = gw[y * static_cast<size_t>(window) + x];
              acc[((b * C + c) * H + y0 + y) * W + x0 + x] +=
                  w * lv[((b * C + c) * window + y) * window + x];
            }
      for (int64_t y = 0; y < window; ++y)
        for (int64_t x = 0; x < window; ++x)
          wsum[(y0 + y) * static_cast<size_t>(W) + x0 + x] +=
              gw[y * static_cast<size_t>(window) + x];
    }
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x)
          acc[((b * C + c) * H + y) * W + x] /=
              wsum[y * static_cast<size_t>(W) + x];
  return Var<T>::leaf({B, C, H, W}, std::move(acc), false);
}

}  // namespace dunet
