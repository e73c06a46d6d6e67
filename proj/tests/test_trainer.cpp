#include <gtest/gtest.h>

#include <sstream>

#include "dunet/trainer.hpp"

using namespace dunet;

namespace {

ModelConfig tiny_cfg(uint64_t seed = 1, bool baseline = false) {
  ModelConfig cfg = ModelConfig::desk(2, seed);
  cfg.use_fapm_baseline = baseline;
  return cfg;
}

TrainConfig short_train(int steps) {
  TrainConfig t;
  t.epochs = 1;
  t.steps_per_epoch = steps;
  t.batch_size = 1;
  return t;
}

std::string store_bytes(const ParamStore<double>& s) {
  std::ostringstream os(std::ios::binary);
  save_container(s.to_container(), os);
  return os.str();
}

}  // namespace

TEST(PolyLr, EndpointsAndClosedForm) {
  EXPECT_DOUBLE_EQ(poly_lr(0, 100, 0.01, 0.9), 0.01);
  EXPECT_DOUBLE_EQ(poly_lr(100, 100, 0.01, 0.9), 0.0);
  EXPECT_DOUBLE_EQ(poly_lr(25, 100, 0.01, 0.9), 0.01 * std::pow(0.75, 0.9));
  EXPECT_DOUBLE_EQ(poly_lr(50, 100, 2.0, 1.0), 1.0);
  EXPECT_THROW(poly_lr(-1, 100, 0.01, 0.9), ShapeError);
}

TEST(Adam, FirstStepIsSignedLrStep) {
  // with bias correction the first update is lr*g/(|g|+eps) regardless of the
  // betas
  ParamStore<double> store;
  store.add("p", {2}, {1.0, -3.0}, true);
  store.add("frozen", {1}, {5.0}, false);
  store.zero_grads();
  store.get("p").grad() = {0.25, -2.0};
  AdamState<double> st;
  adam_step(store, st, 0.1, 0.9, 0.999, 1e-8);
  EXPECT_NEAR(store.get("p").data()[0], 1.0 - 0.1 * 0.25 / (0.25 + 1e-8),
              1e-12);
  EXPECT_NEAR(store.get("p").data()[1], -3.0 + 0.1 * 2.0 / (2.0 + 1e-8),
              1e-12);
  EXPECT_DOUBLE_EQ(store.get("frozen").data()[0], 5.0);
}

TEST(Adam, TwoConstantGradStepsMatchHandComputation) {
  ParamStore<double> store;
  store.add("p", {1}, {0.0}, true);
  AdamState<double> st;
  const double g = 0.5, lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double m = 0, v = 0, x = 0;
  for (int t = 1; t <= 2; ++t) {
    store.zero_grads();
    store.get("p").grad() = {g};
    adam_step(store, st, lr, b1, b2, eps);
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    x -= lr * mhat / (std::sqrt(vhat) + eps);
    EXPECT_NEAR(store.get("p").data()[0], x, 1e-15) << "step " << t;
  }
}

TEST(Adam, NanGradNamesParameter) {
  ParamStore<double> store;
  store.add("layer.w", {1}, {0.0}, true);
  store.zero_grads();
  store.get("layer.w").grad() = {std::nan("")};
  AdamState<double> st;
  try {
    adam_step(store, st, 0.1);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("layer.w"), std::string::npos);
  }
}

TEST(SynthData, DeterministicAndWellFormed) {
  auto a = make_synth_dataset<double>(4, 32, 3, 9);
  auto b = make_synth_dataset<double>(4, 32, 3, 9);
  auto c = make_synth_dataset<double>(4, 32, 3, 10);
  ASSERT_EQ(a.size(), 4u);
  bool any_diff = false;
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].mask, b[i].mask);
    any_diff |= a[i].image != c[i].image;
    EXPECT_EQ(a[i].image.size(), size_t(3 * 32 * 32));
    EXPECT_EQ(a[i].mask.size(), size_t(32 * 32));
    int64_t fg = 0;
    for (int32_t m : a[i].mask) {
      EXPECT_GE(m, 0);
      EXPECT_LT(m, 3);
      fg += m != 0;
    }
    EXPECT_GT(fg, 0) << "sample " << i << " has no foreground";
  }
  EXPECT_TRUE(any_diff);
}

TEST(SynthData, ContainerRoundTrip) {
  auto d = make_synth_dataset<double>(1, 32, 2, 3);
  auto c = sample_to_container(d[0]);
  auto back = sample_from_container<double>(c);
  EXPECT_EQ(back.h, d[0].h);
  EXPECT_EQ(back.image, d[0].image);
  EXPECT_EQ(back.mask, d[0].mask);
}

TEST(Train, DeterministicLogAndWeights) {
  auto data = make_synth_dataset<double>(2, 32, 2, 5);
  auto run = [&] {
    auto model = build_model<double>(tiny_cfg(3));
    auto log = train(model, data, short_train(3));
    return std::make_pair(loss_log_text(log), store_bytes(model.store));
  };
  auto [log1, bytes1] = run();
  auto [log2, bytes2] = run();
  EXPECT_EQ(log1, log2);
  EXPECT_EQ(bytes1, bytes2);
  EXPECT_NE(log1.find("step\tlr\tdice_loss\tce_loss\ttotal"),
            std::string::npos);
}

TEST(Train, BackboneBytesUntouched) {
  auto data = make_synth_dataset<double>(2, 32, 2, 5);
  auto model = build_model<double>(tiny_cfg(3));
  std::map<std::string, std::vector<double>> before;
  for (const auto& [name, p] : model.store.entries())
    if (name.rfind("backbone.", 0) == 0) before[name] = p.var.data();
  train(model, data, short_train(2));
  for (const auto& [name, vals] : before)
    EXPECT_EQ(model.store.get(name).data(), vals) << name;
  // and at least one trainable parameter did move
  auto fresh = build_model<double>(tiny_cfg(3));
  bool moved = false;
  for (const auto& [name, p] : model.store.entries())
    if (p.trainable && p.var.data() != fresh.store.get(name).data())
      moved = true;
  EXPECT_TRUE(moved);
}

TEST(Train, LossDecreasesOnTinyOverfit) {
  auto data = make_synth_dataset<double>(1, 32, 2, 5);
  auto model = build_model<double>(tiny_cfg(7));
  auto log = train(model, data, short_train(12));
  ASSERT_EQ(log.size(), 12u);
  EXPECT_LT(log.back().total, log.front().total);
}

TEST(SlidingWindow, SingleTileBitExact) {
  auto model = build_model<double>(tiny_cfg(11));
  auto img = Var<double>::leaf({1, 3, 32, 32},
                               randn_vec<double>(3 * 32 * 32, 77), false);
  auto direct = model.forward(img);
  auto tiled = sliding_window_infer(model, img, 32, 0.5);
  EXPECT_EQ(tiled.data(), direct.data());
}

TEST(SlidingWindow, MatchesIndependentAccumulation) {
  auto model = build_model<double>(tiny_cfg(13));
  const int64_t H = 64, W = 64, win = 32;
  const double overlap = 0.5;
  auto img = Var<double>::leaf({1, 3, H, W},
                               randn_vec<double>(3 * H * W, 88), false);
  auto got = sliding_window_infer(model, img, win, overlap);
  ASSERT_EQ(got.shape(), (Shape{1, 2, H, W}));

  // independent accumulation: same tiling contract, scalar loops
  std::vector<int64_t> pos;
  {
    int64_t stride = static_cast<int64_t>(std::llround(win * (1.0 - overlap)));
    for (int64_t p = 0;; p += stride) {
      if (p + win >= H) {
        pos.push_back(H - win);
        break;
      }
      pos.push_back(p);
    }
  }
  const double sigma = win / 8.0, c = (win - 1) / 2.0;
  std::vector<double> gw(win * win);
  double mx = 0;
  for (int64_t y = 0; y < win; ++y)
    for (int64_t x = 0; x < win; ++x) {
      gw[y * win + x] =
          std::exp(-((y - c) * (y - c) + (x - c) * (x - c)) /
                   (2 * sigma * sigma));
      mx = std::max(mx, gw[y * win + x]);
    }
  for (auto& v : gw) v /= mx;
  std::vector<double> acc(2 * H * W, 0.0), wsum(H * W, 0.0);
  for (int64_t y0 : pos)
    for (int64_t x0 : pos) {
      std::vector<double> tile(3 * win * win);
      for (int64_t ch = 0; ch < 3; ++ch)
        for (int64_t y = 0; y < win; ++y)
          for (int64_t x = 0; x < win; ++x)
            tile[(ch * win + y) * win + x] =
                img.data()[(ch * H + y0 + y) * W + x0 + x];
      auto logits = model.forward(
          Var<double>::leaf({1, 3, win, win}, std::move(tile), false));
      for (int64_t ch = 0; ch < 2; ++ch)
        for (int64_t y = 0; y < win; ++y)
          for (int64_t x = 0; x < win; ++x)
            acc[(ch * H + y0 + y) * W + x0 + x] +=
                gw[y * win + x] * logits.data()[(ch * win + y) * win + x];
      for (int64_t y = 0; y < win; ++y)
        for (int64_t x = 0; x < win; ++x)
          wsum[(y0 + y) * W + x0 + x] += gw[y * win + x];
    }
  for (int64_t ch = 0; ch < 2; ++ch)
    for (int64_t i = 0; i < H * W; ++i)
      EXPECT_NEAR(got.data()[ch * H * W + i], acc[ch * H * W + i] / wsum[i],
                  1e-6);
}

TEST(Train, BaselineVariantAlsoTrains) {
  auto data = make_synth_dataset<double>(1, 32, 2, 5);
  auto model = build_model<double>(tiny_cfg(5, true));
  auto log = train(model, data, short_train(2));
  EXPECT_EQ(log.size(), 2u);
  for (const auto& r : log) EXPECT_TRUE(std::isfinite(r.total));
}
