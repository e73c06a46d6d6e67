#include <gtest/gtest.h>

#include "dunet/decoder.hpp"

using namespace dunet;

namespace {

Var<double> randn(const Shape& s, uint64_t seed) {
  return Var<double>::leaf(s, randn_vec<double>(numel(s), seed), false);
}

}  // namespace

TEST(Decoder, FormulaMatchesRegistry) {
  DecoderConfig cfg;
  ParamStore<double> store;
  std::mt19937_64 rng(2);
  init_decoder(cfg, rng, store);
  int64_t enumerated = 0;
  for (const auto& [name, p] : store.entries()) {
    EXPECT_TRUE(p.trainable) << name;
    enumerated += p.var.size();
  }
  EXPECT_EQ(enumerated, decoder_param_count(cfg));
}

TEST(Decoder, LogitsAtInputResolution) {
  DecoderConfig cfg;
  cfg.num_classes = 3;
  ParamStore<double> store;
  std::mt19937_64 rng(2);
  init_decoder(cfg, rng, store);
  Pyramid<double> skips{randn({2, 16, 16, 16}, 1), randn({2, 32, 8, 8}, 2),
                        randn({2, 64, 4, 4}, 3), randn({2, 128, 2, 2}, 4)};
  auto logits = decoder_forward(skips, store, cfg);
  EXPECT_EQ(logits.shape(), (Shape{2, 3, 64, 64}));
  for (double v : logits.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Decoder, GradientReachesEverySkip) {
  DecoderConfig cfg;
  ParamStore<double> store;
  std::mt19937_64 rng(2);
  init_decoder(cfg, rng, store);
  Pyramid<double> skips;
  const Shape shapes[] = {{1, 16, 8, 8}, {1, 32, 4, 4},
                          {1, 64, 2, 2}, {1, 128, 1, 1}};
  for (int i = 0; i < 4; ++i)
    skips.push_back(Var<double>::leaf(
        shapes[i], randn_vec<double>(numel(shapes[i]), 10 + i), true));
  backward(sum_all(decoder_forward(skips, store, cfg)));
  for (int i = 0; i < 4; ++i) {
    bool any = false;
    for (double g : skips[i].grad()) any |= g != 0.0;
    EXPECT_TRUE(any) << "skip " << i;
  }
}

TEST(Decoder, PredictMaskArgmaxAndTies) {
  // 2x1x1 spatial grid, 3 classes; tie goes to the lowest class index
  auto logits = Var<double>::leaf({1, 3, 1, 2},
                                  {1.0, 5.0,   // class 0
                                   4.0, 5.0,   // class 1
                                   4.0, 2.0},  // class 2
                                  false);
  auto mask = predict_mask(logits);
  ASSERT_EQ(mask.size(), 2u);
  EXPECT_EQ(mask[0], 1);  // 4 > 1, later tie with class 2 keeps class 1
  EXPECT_EQ(mask[1], 0);  // tie between classes 0 and 1 -> class 0
}

TEST(Decoder, RejectsInconsistentSkips) {
  DecoderConfig cfg;
  ParamStore<double> store;
  std::mt19937_64 rng(2);
  init_decoder(cfg, rng, store);
  Pyramid<double> bad_channels{randn({1, 16, 16, 16}, 1),
                               randn({1, 32, 8, 8}, 2),
                               randn({1, 64, 4, 4}, 3),
                               randn({1, 64, 2, 2}, 4)};
  EXPECT_THROW(decoder_forward(bad_channels, store, cfg), ShapeError);
  Pyramid<double> bad_spatial{randn({1, 16, 16, 16}, 1),
                              randn({1, 32, 8, 8}, 2),
                              randn({1, 64, 4, 4}, 3),
                              randn({1, 128, 3, 3}, 4)};
  EXPECT_THROW(decoder_forward(bad_spatial, store, cfg), ShapeError);
}
