#include <gtest/gtest.h>

#include "dunet/gradcheck.hpp"
#include "dunet/losses.hpp"

using namespace dunet;

namespace {

std::vector<int32_t> random_target(int64_t n, int32_t classes, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int32_t> d(0, classes - 1);
  std::vector<int32_t> t(n);
  for (auto& v : t) v = d(rng);
  return t;
}

}  // namespace

TEST(CeLoss, UniformLogitsGiveLogC) {
  for (int C : {2, 3, 5}) {
    auto logits = Var<double>::zeros({1, C, 4, 4});
    auto t = random_target(16, C, 7);
    EXPECT_NEAR(ce_loss(logits, t).item(), std::log(double(C)), 1e-12);
  }
}

TEST(CeLoss, ConfidentCorrectPredictionNearZero) {
  std::vector<double> z(1 * 2 * 2 * 2, 0.0);
  std::vector<int32_t> t{1, 0, 1, 0};
  for (int i = 0; i < 4; ++i) z[t[i] * 4 + i] = 50.0;
  auto logits = Var<double>::leaf({1, 2, 2, 2}, z, false);
  EXPECT_NEAR(ce_loss(logits, t).item(), 0.0, 1e-12);
}

TEST(DiceLoss, UniformLogitsClosedForm) {
  const int C = 3, HW = 16;
  auto logits = Var<double>::zeros({1, C, 4, 4});
  auto t = random_target(HW, C, 11);
  const double eps = 1e-5;
  double want = 0.0;
  for (int c = 0; c < C; ++c) {
    double nc = std::count(t.begin(), t.end(), c);
    double d = (2.0 * nc / C + eps) / (double(HW) / C + nc + eps);
    want += 1.0 - d;
  }
  want /= C;
  EXPECT_NEAR(dice_loss(logits, t).item(), want, 1e-12);
}

TEST(DiceLoss, ConfidentCorrectPredictionNearZero) {
  std::vector<int32_t> t{0, 1, 1, 0};
  std::vector<double> z(8, 0.0);
  for (int i = 0; i < 4; ++i) z[t[i] * 4 + i] = 60.0;
  auto logits = Var<double>::leaf({1, 2, 2, 2}, z, false);
  EXPECT_NEAR(dice_loss(logits, t).item(), 0.0, 1e-9);
}

TEST(DiceLoss, PerSampleDiffersFromBatchPooled) {
  auto logits = Var<double>::leaf({2, 2, 2, 2},
                                  randn_vec<double>(16, 13), false);
  auto t = random_target(8, 2, 17);
  double per_sample = dice_loss(logits, t).item();
  double pooled = dice_loss(logits, t, 1e-5, true).item();
  EXPECT_TRUE(std::isfinite(per_sample));
  EXPECT_TRUE(std::isfinite(pooled));
  EXPECT_NE(per_sample, pooled);
}

TEST(TotalLoss, IsSumOfParts) {
  auto logits = Var<double>::leaf({1, 3, 2, 2},
                                  randn_vec<double>(12, 19), false);
  auto t = random_target(4, 3, 23);
  EXPECT_DOUBLE_EQ(total_loss(logits, t).item(),
                   dice_loss(logits, t).item() + ce_loss(logits, t).item());
}

TEST(Losses, RejectBadTargets) {
  auto logits = Var<double>::zeros({1, 2, 2, 2});
  EXPECT_THROW(ce_loss(logits, {0, 1, 2, 0}), ShapeError);
  EXPECT_THROW(dice_loss(logits, {0, 1}), ShapeError);
}

TEST(Losses, GradChecks) {
  for (uint64_t s = 0; s < 3; ++s) {
    auto t = random_target(2 * 9, 3, 29 + s);
    std::function<Var<double>(const std::vector<Var<double>>&)> fc =
        [&t](const std::vector<Var<double>>& in) { return ce_loss(in[0], t); };
    std::function<Var<double>(const std::vector<Var<double>>&)> fd =
        [&t](const std::vector<Var<double>>& in) {
          return dice_loss(in[0], t);
        };
    std::function<Var<double>(const std::vector<Var<double>>&)> fb =
        [&t](const std::vector<Var<double>>& in) {
          return dice_loss(in[0], t, 1e-5, true);
        };
    auto logits = Var<double>::leaf({2, 3, 3, 3},
                                    randn_vec<double>(2 * 3 * 9, 31 + s), true);
    for (const auto& f : {fc, fd, fb}) {
      auto rep = gradcheck<double>(f, {logits}, 1e-4, 1e-4, 64, s);
      EXPECT_TRUE(rep.pass) << "worst relative error " << rep.worst;
    }
  }
}
