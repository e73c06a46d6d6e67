#include <gtest/gtest.h>

#include "dunet/gradcheck.hpp"
#include "dunet/ops.hpp"

using namespace dunet;

namespace {

Var<double> randn(const Shape& s, uint64_t seed) {
  return Var<double>::leaf(s, randn_vec<double>(numel(s), seed), true);
}

using F = std::function<Var<double>(const std::vector<Var<double>>&)>;

void expect_pass(const F& f, std::vector<Var<double>> inputs,
                 uint64_t seed = 0) {
  auto rep = gradcheck<double>(f, inputs, 1e-4, 1e-4, 64, seed);
  EXPECT_TRUE(rep.pass) << "worst relative error " << rep.worst;
}

}  // namespace

TEST(GradCheck, Conv2d) {
  for (uint64_t s = 0; s < 3; ++s) {
    F f = [](const std::vector<Var<double>>& in) {
      return sum_all(mul(conv2d(in[0], in[1], in[2], 1, 1), in[3]));
    };
    expect_pass(f, {randn({1, 2, 4, 4}, 100 + s), randn({3, 2, 3, 3}, 200 + s),
                    randn({3}, 300 + s), randn({1, 3, 4, 4}, 400 + s)},
                s);
  }
}

TEST(GradCheck, Conv2dGroupedStrided) {
  F f = [](const std::vector<Var<double>>& in) {
    return sum_all(mul(conv2d(in[0], in[1], Var<double>(), 2, 1, 2), in[2]));
  };
  expect_pass(f, {randn({1, 4, 5, 5}, 1), randn({4, 2, 3, 3}, 2),
                  randn({1, 4, 3, 3}, 3)});
}

TEST(GradCheck, BilinearResize) {
  for (uint64_t s = 0; s < 3; ++s) {
    F f = [](const std::vector<Var<double>>& in) {
      return sum_all(mul(bilinear_resize(in[0], 5, 7), in[1]));
    };
    expect_pass(f, {randn({1, 2, 3, 4}, 10 + s), randn({1, 2, 5, 7}, 20 + s)},
                s);
  }
}

TEST(GradCheck, BilinearSampleValueAndPoints) {
  // interior, off-grid points so the point gradient is well-defined
  for (uint64_t s = 0; s < 3; ++s) {
    std::mt19937_64 rng(40 + s);
    std::uniform_real_distribution<double> u(0.2, 0.8);
    std::vector<double> pv(1 * 6 * 2);
    for (auto& p : pv) p = u(rng);
    auto pts = Var<double>::leaf({1, 6, 2}, pv, true);
    F f = [](const std::vector<Var<double>>& in) {
      return sum_all(mul(bilinear_sample(in[0], in[1]), in[2]));
    };
    expect_pass(f, {randn({1, 2, 5, 5}, 50 + s), pts, randn({1, 2, 6}, 60 + s)},
                s);
  }
}

TEST(GradCheck, LinearSoftmaxChain) {
  for (uint64_t s = 0; s < 3; ++s) {
    F f = [](const std::vector<Var<double>>& in) {
      return sum_all(mul(softmax(linear(in[0], in[1], in[2]), 1), in[3]));
    };
    expect_pass(f, {randn({3, 4}, 70 + s), randn({5, 4}, 80 + s),
                    randn({5}, 90 + s), randn({3, 5}, 95 + s)},
                s);
  }
}

TEST(GradCheck, SigmoidGeluReluChain) {
  for (uint64_t s = 0; s < 3; ++s) {
    F f = [](const std::vector<Var<double>>& in) {
      return sum_all(mul(sigmoid(gelu(in[0])), in[1]));
    };
    expect_pass(f, {randn({2, 6}, 110 + s), randn({2, 6}, 120 + s)}, s);
  }
}

TEST(GradCheck, LayerNorm) {
  for (uint64_t s = 0; s < 3; ++s) {
    F f = [](const std::vector<Var<double>>& in) {
      return sum_all(mul(layer_norm(in[0], in[1], in[2], 2), in[3]));
    };
    expect_pass(f, {randn({2, 3, 6}, 130 + s), randn({6}, 140 + s),
                    randn({6}, 150 + s), randn({2, 3, 6}, 160 + s)},
                s);
  }
}

TEST(GradCheck, MatmulTransposeConcat) {
  F f = [](const std::vector<Var<double>>& in) {
    auto m = matmul(in[0], transpose(in[1], {0, 2, 1}));
    auto c = concat<double>({m, in[2]}, 2);
    return sum_all(mul(c, c));
  };
  expect_pass(f, {randn({2, 3, 4}, 170), randn({2, 3, 4}, 180),
                  randn({2, 3, 2}, 190)});
}

TEST(GradCheck, PoolSliceBroadcast) {
  F f = [](const std::vector<Var<double>>& in) {
    auto s = global_avg_pool(in[0]);            // [B,C]
    auto g = reshape(s, {2, 3, 1, 1});
    auto y = mul(in[0], g);                     // per-channel broadcast
    return sum_all(slice_axis(y, 1, 1, 2));
  };
  expect_pass(f, {randn({2, 3, 4, 4}, 200)});
}
