#pragma once

#include "dunet/ops.hpp"

namespace dunet {

namespace detail {

template <typename T>
std::vector<T> softmax_probs(const Var<T>& logits) {
  const int64_t B = logits.dim(0), C = logits.dim(1),
                HW = logits.dim(2) * logits.dim(3);
  std::vector<T> p(logits.size());
  const auto& z = logits.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < HW; ++i) {
      T m = z[(b * C) * HW + i];
      for (int64_t c = 1; c < C; ++c)
        m = std::max(m, z[(b * C + c) * HW + i]);
      T s = T(0);
      for (int64_t c = 0; c < C; ++c) {
        T e = std::exp(z[(b * C + c) * HW + i] - m);
        p[(b * C + c) * HW + i] = e;
        s += e;
      }
      for (int64_t c = 0; c < C; ++c) p[(b * C + c) * HW + i] /= s;
    }
  return p;
}

template <typename T>
void check_targets(const Var<T>& logits, const std::vector<int32_t>& target) {
  const int64_t B = logits.dim(0), C = logits.dim(1),
                HW = logits.dim(2) * logits.dim(3);
  require(static_cast<int64_t>(target.size()) == B * HW,
          "target size " + std::to_string(target.size()) +
              " != B*H*W = " + std::to_string(B * HW));
  for (int32_t t : target)
    require(t >= 0 && t < C,
            "target label " + std::to_string(t) + " out of range [0," +
                std::to_string(C) + ")");
}

}  // namespace detail

// Mean over pixels of -log softmax at the target class.
template <typename T>
Var<T> ce_loss(const Var<T>& logits, const std::vector<int32_t>& target) {
  require(logits.ndim() == 4, "ce_loss expects [B,C,H,W] logits");
  detail::check_targets(logits, target);
  const int64_t B = logits.dim(0), C = logits.dim(1),
                HW = logits.dim(2) * logits.dim(3);
  std::vector<T> p = detail::softmax_probs(logits);
  T loss = T(0);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < HW; ++i)
      loss -= std::log(p[(b * C + target[b * HW + i]) * HW + i]);
  loss /= static_cast<T>(B * HW);
  auto ln = logits.node();
  return make_op<T>(
      {1}, {loss}, {ln},
      [ln, target, B, C, HW, p = std::move(p)](Node<T>& o) {
        const T g = o.grad[0] / static_cast<T>(B * HW);
        for (int64_t b = 0; b < B; ++b)
          for (int64_t i = 0; i < HW; ++i) {
            const int32_t t = target[b * HW + i];
            for (int64_t c = 0; c < C; ++c) {
              T q = p[(b * C + c) * HW + i];
              ln->grad[(b * C + c) * HW + i] +=
                  g * (q - (c == t ? T(1) : T(0)));
            }
          }
      });
}

// Soft Dice over softmax probabilities, per-sample per-class sums by
// default (batch_dice pools the batch axis).
template <typename T>
Var<T> dice_loss(const Var<T>& logits, const std::vector<int32_t>& target,
                 T eps = T(1e-5), bool batch_dice = false) {
  require(logits.ndim() == 4, "dice_loss expects [B,C,H,W] logits");
  detail::check_targets(logits, target);
  const int64_t B = logits.dim(0), C = logits.dim(1),
                HW = logits.dim(2) * logits.dim(3);
  std::vector<T> p = detail::softmax_probs(logits);

  const int64_t groups = batch_dice ? 1 : B;
  const int64_t gsz = batch_dice ? B * HW : HW;  // pixels per group
  // per (group, class): intersection, prob mass, target mass
  std::vector<T> inter(groups * C, T(0)), pm(groups * C, T(0)),
      gm(groups * C, T(0));
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < HW; ++i) {
      const int64_t grp = batch_dice ? 0 : b;
      const int32_t t = target[b * HW + i];
      for (int64_t c = 0; c < C; ++c) {
        T q = p[(b * C + c) * HW + i];
        pm[grp * C + c] += q;
        if (c == t) inter[grp * C + c] += q;
      }
      gm[grp * C + t] += T(1);
    }
  T loss = T(0);
  for (int64_t g = 0; g < groups; ++g)
    for (int64_t c = 0; c < C; ++c) {
      T d = (2 * inter[g * C + c] + eps) /
            (pm[g * C + c] + gm[g * C + c] + eps);
      loss += (T(1) - d);
    }
  loss /= static_cast<T>(groups * C);

  auto ln = logits.node();
  return make_op<T>(
      {1}, {loss}, {ln},
      [ln, target, B, C, HW, eps, batch_dice, p = std::move(p),
       inter = std::move(inter), pm = std::move(pm),
       gm = std::move(gm)](Node<T>& o) {
        const int64_t groups = batch_dice ? 1 : B;
        const T g0 = o.grad[0] / static_cast<T>(groups * C);
        // dL/dp_c(x) then chain through softmax per pixel
        std::vector<T> dden(groups * C), dnum(groups * C);
        for (int64_t g = 0; g < groups; ++g)
          for (int64_t c = 0; c < C; ++c) {
            T den = pm[g * C + c] + gm[g * C + c] + eps;
            dnum[g * C + c] = -g0 * 2 / den;  // d(1-d_c)/d inter
            dden[g * C + c] =
                g0 * (2 * inter[g * C + c] + eps) / (den * den);
          }
        for (int64_t b = 0; b < B; ++b) {
          const int64_t g = batch_dice ? 0 : b;
          for (int64_t i = 0; i < HW; ++i) {
            const int32_t t = target[b * HW + i];
            // dL/dp per class at this pixel
            T dot = T(0);
            std::vector<T> dp(C);
            for (int64_t c = 0; c < C; ++c) {
              dp[c] = dden[g * C + c] + (c == t ? dnum[g * C + c] : T(0));
              dot += dp[c] * p[(b * C + c) * HW + i];
            }
            for (int64_t c = 0; c < C; ++c) {
              T q = p[(b * C + c) * HW + i];
              ln->grad[(b * C + c) * HW + i] += q * (dp[c] - dot);
            }
          }
        }
      });
}

template <typename T>
Var<T> total_loss(const Var<T>& logits, const std::vector<int32_t>& target,
                  T dice_eps = T(1e-5), bool batch_dice = false) {
  return add(dice_loss(logits, target, dice_eps, batch_dice),
             ce_loss(logits, target));
}

}  // namespace dunet
