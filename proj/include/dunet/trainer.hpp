#pragma once

#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dunet/losses.hpp"
#include "dunet/model.hpp"
#include "dunet/optim.hpp"
#include "dunet/serialize.hpp"

namespace dunet {

template <typename T>
struct SegSample {
  int64_t h = 0, w = 0;
  std::vector<T> image;         // [3,h,w]
  std::vector<int32_t> mask;    // [h,w]
};

struct TrainDivergence : std::runtime_error {
  int64_t step;
  TrainDivergence(int64_t s, const std::string& msg)
      : std::runtime_error(msg), step(s) {}
};

// Deterministic synthetic segmentation set: 1-3 axis-aligned rectangles or
// discs with distinct foreground labels over a noisy background.
template <typename T>
std::vector<SegSample<T>> make_synth_dataset(int n, int image_size,
                                             int num_classes, uint64_t seed) {
  require(image_size % 32 == 0, "image_size must be divisible by 32");
  require(num_classes >= 2, "num_classes must be >= 2");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.1);
  std::vector<SegSample<T>> out;
  out.reserve(n);
  const int s = image_size;
  for (int i = 0; i < n; ++i) {
    SegSample<T> smp;
    smp.h = smp.w = s;
    smp.image.assign(3 * static_cast<size_t>(s) * s, T(0));
    smp.mask.assign(static_cast<size_t>(s) * s, 0);
    const int max_shapes = std::min(3, num_classes - 1);
    const int nshapes = 1 + static_cast<int>(uni(rng) * max_shapes) % max_shapes;
    std::vector<int> labels(num_classes - 1);
    std::iota(labels.begin(), labels.end(), 1);
    std::shuffle(labels.begin(), labels.end(), rng);
    for (int k = 0; k < nshapes; ++k) {
      const int label = labels[k];
      const bool disc = uni(rng) < 0.5;
      const double cx = (0.2 + 0.6 * uni(rng)) * s;
      const double cy = (0.2 + 0.6 * uni(rng)) * s;
      const double r = (0.10 + 0.15 * uni(rng)) * s;
      const double intensity = 0.3 + 0.6 * uni(rng);
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          bool inside = disc
                            ? (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r
                            : std::abs(x - cx) <= r && std::abs(y - cy) <= r;
          if (inside) {
            smp.mask[y * static_cast<size_t>(s) + x] = label;
            for (int c = 0; c < 3; ++c)
              smp.image[(c * static_cast<size_t>(s) + y) * s + x] =
                  static_cast<T>(intensity * (1.0 + 0.2 * c));
          }
        }
    }
    for (auto& v : smp.image) v += static_cast<T>(noise(rng));
    out.push_back(std::move(smp));
  }
  return out;
}

template <typename T>
Container sample_to_container(const SegSample<T>& s) {
  Container c;
  c.emplace("image",
            ContainerEntry::from(Shape{3, s.h, s.w}, s.image, false));
  c.emplace("mask", ContainerEntry::from(Shape{s.h, s.w}, s.mask, false));
  return c;
}

template <typename T>
SegSample<T> sample_from_container(const Container& c) {
  auto img = c.find("image");
  auto msk = c.find("mask");
  require(img != c.end() && msk != c.end(),
          "sample container must hold image and mask");
  SegSample<T> s;
  s.h = msk->second.dims[0];
  s.w = msk->second.dims[1];
  s.image = img->second.template as<T>();
  s.mask = msk->second.template as<int32_t>();
  return s;
}

struct LossRow {
  int64_t step;
  double lr, dice, ce, total;
};

inline std::string loss_log_text(const std::vector<LossRow>& rows) {
  std::ostringstream os;
  os << "step\tlr\tdice_loss\tce_loss\ttotal\n";
  os.precision(17);
  for (const auto& r : rows)
    os << r.step << '\t' << r.lr << '\t' << r.dice << '\t' << r.ce << '\t'
       << r.total << '\n';
  return os.str();
}

// Supervised loop: seeded shuffle, Dice+CE, Adam with polynomial decay.
template <typename T>
std::vector<LossRow> train(Model<T>& model,
                           const std::vector<SegSample<T>>& data,
                           const TrainConfig& tcfg,
                           uint64_t shuffle_seed = 0) {
  require(!data.empty(), "training data is empty");
  tcfg.validate();
  const int64_t total = tcfg.total_steps();
  std::mt19937_64 rng(shuffle_seed ? shuffle_seed : model.cfg.seed + 17);
  std::vector<size_t> order;
  size_t cursor = 0;
  auto next_index = [&]() {
    if (cursor >= order.size()) {
      order.resize(data.size());
      std::iota(order.begin(), order.end(), size_t(0));
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    return order[cursor++];
  };

  AdamState<T> adam;
  std::vector<LossRow> log;
  log.reserve(total);
  const int64_t h = data[0].h, w = data[0].w;
  for (int64_t step = 0; step < total; ++step) {
    std::vector<T> batch(static_cast<size_t>(tcfg.batch_size) * 3 * h * w);
    std::vector<int32_t> target(static_cast<size_t>(tcfg.batch_size) * h * w);
    for (int b = 0; b < tcfg.batch_size; ++b) {
      const auto& s = data[next_index()];
      require(s.h == h && s.w == w, "training samples must share shape");
      std::copy(s.image.begin(), s.image.end(),
                batch.begin() + static_cast<size_t>(b) * 3 * h * w);
      std::copy(s.mask.begin(), s.mask.end(),
                target.begin() + static_cast<size_t>(b) * h * w);
    }
    Var<T> x = Var<T>::leaf({tcfg.batch_size, 3, h, w}, std::move(batch),
                            false);
    Var<T> logits = model.forward(x);
    Var<T> dice = dice_loss(logits, target);
    Var<T> ce = ce_loss(logits, target);
    Var<T> loss = add(dice, ce);
    const double lv = loss.item();
    if (std::isnan(lv) || std::isinf(lv))
      throw TrainDivergence(step, "loss diverged at step " +
                                      std::to_string(step));
    model.store.zero_grads();
    backward(loss);
    const double lr = poly_lr(step, total, tcfg.lr0, tcfg.poly_power);
    adam_step(model.store, adam, lr, tcfg.beta1, tcfg.beta2, tcfg.adam_eps);
    log.push_back({step, lr, dice.item(), ce.item(), lv});
  }
  return log;
}

}  // namespace dunet
