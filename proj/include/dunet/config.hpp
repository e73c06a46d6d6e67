#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dunet/tensor.hpp"

namespace dunet {

struct BackboneConfig {
  int patch_size = 16;
  int embed_dim = 32;   // D; full-scale variants use 384/768/1024/4096
  int depth = 4;        // L
  int num_heads = 2;
  int mlp_ratio = 4;
  int pos_grid = 4;     // side of the learned positional grid
  std::vector<int> tap_layers = {1, 2, 3, 4};  // 1-based, strictly increasing

  void validate() const {
    require(embed_dim % num_heads == 0, "embed_dim not divisible by heads");
    require(!tap_layers.empty(), "tap_layers empty");
    for (size_t i = 0; i < tap_layers.size(); ++i) {
      require(tap_layers[i] >= 1 && tap_layers[i] <= depth,
              "tap layer out of range");
      if (i) require(tap_layers[i] > tap_layers[i - 1],
                     "tap_layers must be strictly increasing");
    }
  }
  int num_taps() const { return static_cast<int>(tap_layers.size()); }
};

struct AdapterConfig {
  int num_scales = 4;  // N
  std::vector<int> pyramid_strides = {4, 8, 16, 32};
  int channels = 32;   // shared with backbone embed_dim
  int num_points = 4;  // K sampling points per query
  int num_heads = 1;
  bool interaction_residual = true;

  void validate() const {
    require(static_cast<int>(pyramid_strides.size()) == num_scales,
            "pyramid_strides length != num_scales");
    for (size_t i = 0; i < pyramid_strides.size(); ++i) {
      int s = pyramid_strides[i];
      require(s > 0 && (s & (s - 1)) == 0, "strides must be powers of two");
      if (i) require(s > pyramid_strides[i - 1],
                     "strides must be strictly increasing");
    }
    require(num_points >= 1, "num_points must be >= 1");
  }
};

struct FapmConfig {
  int rank = 16;  // R; full-scale default 256
  int in_dim = 32;
  std::vector<int> out_dims = {16, 32, 64, 128};  // D'_i
  int se_reduction = 4;
  int dw_kernel = 3;

  void validate() const {
    require(rank >= 1, "rank must be >= 1");
    require(!out_dims.empty(), "out_dims empty");
  }
  int se_hidden(int i) const {
    return std::max(1, (out_dims[i] + se_reduction - 1) / se_reduction);
  }
};

struct DecoderConfig {
  std::vector<int> skip_dims = {16, 32, 64, 128};  // = FapmConfig.out_dims
  int num_classes = 2;
  int final_upsample_factor = 4;

  void validate() const {
    require(num_classes >= 2, "num_classes must be >= 2");
    require(!skip_dims.empty(), "skip_dims empty");
  }
};

struct ModelConfig {
  BackboneConfig backbone;
  AdapterConfig adapter;
  FapmConfig fapm;
  DecoderConfig decoder;
  uint64_t seed = 1;
  std::string variant = "desk";     // one of desk/S/B/L/7B
  bool use_fapm_baseline = false;   // ablation: per-scale 1x1 projections

  void validate() const {
    backbone.validate();
    adapter.validate();
    fapm.validate();
    decoder.validate();
    require(adapter.channels == backbone.embed_dim,
            "adapter.channels != backbone.embed_dim");
    require(fapm.in_dim == backbone.embed_dim,
            "fapm.in_dim != backbone.embed_dim");
    require(static_cast<int>(fapm.out_dims.size()) == adapter.num_scales,
            "fapm.out_dims length != adapter.num_scales");
    require(fapm.out_dims == decoder.skip_dims,
            "fapm.out_dims != decoder.skip_dims");
    require(backbone.num_taps() == adapter.num_scales,
            "backbone tap count != adapter.num_scales");
  }

  static ModelConfig desk(int num_classes = 2, uint64_t seed = 1) {
    ModelConfig m;
    m.decoder.num_classes = num_classes;
    m.seed = seed;
    return m;
  }
};

struct TrainConfig {
  double lr0 = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs = 50;           // full-scale regimen: 200
  int steps_per_epoch = 10;  // full-scale regimen: 250
  double poly_power = 0.9;
  int batch_size = 2;
  std::string dtype = "f64";

  void validate() const {
    require(lr0 > 0, "lr0 must be positive");
    require(epochs * steps_per_epoch >= 1, "no training steps configured");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(dtype == "f64" || dtype == "f32", "dtype must be f64 or f32");
  }
  int total_steps() const { return epochs * steps_per_epoch; }
};

// He (fan-in, normal, rectifier gain) initializer drawing from a shared
// stream so parameter creation order pins the bytes.
template <typename T>
std::vector<T> he_normal(int64_t n, int64_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, std::sqrt(2.0 / fan_in));
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(d(rng));
  return v;
}

template <typename T>
std::vector<T> normal_init(int64_t n, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, stddev);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(d(rng));
  return v;
}

}  // namespace dunet
