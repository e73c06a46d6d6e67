// Batch front-end: data synthesis, training, evaluation, gradient checking
// and parameter audits. Exit codes: 0 ok, 2 usage, 3 numeric failure,
// 4 gradcheck failure.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dunet/dunet.hpp"

namespace fs = std::filesystem;
using namespace dunet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitGradcheck = 4;

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  return parse_run_config(f);
}

std::vector<std::string> list_samples(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string name = e.path().filename().string();
    if (name.size() > 5 && name.substr(name.size() - 5) == ".dunt" &&
        name.rfind("sample_", 0) == 0)
      files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  require(!files.empty(), "no sample_*.dunt files in " + dir);
  return files;
}

template <typename T>
std::vector<SegSample<T>> load_samples(const std::string& dir) {
  std::vector<SegSample<T>> out;
  for (const auto& path : list_samples(dir))
    out.push_back(sample_from_container<T>(load_container(path)));
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << text;
}

int cmd_synth(const std::string& out_dir, int n, int size, int classes,
              uint64_t seed) {
  fs::create_directories(out_dir);
  auto data = make_synth_dataset<double>(n, size, classes, seed);
  std::ostringstream manifest;
  manifest << "key\tvalue\n"
           << "n\t" << n << "\nsize\t" << size << "\nclasses\t" << classes
           << "\nseed\t" << seed << "\n";
  for (int i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%05d.dunt", i);
    save_container(sample_to_container(data[i]),
                   (fs::path(out_dir) / name).string());
    manifest << "file\t" << name << "\n";
  }
  write_text((fs::path(out_dir) / "manifest.tsv").string(), manifest.str());
  return kExitOk;
}

template <typename T>
int run_train(const RunConfig& rc, const std::string& data_dir,
              const std::string& out_dir) {
  auto data = load_samples<T>(data_dir);
  auto model = build_model<T>(rc.model);
  std::vector<LossRow> log;
  try {
    log = train(model, data, rc.train);
  } catch (const TrainDivergence& e) {
    std::cerr << "numeric failure: " << e.what() << " (step " << e.step
              << ")\n";
    return kExitNumeric;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  }
  fs::create_directories(out_dir);
  save_checkpoint(model.store, rc,
                  (fs::path(out_dir) / "checkpoint.dunt").string());
  write_text((fs::path(out_dir) / "loss_log.tsv").string(),
             loss_log_text(log));
  write_text((fs::path(out_dir) / "config.resolved.ini").string(),
             run_config_text(rc));
  return kExitOk;
}

template <typename T>
int run_eval(const Container& ckpt, const RunConfig& rc,
             const std::string& data_dir, const std::string& out_path,
             int window, double overlap) {
  auto data = load_samples<T>(data_dir);
  auto model = build_model<T>(rc.model);
  model.store.load_values(ckpt);
  const int C = rc.model.decoder.num_classes;
  MetricReport rep;
  int idx = 0;
  for (const auto& s : data) {
    Var<T> img = Var<T>::leaf({1, 3, s.h, s.w},
                              std::vector<T>(s.image), false);
    Var<T> logits = window > 0 ? sliding_window_infer(model, img, window,
                                                      overlap)
                               : model.forward(img);
    auto mask = predict_mask(logits);
    char sid[16];
    std::snprintf(sid, sizeof(sid), "s%05d", idx++);
    for (int32_t c = 1; c < C; ++c) {
      auto h = hd95(mask, s.mask, static_cast<int>(s.h),
                    static_cast<int>(s.w), c);
      rep.rows.push_back({sid, c, dice_metric(mask, s.mask, c), h.value,
                          h.sentinel});
    }
  }
  finalize_report(rep, C);
  std::ostringstream os;
  os.precision(17);
  write_report(rep, os, C);
  write_text(out_path, os.str());
  std::cout << "mean_dice\t" << rep.mean_dice << "\nmean_hd95\t"
            << rep.mean_hd95 << "\n";
  return kExitOk;
}

// ---- gradcheck tables ----------------------------------------------------

struct CheckRow {
  std::string module, op;
  double err;
  bool pass;
};

using F = std::function<Var<double>(const std::vector<Var<double>>&)>;

Var<double> grad_leaf(const Shape& s, uint64_t seed) {
  return Var<double>::leaf(s, randn_vec<double>(numel(s), seed), true);
}

void run_check(std::vector<CheckRow>& rows, const std::string& module,
               const std::string& op, const F& f,
               const std::vector<Var<double>>& inputs, uint64_t seed) {
  auto rep = gradcheck<double>(f, inputs, 1e-4, 1e-4, 64, seed);
  rows.push_back({module, op, static_cast<double>(rep.worst), rep.pass});
}

void check_ops(std::vector<CheckRow>& rows, uint64_t seed) {
  for (uint64_t s = seed; s < seed + 3; ++s) {
    run_check(rows, "ops", "conv2d",
              [](const std::vector<Var<double>>& in) {
                return sum_all(mul(conv2d(in[0], in[1], in[2], 1, 1), in[3]));
              },
              {grad_leaf({1, 2, 4, 4}, s), grad_leaf({3, 2, 3, 3}, s + 50),
               grad_leaf({3}, s + 100), grad_leaf({1, 3, 4, 4}, s + 150)},
              s);
    run_check(rows, "ops", "bilinear_resize",
              [](const std::vector<Var<double>>& in) {
                return sum_all(mul(bilinear_resize(in[0], 5, 7), in[1]));
              },
              {grad_leaf({1, 2, 3, 4}, s + 1), grad_leaf({1, 2, 5, 7}, s + 2)},
              s);
    {
      std::mt19937_64 rng(s + 3);
      std::uniform_real_distribution<double> u(0.2, 0.8);
      std::vector<double> pv(12);
      for (auto& p : pv) p = u(rng);
      run_check(rows, "ops", "bilinear_sample",
                [](const std::vector<Var<double>>& in) {
                  return sum_all(mul(bilinear_sample(in[0], in[1]), in[2]));
                },
                {grad_leaf({1, 2, 5, 5}, s + 4),
                 Var<double>::leaf({1, 6, 2}, pv, true),
                 grad_leaf({1, 2, 6}, s + 5)},
                s);
    }
    run_check(rows, "ops", "linear_softmax",
              [](const std::vector<Var<double>>& in) {
                return sum_all(
                    mul(softmax(linear(in[0], in[1], in[2]), 1), in[3]));
              },
              {grad_leaf({3, 4}, s + 6), grad_leaf({5, 4}, s + 7),
               grad_leaf({5}, s + 8), grad_leaf({3, 5}, s + 9)},
              s);
    run_check(rows, "ops", "layer_norm",
              [](const std::vector<Var<double>>& in) {
                return sum_all(mul(layer_norm(in[0], in[1], in[2], 2), in[3]));
              },
              {grad_leaf({2, 3, 6}, s + 10), grad_leaf({6}, s + 11),
               grad_leaf({6}, s + 12), grad_leaf({2, 3, 6}, s + 13)},
              s);
    run_check(rows, "ops", "matmul_gelu",
              [](const std::vector<Var<double>>& in) {
                auto m = matmul(in[0], transpose(in[1], {0, 2, 1}));
                return sum_all(mul(gelu(m), sigmoid(m)));
              },
              {grad_leaf({2, 3, 4}, s + 14), grad_leaf({2, 3, 4}, s + 15)}, s);
  }
}

void check_adapter(std::vector<CheckRow>& rows, uint64_t seed) {
  AdapterConfig cfg;
  cfg.channels = 6;
  cfg.num_points = 2;
  for (uint64_t s = seed; s < seed + 3; ++s) {
    ParamStore<double> store;
    std::mt19937_64 rng(s);
    init_adapter(cfg, rng, store);
    for (const char* h : {"offset.w", "offset.b", "weight.w", "weight.b",
                          "out.w", "out.b"}) {
      auto v = store.get(std::string("adapter.ib0.") + h);
      v.data() = randn_vec<double>(v.size(), s + std::strlen(h), 0.5);
    }
    run_check(rows, "adapter", "interaction_stage",
              [&store, &cfg](const std::vector<Var<double>>& in) {
                Pyramid<double> st{in[0]};
                auto out = interaction_block(st, in[1], store, "adapter.ib0.",
                                             cfg, true);
                return sum_all(mul(out[0], in[2]));
              },
              {grad_leaf({1, 6, 3, 3}, s + 20), grad_leaf({1, 6, 4, 4}, s + 21),
               grad_leaf({1, 6, 3, 3}, s + 22)},
              s);
  }
}

void check_fapm(std::vector<CheckRow>& rows, uint64_t seed) {
  FapmConfig cfg;
  cfg.in_dim = 5;
  cfg.rank = 4;
  cfg.out_dims = {6};
  for (uint64_t s = seed; s < seed + 3; ++s) {
    ParamStore<double> store;
    std::mt19937_64 rng(s);
    init_fapm(cfg, rng, store);
    auto gw = store.get("fapm.s0.gen.w");
    gw.data() = randn_vec<double>(gw.size(), s + 31, 0.3);
    run_check(rows, "fapm", "fapm_forward",
              [&store, &cfg](const std::vector<Var<double>>& in) {
                auto out = fapm_forward(Pyramid<double>{in[0]}, store, cfg);
                return sum_all(mul(out[0], in[1]));
              },
              {grad_leaf({1, 5, 4, 4}, s + 32), grad_leaf({1, 6, 4, 4}, s + 33)},
              s);
  }
}

void check_decoder(std::vector<CheckRow>& rows, uint64_t seed) {
  DecoderConfig cfg;
  cfg.skip_dims = {4, 6};
  for (uint64_t s = seed; s < seed + 3; ++s) {
    ParamStore<double> store;
    std::mt19937_64 rng(s);
    init_decoder(cfg, rng, store);
    run_check(rows, "decoder", "decoder_forward",
              [&store, &cfg](const std::vector<Var<double>>& in) {
                Pyramid<double> skips{in[0], in[1]};
                return sum_all(mul(decoder_forward(skips, store, cfg), in[2]));
              },
              {grad_leaf({1, 4, 4, 4}, s + 41), grad_leaf({1, 6, 2, 2}, s + 42),
               grad_leaf({1, 2, 16, 16}, s + 43)},
              s);
  }
}

void check_losses(std::vector<CheckRow>& rows, uint64_t seed) {
  for (uint64_t s = seed; s < seed + 3; ++s) {
    std::mt19937_64 rng(s);
    std::uniform_int_distribution<int32_t> d(0, 2);
    std::vector<int32_t> t(2 * 9);
    for (auto& v : t) v = d(rng);
    run_check(rows, "losses", "total_loss",
              [&t](const std::vector<Var<double>>& in) {
                return total_loss(in[0], t);
              },
              {grad_leaf({2, 3, 3, 3}, s + 51)}, s);
  }
}

int cmd_gradcheck(const std::string& module, uint64_t seed) {
  std::vector<CheckRow> rows;
  bool known = false;
  if (module == "all" || module == "ops") check_ops(rows, seed), known = true;
  if (module == "all" || module == "adapter")
    check_adapter(rows, seed), known = true;
  if (module == "all" || module == "fapm") check_fapm(rows, seed), known = true;
  if (module == "all" || module == "decoder")
    check_decoder(rows, seed), known = true;
  if (module == "all" || module == "losses")
    check_losses(rows, seed), known = true;
  if (!known) {
    std::cerr << "usage error: unknown module: " << module << "\n";
    return kExitUsage;
  }
  std::cout << "module\top\tmax_rel_err\tstatus\n";
  bool all_pass = true;
  std::cout.precision(3);
  for (const auto& r : rows) {
    std::cout << r.module << '\t' << r.op << '\t' << std::scientific << r.err
              << '\t' << (r.pass ? "pass" : "FAIL") << "\n";
    all_pass &= r.pass;
  }
  return all_pass ? kExitOk : kExitGradcheck;
}

int cmd_params(const RunConfig& rc, bool compare_baseline,
               const std::vector<int64_t>& dgrid) {
  auto model = build_model<double>(rc.model);
  std::cout << breakdown_text(count_params(model.store));
  const auto& f = rc.model.fapm;
  if (compare_baseline) {
    std::cout << "fapm_formula\t"
              << fapm_param_formula(f.in_dim, f.rank, f.out_dims, f.dw_kernel,
                                    f.se_reduction)
              << "\nbaseline_formula\t"
              << baseline_param_formula(f.in_dim, f.out_dims) << "\n";
  }
  if (!dgrid.empty()) {
    auto rep = crossover_report(f.rank, f.out_dims, f.dw_kernel,
                                f.se_reduction, dgrid);
    std::cout << crossover_table_text(rep);
    std::cout << crossover_plot_text(rep);
    if (rep.crossover_d)
      std::cout << "crossover_d\t" << *rep.crossover_d << "\n";
    else
      std::cout << "crossover_d\tnone\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dino U-Net style segmentation toolkit"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string s_out;
  int s_n = 8, s_size = 64, s_classes = 2;
  uint64_t s_seed = 7;
  synth->add_option("--out", s_out, "output directory")->required();
  synth->add_option("--n", s_n, "number of samples");
  synth->add_option("--size", s_size, "square image size");
  synth->add_option("--classes", s_classes, "number of classes incl. bg");
  synth->add_option("--seed", s_seed, "generator seed");

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  std::string t_config, t_data, t_out;
  uint64_t t_seed = 0;
  int t_epochs = -1, t_spe = -1, t_batch = -1;
  double t_lr0 = -1.0;
  tr->add_option("--config", t_config, "run config file")->required();
  tr->add_option("--data", t_data, "sample directory")->required();
  tr->add_option("--out", t_out, "output directory")->required();
  tr->add_option("--seed", t_seed, "override model seed");
  tr->add_option("--epochs", t_epochs, "override epochs");
  tr->add_option("--steps-per-epoch", t_spe, "override steps per epoch");
  tr->add_option("--batch-size", t_batch, "override batch size");
  tr->add_option("--lr0", t_lr0, "override initial learning rate");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string e_ckpt, e_data, e_out = "metrics.tsv";
  int e_window = 0;
  double e_overlap = 0.5;
  ev->add_option("--checkpoint", e_ckpt, "checkpoint file")->required();
  ev->add_option("--data", e_data, "sample directory")->required();
  ev->add_option("--out", e_out, "metric report path");
  ev->add_option("--window", e_window, "sliding window size (0 = full image)");
  ev->add_option("--overlap", e_overlap, "sliding window overlap fraction");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference checks");
  std::string g_module = "all";
  uint64_t g_seed = 0;
  gc->add_option("--module", g_module,
                 "ops|adapter|fapm|decoder|losses|all");
  gc->add_option("--seed", g_seed, "instance seed");

  // params
  auto* pa = app.add_subcommand("params", "parameter audit");
  std::string p_config;
  bool p_compare = false;
  std::vector<int64_t> p_dgrid;
  pa->add_option("--config", p_config, "run config file")->required();
  pa->add_flag("--compare-baseline", p_compare,
               "also print closed-form counts for both projection designs");
  pa->add_option("--dgrid", p_dgrid, "backbone widths for the crossover table")
      ->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(s_out, s_n, s_size, s_classes, s_seed);
    if (*tr) {
      RunConfig rc = load_run_config(t_config);
      if (t_seed) rc.model.seed = t_seed;
      if (t_epochs > 0) rc.train.epochs = t_epochs;
      if (t_spe > 0) rc.train.steps_per_epoch = t_spe;
      if (t_batch > 0) rc.train.batch_size = t_batch;
      if (t_lr0 > 0) rc.train.lr0 = t_lr0;
      rc.model.validate();
      rc.train.validate();
      return rc.train.dtype == "f32" ? run_train<float>(rc, t_data, t_out)
                                     : run_train<double>(rc, t_data, t_out);
    }
    if (*ev) {
      Container ckpt = load_container(e_ckpt);
      RunConfig rc = checkpoint_config(ckpt);
      return rc.train.dtype == "f32"
                 ? run_eval<float>(ckpt, rc, e_data, e_out, e_window,
                                   e_overlap)
                 : run_eval<double>(ckpt, rc, e_data, e_out, e_window,
                                    e_overlap);
    }
    if (*gc) return cmd_gradcheck(g_module, g_seed);
    if (*pa) {
      RunConfig rc = load_run_config(p_config);
      rc.model.validate();
      return cmd_params(rc, p_compare, p_dgrid);
    }
  } catch (const TrainDivergence& e) {
    std::cerr << "numeric failure: " << e.what() << " (step " << e.step
              << ")\n";
    return kExitNumeric;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ShapeError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitOk;
}
