#include <gtest/gtest.h>

#include "dunet/audit.hpp"
#include "dunet/model.hpp"

using namespace dunet;

TEST(Audit, FapmFormulaMatchesRegistry) {
  for (int rank : {16, 24}) {  // 16 hits the identity-shortcut branch
    FapmConfig cfg;
    cfg.rank = rank;
    ParamStore<double> store;
    std::mt19937_64 rng(1);
    init_fapm(cfg, rng, store);
    int64_t enumerated = 0;
    for (const auto& [name, p] : store.entries()) enumerated += p.var.size();
    EXPECT_EQ(enumerated,
              fapm_param_formula(cfg.in_dim, cfg.rank, cfg.out_dims,
                                 cfg.dw_kernel, cfg.se_reduction))
        << "rank " << rank;
  }
}

TEST(Audit, BaselineFormulaMatchesRegistry) {
  FapmConfig cfg;
  ParamStore<double> store;
  std::mt19937_64 rng(1);
  init_fapm_baseline(cfg, rng, store);
  int64_t enumerated = 0;
  for (const auto& [name, p] : store.entries()) enumerated += p.var.size();
  EXPECT_EQ(enumerated, baseline_param_formula(cfg.in_dim, cfg.out_dims));
}

TEST(Audit, BreakdownPartitionsTheStore) {
  auto model = build_model<double>(ModelConfig::desk());
  auto b = count_params(model.store);
  EXPECT_EQ(b.backbone_frozen, backbone_param_count(model.cfg.backbone));
  EXPECT_EQ(b.total_frozen, b.backbone_frozen);
  EXPECT_EQ(b.total_trainable, b.adapter + b.fapm + b.decoder);
  EXPECT_EQ(b.adapter, adapter_param_count(model.cfg.adapter));
  EXPECT_EQ(b.decoder, decoder_param_count(model.cfg.decoder));
  EXPECT_EQ(b.fapm,
            fapm_param_formula(model.cfg.fapm.in_dim, model.cfg.fapm.rank,
                               model.cfg.fapm.out_dims,
                               model.cfg.fapm.dw_kernel,
                               model.cfg.fapm.se_reduction));
}

// The two projection designs are affine in the backbone width D; the delta
// between them changes sign exactly once when the slopes differ.
TEST(Audit, DeltaIsAffineInD) {
  const std::vector<int> out_dims{16, 32, 64, 128};
  const int64_t R = 16, k = 3, se_r = 4;
  auto delta = [&](int64_t d) {
    return fapm_param_formula(d, R, out_dims, k, se_r) -
           baseline_param_formula(d, out_dims);
  };
  const int64_t slope = delta(101) - delta(100);
  // fapm slope R(N+1), baseline slope sum(D'_i)
  EXPECT_EQ(slope, R * (int64_t(out_dims.size()) + 1) - (16 + 32 + 64 + 128));
  for (int64_t d : {50, 200, 1000})
    EXPECT_EQ(delta(d + 10) - delta(d), 10 * slope) << "d " << d;
}

TEST(Audit, CrossoverFoundWhenBaselineSlopeWins) {
  const std::vector<int> out_dims{16, 32, 64, 128};  // baseline slope 240
  const int64_t R = 16;                              // fapm slope 80
  std::vector<int64_t> grid{32, 64, 128, 256, 512, 1024, 2048, 4096};
  auto rep = crossover_report(R, out_dims, 3, 4, grid);
  ASSERT_EQ(rep.rows.size(), grid.size());
  ASSERT_TRUE(rep.crossover_d.has_value());
  // integer-exact: the reported point is the first grid D with delta < 0,
  // and the sign pattern is monotone across the grid
  bool crossed = false;
  for (const auto& row : rep.rows) {
    EXPECT_EQ(row.delta, row.fapm_count - row.baseline_count);
    if (row.d == *rep.crossover_d) {
      EXPECT_LT(row.delta, 0);
      crossed = true;
    } else if (!crossed) {
      EXPECT_GE(row.delta, 0) << "d " << row.d;
    } else {
      EXPECT_LT(row.delta, 0) << "d " << row.d;
    }
  }
  EXPECT_TRUE(crossed);
}

TEST(Audit, NoCrossoverWhenFapmSlopeWins) {
  const std::vector<int> out_dims{16, 32};  // baseline slope 48
  const int64_t R = 64;                     // fapm slope 64*3 = 192
  auto rep = crossover_report(R, out_dims, 3, 4, {64, 512, 4096, 32768});
  EXPECT_FALSE(rep.crossover_d.has_value());
}

TEST(Audit, ReportTextsWellFormed) {
  auto rep = crossover_report(16, {16, 32, 64, 128}, 3, 4, {32, 4096});
  auto table = crossover_table_text(rep);
  EXPECT_NE(table.find("D\tfapm_count\tbaseline_count\tdelta"),
            std::string::npos);
  auto plot = crossover_plot_text(rep);
  EXPECT_EQ(plot.find("x\t32\t4096"), 0u);
  EXPECT_NE(plot.find("\nfapm\t"), std::string::npos);
  EXPECT_NE(plot.find("\nbaseline\t"), std::string::npos);

  auto model = build_model<double>(ModelConfig::desk());
  auto text = breakdown_text(count_params(model.store));
  EXPECT_NE(text.find("module\tparams\ttrainable"), std::string::npos);
  EXPECT_NE(text.find("backbone\t"), std::string::npos);
}
