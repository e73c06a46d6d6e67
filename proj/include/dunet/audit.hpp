#pragma once

#include <optional>
#include <sstream>
#include <vector>

#include "dunet/config.hpp"
#include "dunet/param_store.hpp"

namespace dunet {

struct ParamBreakdown {
  int64_t backbone_frozen = 0;
  int64_t adapter = 0;
  int64_t fapm = 0;           // whichever projection module is present
  int64_t decoder = 0;
  int64_t total_trainable = 0;
  int64_t total_frozen = 0;
};

template <typename T>
ParamBreakdown count_params(const ParamStore<T>& store) {
  ParamBreakdown b;
  b.backbone_frozen = store.count("backbone.", false);
  b.adapter = store.count("adapter.", true);
  b.fapm = store.count("fapm.", true) + store.count("fapm_baseline.", true);
  b.decoder = store.count("decoder.", true);
  for (const auto& [name, p] : store.entries()) {
    if (p.trainable)
      b.total_trainable += p.var.size();
    else
      b.total_frozen += p.var.size();
  }
  return b;
}

// Closed-form FAPM parameter count. The projection shortcut is a 1x1 conv
// only where R != D'_i (identity otherwise), matching the registry.
inline int64_t fapm_param_formula(int64_t D, int64_t R,
                                  const std::vector<int>& out_dims, int64_t k,
                                  int64_t se_r) {
  int64_t total = D * R + R;  // shared context + bias
  for (int dp_i : out_dims) {
    const int64_t Dp = dp_i;
    const int64_t hid = std::max<int64_t>(1, (Dp + se_r - 1) / se_r);
    total += D * R + R;            // scale-specific branch
    total += R * 2 * R + 2 * R;    // FiLM generator
    total += R * Dp + Dp;          // W_r
    total += Dp * k * k + Dp;      // depthwise
    total += Dp * Dp + Dp;         // pointwise
    total += 2 * Dp * hid + hid + Dp;  // SE MLP
    if (R != Dp) total += R * Dp + Dp;  // projection shortcut
  }
  return total;
}

inline int64_t baseline_param_formula(int64_t D,
                                      const std::vector<int>& out_dims) {
  int64_t total = 0;
  for (int dp : out_dims) total += D * int64_t(dp) + dp;
  return total;
}

struct CrossoverRow {
  int64_t d;
  int64_t fapm_count;
  int64_t baseline_count;
  int64_t delta;  // fapm_count - baseline_count
};

struct CrossoverReport {
  std::vector<CrossoverRow> rows;
  // smallest grid D where the baseline exceeds FAPM, if any
  std::optional<int64_t> crossover_d;
};

// FAPM grows in D with slope R(N+1); the baseline with slope sum(D'_i).
// Whichever slope is larger wins as the backbone dimension grows.
inline CrossoverReport crossover_report(int64_t R,
                                        const std::vector<int>& out_dims,
                                        int64_t k, int64_t se_r,
                                        const std::vector<int64_t>& d_grid) {
  require(!d_grid.empty(), "crossover d_grid is empty");
  CrossoverReport rep;
  for (int64_t d : d_grid) {
    CrossoverRow row;
    row.d = d;
    row.fapm_count = fapm_param_formula(d, R, out_dims, k, se_r);
    row.baseline_count = baseline_param_formula(d, out_dims);
    row.delta = row.fapm_count - row.baseline_count;
    if (!rep.crossover_d && row.baseline_count > row.fapm_count)
      rep.crossover_d = d;
    rep.rows.push_back(row);
  }
  return rep;
}

inline std::string crossover_table_text(const CrossoverReport& rep) {
  std::ostringstream os;
  os << "D\tfapm_count\tbaseline_count\tdelta\n";
  for (const auto& r : rep.rows)
    os << r.d << '\t' << r.fapm_count << '\t' << r.baseline_count << '\t'
       << r.delta << '\n';
  return os.str();
}

// Plain x/series description consumable by any plotting tool.
inline std::string crossover_plot_text(const CrossoverReport& rep) {
  std::ostringstream os;
  os << "x";
  for (const auto& r : rep.rows) os << '\t' << r.d;
  os << "\nfapm";
  for (const auto& r : rep.rows) os << '\t' << r.fapm_count;
  os << "\nbaseline";
  for (const auto& r : rep.rows) os << '\t' << r.baseline_count;
  os << '\n';
  return os.str();
}

inline std::string breakdown_text(const ParamBreakdown& b) {
  std::ostringstream os;
  os << "module\tparams\ttrainable\n"
     << "backbone\t" << b.backbone_frozen << "\tno\n"
     << "adapter\t" << b.adapter << "\tyes\n"
     << "projection\t" << b.fapm << "\tyes\n"
     << "decoder\t" << b.decoder << "\tyes\n"
     << "total_trainable\t" << b.total_trainable << "\t-\n"
     << "total_frozen\t" << b.total_frozen << "\t-\n";
  return os.str();
}

}  // namespace dunet
