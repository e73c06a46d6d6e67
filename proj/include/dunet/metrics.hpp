#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "dunet/tensor.hpp"

namespace dunet {

// Evaluation metrics on integer label masks (row-major, h*w).

inline double dice_metric(const std::vector<int32_t>& pred,
                          const std::vector<int32_t>& truth, int32_t cls) {
  require(pred.size() == truth.size(), "dice_metric mask size mismatch");
  int64_t a = 0, b = 0, inter = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    bool pa = pred[i] == cls, pb = truth[i] == cls;
    a += pa;
    b += pb;
    inter += pa && pb;
  }
  if (a + b == 0) return 1.0;  // both empty
  return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

namespace detail {

// Boundary of the class-c region under 8-connectivity; pixels touching the
// image edge count as boundary.
inline std::vector<std::pair<int, int>> boundary_pixels(
    const std::vector<int32_t>& mask, int h, int w, int32_t cls) {
  std::vector<std::pair<int, int>> out;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (mask[y * w + x] != cls) continue;
      bool edge = false;
      for (int dy = -1; dy <= 1 && !edge; ++dy)
        for (int dx = -1; dx <= 1 && !edge; ++dx) {
          if (!dy && !dx) continue;
          int ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= h || nx < 0 || nx >= w ||
              mask[ny * w + nx] != cls)
            edge = true;
        }
      if (edge) out.emplace_back(y, x);
    }
  return out;
}

// Exact 1-D squared Euclidean distance transform (lower envelope of
// parabolas), used separably for the 2-D transform.
inline void edt_1d(const std::vector<double>& f, std::vector<double>& d) {
  const int n = static_cast<int>(f.size());
  std::vector<int> v(n);
  std::vector<double> z(n + 1);
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s;
    while (true) {
      s = ((f[q] + q * static_cast<double>(q)) -
           (f[v[k]] + v[k] * static_cast<double>(v[k]))) /
          (2.0 * q - 2.0 * v[k]);
      if (s <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    double dq = q - static_cast<double>(v[k]);
    d[q] = dq * dq + f[v[k]];
  }
}

// Squared Euclidean distance to the nearest seed pixel, full grid.
inline std::vector<double> edt_2d(const std::vector<uint8_t>& seed, int h,
                                  int w) {
  const double inf = 1e18;
  std::vector<double> g(static_cast<size_t>(h) * w);
  std::vector<double> col(h), out(h);
  std::vector<double> row(w), rout(w);
  for (size_t i = 0; i < g.size(); ++i) g[i] = seed[i] ? 0.0 : inf;
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) col[y] = g[y * static_cast<size_t>(w) + x];
    edt_1d(col, out);
    for (int y = 0; y < h; ++y) g[y * static_cast<size_t>(w) + x] = out[y];
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) row[x] = g[y * static_cast<size_t>(w) + x];
    edt_1d(row, rout);
    for (int x = 0; x < w; ++x) g[y * static_cast<size_t>(w) + x] = rout[x];
  }
  return g;
}

// Linear-interpolation percentile over order statistics.
inline double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  if (v.size() == 1) return v[0];
  double rank = q * static_cast<double>(v.size() - 1);
  size_t lo = static_cast<size_t>(std::floor(rank));
  double frac = rank - static_cast<double>(lo);
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + frac * (v[lo + 1] - v[lo]);
}

}  // namespace detail

struct Hd95Result {
  double value = 0.0;
  bool sentinel = false;  // exactly one boundary set was empty
};

// HD95 = max of the two directed 95th-percentile boundary distances.
// Both boundaries empty -> 0; exactly one empty -> image-diagonal sentinel.
inline Hd95Result hd95(const std::vector<int32_t>& pred,
                       const std::vector<int32_t>& truth, int h, int w,
                       int32_t cls) {
  require(pred.size() == truth.size() &&
              pred.size() == static_cast<size_t>(h) * w,
          "hd95 mask size mismatch");
  auto pa = detail::boundary_pixels(pred, h, w, cls);
  auto pb = detail::boundary_pixels(truth, h, w, cls);
  if (pa.empty() && pb.empty()) return {0.0, false};
  if (pa.empty() || pb.empty())
    return {std::sqrt(static_cast<double>(h) * h +
                      static_cast<double>(w) * w),
            true};

  auto directed = [&](const std::vector<std::pair<int, int>>& from,
                      const std::vector<std::pair<int, int>>& to) {
    std::vector<uint8_t> seed(static_cast<size_t>(h) * w, 0);
    for (auto [y, x] : to) seed[y * static_cast<size_t>(w) + x] = 1;
    auto sq = detail::edt_2d(seed, h, w);
    std::vector<double> d;
    d.reserve(from.size());
    for (auto [y, x] : from)
      d.push_back(std::sqrt(sq[y * static_cast<size_t>(w) + x]));
    return detail::percentile(std::move(d), 0.95);
  };
  return {std::max(directed(pa, pb), directed(pb, pa)), false};
}

struct MetricRow {
  std::string sample_id;
  int32_t cls;
  double dice;
  double hd95;
  bool hd95_flag;
};

struct MetricReport {
  std::vector<MetricRow> rows;  // one per (sample, foreground class)
  std::vector<double> per_class_dice;
  std::vector<double> per_class_hd95;
  double mean_dice = 0.0;
  double mean_hd95 = 0.0;
};

// Aggregates over all (sample, class) rows; the background class is
// expected to be excluded by the caller when filling rows.
inline void finalize_report(MetricReport& r, int num_classes) {
  std::vector<double> dsum(num_classes, 0.0), hsum(num_classes, 0.0);
  std::vector<int64_t> cnt(num_classes, 0);
  for (const auto& row : r.rows) {
    dsum[row.cls] += row.dice;
    hsum[row.cls] += row.hd95;
    cnt[row.cls] += 1;
  }
  r.per_class_dice.assign(num_classes, 0.0);
  r.per_class_hd95.assign(num_classes, 0.0);
  double dm = 0.0, hm = 0.0;
  int used = 0;
  for (int c = 0; c < num_classes; ++c) {
    if (!cnt[c]) continue;
    r.per_class_dice[c] = dsum[c] / cnt[c];
    r.per_class_hd95[c] = hsum[c] / cnt[c];
    dm += r.per_class_dice[c];
    hm += r.per_class_hd95[c];
    ++used;
  }
  if (used) {
    r.mean_dice = dm / used;
    r.mean_hd95 = hm / used;
  }
}

// Tab-separated rows, then per-class and overall aggregates. Foreground
// classes only; background is excluded from reported means.
inline void write_report(const MetricReport& r, std::ostream& os,
                         int num_classes) {
  os << "sample_id\tclass\tdice\thd95\thd95_flag\n";
  for (const auto& row : r.rows)
    os << row.sample_id << '\t' << row.cls << '\t' << row.dice << '\t'
       << row.hd95 << '\t' << (row.hd95_flag ? 1 : 0) << '\n';
  for (int c = 1; c < num_classes; ++c)
    os << "aggregate\t" << c << '\t' << r.per_class_dice[c] << '\t'
       << r.per_class_hd95[c] << "\t-\n";
  os << "aggregate\tmean\t" << r.mean_dice << '\t' << r.mean_hd95 << "\t-\n";
}

}  // namespace dunet
