#pragma once

// Forgetting metrics over per-round, per-label accuracy matrices.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "sflsim/record.hpp"

namespace sflsim {

inline double median(std::vector<double> v) {
  if (v.empty()) throw ConfigError("median of empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Sample standard deviation; 0 for fewer than two values.
inline double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

inline void require_rectangular(const Matrix& a) {
  for (const auto& row : a) {
    if (row.size() != a.front().size()) throw ShapeError("accuracy matrix rows differ in length");
  }
}

/// BW = (1/L) sum_l max_{r < R} (A[r][l] - A[R][l]), R the last round.
/// Negative per-label terms are kept unless `clamp` is set.
inline double backward_transfer(const Matrix& a, bool clamp = false) {
  if (a.size() < 2) throw ConfigError("backward transfer needs at least 2 rounds");
  require_rectangular(a);
  const std::size_t last = a.size() - 1;
  const std::size_t L = a.front().size();
  if (L == 0) throw ShapeError("backward transfer: no labels");
  double total = 0.0;
  for (std::size_t l = 0; l < L; ++l) {
    double peak = a[0][l];
    for (std::size_t r = 1; r < last; ++r) peak = std::max(peak, a[r][l]);
    double term = peak - a[last][l];
    if (clamp) term = std::max(term, 0.0);
    total += term;
  }
  return total / static_cast<double>(L);
}

/// PG = (1/L) sum_l (max_k A_k - A_l): mean distance to the best label.
inline double performance_gap(const std::vector<double>& row) {
  if (row.empty()) return 0.0;
  const double best = *std::max_element(row.begin(), row.end());
  double total = 0.0;
  for (double v : row) total += best - v;
  return total / static_cast<double>(row.size());
}

inline std::vector<double> performance_gap_series(const Matrix& a) {
  std::vector<double> out;
  out.reserve(a.size());
  for (const auto& row : a) out.push_back(performance_gap(row));
  return out;
}

/// [position][round]: median across records of the accuracy of the label
/// processed at cycle position k.
inline Matrix per_position_accuracy(const std::vector<RunRecord>& records) {
  if (records.empty()) throw ConfigError("per-position accuracy needs at least one record");
  const std::size_t R = records.front().rounds();
  const std::size_t L = records.front().label_count();
  std::vector<std::vector<Label>> label_at(records.size(), std::vector<Label>(L));
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    if (rec.order_kind != OrderKind::kCyclic) {
      throw ConfigError("per-position accuracy requires cyclic-order records");
    }
    if (rec.rounds() != R || rec.label_count() != L) throw ConfigError("records disagree on R or L");
    if (rec.position_of_label.size() != L) throw ConfigError("record lacks a full position map");
    for (const auto& [label, pos] : rec.position_of_label) label_at[i].at(pos) = label;
  }
  Matrix out(L, std::vector<double>(R, 0.0));
  std::vector<double> sample(records.size());
  for (std::size_t k = 0; k < L; ++k) {
    for (std::size_t r = 0; r < R; ++r) {
      for (std::size_t i = 0; i < records.size(); ++i) sample[i] = records[i].accuracy[r][label_at[i][k]];
      out[k][r] = median(sample);
    }
  }
  return out;
}

inline constexpr std::size_t kReportWindow = 5;

struct MetricReport {
  std::size_t runs = 0;
  double backward_transfer = 0.0;  // median across runs
  double backward_transfer_std = 0.0;
  std::vector<double> pg_series;   // elementwise median across runs
  std::optional<Matrix> per_position;
  double reported_acc = 0.0;  // median over the last 5 rounds, pooled across runs
  double reported_pg = 0.0;
  double acc_std = 0.0;
  double pg_std = 0.0;
};

/// Values of the last `window` rounds (all rounds if fewer), pooled.
inline std::vector<double> last_rounds(const std::vector<double>& series, std::size_t window = kReportWindow) {
  const std::size_t start = series.size() > window ? series.size() - window : 0;
  return {series.begin() + static_cast<std::ptrdiff_t>(start), series.end()};
}

inline MetricReport report(const std::vector<RunRecord>& records) {
  if (records.empty()) throw ConfigError("report needs at least one record");
  const std::size_t R = records.front().rounds();
  const std::size_t L = records.front().label_count();
  MetricReport rep;
  rep.runs = records.size();
  std::vector<double> pooled_acc;
  std::vector<double> pooled_pg;
  std::vector<double> bws;
  std::vector<std::vector<double>> pg_by_round(R);
  bool all_cyclic = true;
  for (const auto& rec : records) {
    if (rec.rounds() != R || rec.label_count() != L || rec.global_accuracy.size() != R) {
      throw ConfigError("report: records disagree on R or L");
    }
    const auto pg = performance_gap_series(rec.accuracy);
    for (std::size_t r = 0; r < R; ++r) pg_by_round[r].push_back(pg[r]);
    for (double v : last_rounds(rec.global_accuracy)) pooled_acc.push_back(v);
    for (double v : last_rounds(pg)) pooled_pg.push_back(v);
    if (R >= 2) bws.push_back(backward_transfer(rec.accuracy));
    all_cyclic &= rec.order_kind == OrderKind::kCyclic;
  }
  for (auto& v : pg_by_round) rep.pg_series.push_back(median(v));
  rep.reported_acc = median(pooled_acc);
  rep.reported_pg = median(pooled_pg);
  rep.acc_std = stddev(pooled_acc);
  rep.pg_std = stddev(pooled_pg);
  if (!bws.empty()) {
    rep.backward_transfer = median(bws);
    rep.backward_transfer_std = stddev(bws);
  }
  if (all_cyclic) rep.per_position = per_position_accuracy(records);
  return rep;
}

}  // namespace sflsim
