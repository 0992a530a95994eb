#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "volret/error.hpp"
#include "volret/retrieval.hpp"

namespace volret {

/// Ranks considered by average precision.
inline constexpr std::size_t kApDepth = 10;

enum class RelevanceTask : std::uint8_t { flagging, staging };

inline constexpr std::array<RelevanceTask, 2> kAllRelevanceTasks = {RelevanceTask::flagging,
                                                                    RelevanceTask::staging};

constexpr std::string_view to_string(RelevanceTask t) {
  return t == RelevanceTask::flagging ? "flagging" : "staging";
}

/// Flagging: tumor status matches (negatives match negatives).
/// Staging: stage matches exactly.
constexpr bool is_relevant(RelevanceTask task, int query_stage, int retrieved_stage) {
  if (task == RelevanceTask::flagging) return (query_stage > 0) == (retrieved_stage > 0);
  return query_stage == retrieved_stage;
}

struct RelevanceJudgment {
  RelevanceTask task = RelevanceTask::flagging;
  int query_stage = 0;
  int retrieved_stage = 0;
  bool relevant = false;
};

constexpr RelevanceJudgment judge(RelevanceTask task, int query_stage, int retrieved_stage) {
  return {task, query_stage, retrieved_stage, is_relevant(task, query_stage, retrieved_stage)};
}

/// Fraction of relevant items among the first k; missing ranks count as irrelevant.
inline double precision_at_k(std::span<const std::uint8_t> relevance, std::size_t k) {
  if (k == 0) fail(ErrorKind::input, "precision@k needs k >= 1");
  const std::size_t n = std::min(k, relevance.size());
  const auto hits = std::count_if(relevance.begin(), relevance.begin() + static_cast<std::ptrdiff_t>(n), [](auto f) { return f != 0; });
  return static_cast<double>(hits) / static_cast<double>(k);
}

/// AP over the first 10 ranks: sum_n (R_n - R_{n-1}) * P_n, where recall is
/// relative to the relevant items inside that window. Zero if none.
inline double average_precision(std::span<const std::uint8_t> relevance) {
  const std::size_t depth = std::min(kApDepth, relevance.size());
  const auto total = std::count_if(relevance.begin(), relevance.begin() + static_cast<std::ptrdiff_t>(depth), [](auto f) { return f != 0; });
  if (total == 0) return 0.0;
  // Recall rises by 1/total at each relevant rank and is flat elsewhere.
  double precision_sum = 0.0;
  std::size_t seen = 0;
  for (std::size_t n = 1; n <= depth; ++n) {
    if (relevance[n - 1] == 0) continue;
    ++seen;
    precision_sum += static_cast<double>(seen) / static_cast<double>(n);
  }
  return precision_sum / static_cast<double>(total);
}

/// Relevance of ranked items, one 0/1 flag per rank.
using RelevanceFlags = std::vector<std::uint8_t>;

template <class Judge>
RelevanceFlags relevance_flags(const RankedList& list, Judge&& is_rel) {
  RelevanceFlags out;
  out.reserve(list.entries.size());
  for (const auto& e : list.entries) out.push_back(is_rel(e.volume_id) ? 1 : 0);
  return out;
}

template <class Judge>
double precision_at_k(const RankedList& list, Judge&& is_rel, std::size_t k) {
  return precision_at_k(relevance_flags(list, is_rel), k);
}

template <class Judge>
double average_precision(const RankedList& list, Judge&& is_rel) {
  return average_precision(relevance_flags(list, is_rel));
}

struct MetricReport {
  double p_at_3 = 0.0;
  double p_at_5 = 0.0;
  double p_at_10 = 0.0;
  double ap = 0.0;

  MetricReport& operator+=(const MetricReport& o) {
    p_at_3 += o.p_at_3;
    p_at_5 += o.p_at_5;
    p_at_10 += o.p_at_10;
    ap += o.ap;
    return *this;
  }
  MetricReport& operator/=(double d) {
    p_at_3 /= d;
    p_at_5 /= d;
    p_at_10 /= d;
    ap /= d;
    return *this;
  }
};

inline MetricReport evaluate_relevance(std::span<const std::uint8_t> relevance) {
  return {precision_at_k(relevance, 3), precision_at_k(relevance, 5), precision_at_k(relevance, 10),
          average_precision(relevance)};
}

inline MetricReport mean(std::span<const MetricReport> reports) {
  MetricReport m;
  if (reports.empty()) return m;
  for (const auto& r : reports) m += r;
  m /= static_cast<double>(reports.size());
  return m;
}

// ---------------------------------------------------------------------------
// Exact two-sided Wilcoxon signed-rank test

struct WilcoxonResult {
  double p_value = 1.0;
  double statistic = 0.0;  // min(W+, W-)
  std::size_t n_used = 0;  // pairs with non-zero difference
  bool degenerate = false; // every difference was zero
};

/// Zero differences are dropped, |d| ties get average ranks, and the null
/// distribution of W+ is counted exactly over all 2^m sign assignments.
/// p = 2 * P(W+ <= min(W+, W-)), capped at 1.
inline WilcoxonResult wilcoxon_signed_rank_two_sided(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorKind::input, "Wilcoxon needs paired samples of equal length");
  std::vector<double> diffs;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d != 0.0) diffs.push_back(d);
  }
  WilcoxonResult result;
  result.n_used = diffs.size();
  if (diffs.empty()) {
    result.degenerate = true;
    return result;
  }
  const std::size_t m = diffs.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto x, auto y) { return std::abs(diffs[x]) < std::abs(diffs[y]); });

  // Doubled ranks keep tie averages integral.
  std::vector<std::size_t> rank2(m);
  for (std::size_t i = 0; i < m;) {
    std::size_t j = i;
    while (j + 1 < m && std::abs(diffs[order[j + 1]]) == std::abs(diffs[order[i]])) ++j;
    const std::size_t avg2 = (i + 1) + (j + 1);  // 2 * mean of ranks i+1..j+1
    for (std::size_t t = i; t <= j; ++t) rank2[order[t]] = avg2;
    i = j + 1;
  }
  std::size_t plus2 = 0, total2 = 0;
  for (std::size_t i = 0; i < m; ++i) {
    total2 += rank2[i];
    if (diffs[i] > 0) plus2 += rank2[i];
  }
  const std::size_t w2 = std::min(plus2, total2 - plus2);

  // counts[s] = number of sign assignments with doubled W+ equal to s.
  std::vector<double> counts(total2 + 1, 0.0);
  counts[0] = 1.0;
  std::size_t reach = 0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t s = reach + 1; s-- > 0;) {
      if (counts[s] != 0.0) counts[s + rank2[i]] += counts[s];
    }
    reach += rank2[i];
  }
  double tail = 0.0;
  for (std::size_t s = 0; s <= w2; ++s) tail += counts[s];
  result.statistic = static_cast<double>(w2) / 2.0;
  result.p_value = std::min(1.0, 2.0 * tail / std::ldexp(1.0, static_cast<int>(m)));
  return result;
}

}  // namespace volret
