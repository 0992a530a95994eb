#pragma once

// Slow reference implementations used to check the library. Each one follows
// the textbook definition directly and shares no code with the code under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "volret/corpus.hpp"

namespace volret::oracle {

inline double dot(const float* a, const float* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

struct Hit {
  std::string volume_id;
  std::uint32_t slice = 0;
  double score = 0.0;
};

using Filter = std::function<bool(const VolumeRecord&, std::uint32_t)>;

/// Full scan of every admitted slice, sorted by (score desc, id asc, slice asc).
inline std::vector<Hit> knn(const Corpus& corpus, const Filter& admit, const float* query, std::size_t k,
                            const std::string& exclude = {}) {
  std::vector<Hit> all;
  for (const auto& v : corpus.volumes()) {
    if (v.volume_id == exclude) continue;
    for (std::uint32_t s = 0; s < v.num_slices(); ++s) {
      if (admit && !admit(v, s)) continue;
      all.push_back({v.volume_id, s, dot(query, v.embeddings.data() + s * v.dim, v.dim)});
    }
  }
  std::sort(all.begin(), all.end(), [](const Hit& a, const Hit& b) {
    return std::make_tuple(-a.score, a.volume_id, a.slice) < std::make_tuple(-b.score, b.volume_id, b.slice);
  });
  if (all.size() > k) all.resize(k);
  return all;
}

struct Stats {
  std::size_t count = 0;
  double max = -1e300;
  double sum = 0.0;
};

/// Nested loops: every admitted query slice, full database scan, top-k, accumulate.
inline std::map<std::string, Stats> hit_table(const Corpus& corpus, const Filter& database, const VolumeRecord& query,
                                              const Filter& query_filter, std::size_t k, bool exclude_self = true) {
  std::map<std::string, Stats> table;
  for (std::uint32_t i = 0; i < query.num_slices(); ++i) {
    if (query_filter && !query_filter(query, i)) continue;
    const float* q = query.embeddings.data() + i * query.dim;
    for (const auto& h : knn(corpus, database, q, k, exclude_self ? query.volume_id : std::string())) {
      auto& s = table[h.volume_id];
      s.count += 1;
      s.max = std::max(s.max, h.score);
      s.sum += h.score;
    }
  }
  return table;
}

enum class Agg { count, max, sum };

/// Sorts volume ids with an explicit tuple key per aggregation.
inline std::vector<std::pair<std::string, double>> rank(const std::map<std::string, Stats>& table, Agg agg,
                                                        std::size_t m) {
  using Key = std::tuple<double, double, std::string>;  // negated primary, negated secondary, id
  std::vector<std::pair<Key, std::pair<std::string, double>>> rows;
  for (const auto& [id, s] : table) {
    const double count = static_cast<double>(s.count);
    switch (agg) {
      case Agg::count: rows.push_back({{-count, -s.sum, id}, {id, count}}); break;
      case Agg::max: rows.push_back({{-s.max, -count, id}, {id, s.max}}); break;
      case Agg::sum: rows.push_back({{-s.sum, -count, id}, {id, s.sum}}); break;
    }
  }
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t i = 0; i < rows.size() && i < m; ++i) out.push_back(rows[i].second);
  return out;
}

/// Row-major matrices, `dim` columns. Sum over q rows of the max dot with any c row.
inline double cmir(const std::vector<float>& q, const std::vector<float>& c, std::size_t dim) {
  const std::size_t n = q.size() / dim, m = c.size() / dim;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double best = -1e300;
    for (std::size_t j = 0; j < m; ++j) best = std::max(best, dot(&q[i * dim], &c[j * dim], dim));
    total += best;
  }
  return total;
}

/// Sum of 1/(k + rank) over the lists containing each id.
inline std::vector<std::pair<std::string, double>> rrf(const std::vector<std::vector<std::string>>& lists, int k) {
  std::vector<std::string> ids;
  for (const auto& l : lists) ids.insert(ids.end(), l.begin(), l.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  std::vector<std::pair<std::string, double>> out;
  for (const auto& id : ids) {
    std::vector<double> terms;
    for (const auto& l : lists) {
      auto it = std::find(l.begin(), l.end(), id);
      if (it != l.end()) terms.push_back(1.0 / (k + static_cast<double>(it - l.begin() + 1)));
    }
    std::sort(terms.begin(), terms.end(), std::greater<>());
    double s = 0.0;
    for (double t : terms) s += t;
    out.push_back({id, s});
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  return out;
}

/// Two-sided exact Wilcoxon by enumerating all 2^m sign flips.
inline double wilcoxon(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) d.push_back(a[i] - b[i]);
  }
  const std::size_t m = d.size();
  if (m == 0) return 1.0;
  std::vector<double> rank(m);
  for (std::size_t i = 0; i < m; ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < m; ++j) {
      if (std::abs(d[j]) < std::abs(d[i])) less += 1;
      if (std::abs(d[j]) == std::abs(d[i])) equal += 1;
    }
    rank[i] = less + (equal + 1) / 2.0;
  }
  double total = 0, plus = 0;
  for (std::size_t i = 0; i < m; ++i) {
    total += rank[i];
    if (d[i] > 0) plus += rank[i];
  }
  const double w = std::min(plus, total - plus);
  std::uint64_t at_most = 0;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << m); ++mask) {
    double wp = 0;
    for (std::size_t i = 0; i < m; ++i) {
      if (mask >> i & 1) wp += rank[i];
    }
    if (wp <= w) ++at_most;
  }
  return std::min(1.0, 2.0 * static_cast<double>(at_most) / static_cast<double>(std::uint64_t{1} << m));
}

/// AP over the first 10 ranks, written with explicit recall and precision curves.
inline double average_precision(const std::vector<int>& rel) {
  const std::size_t depth = std::min<std::size_t>(10, rel.size());
  double relevant = 0;
  for (std::size_t i = 0; i < depth; ++i) relevant += rel[i];
  if (relevant == 0) return 0.0;
  double ap = 0, prev_recall = 0, hits = 0;
  for (std::size_t n = 1; n <= depth; ++n) {
    hits += rel[n - 1];
    const double recall = hits / relevant, precision = hits / static_cast<double>(n);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

}  // namespace volret::oracle
