#pragma once

// Volume-level retrieval: every query slice contributes its top slice hits to
// a hit table keyed by database volume; the table is then ranked by hit
// count, best single hit, or summed hit similarity.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "volret/ann_index.hpp"
#include "volret/corpus.hpp"

namespace volret {

inline constexpr std::size_t kDefaultSlicesPerQuery = 20;
inline constexpr std::size_t kDefaultTopM = 20;

enum class Method : std::uint8_t { count_base, max_score, sum_sim, cmir, rrf };

inline constexpr std::array<Method, 5> kAllMethods = {Method::count_base, Method::max_score,
                                                      Method::sum_sim, Method::cmir, Method::rrf};

constexpr std::string_view to_string(Method m) {
  switch (m) {
    case Method::count_base: return "count_base";
    case Method::max_score: return "max_score";
    case Method::sum_sim: return "sum_sim";
    case Method::cmir: return "cmir";
    case Method::rrf: return "rrf";
  }
  return "?";
}

inline Method parse_method(std::string_view name) {
  for (Method m : kAllMethods) {
    if (to_string(m) == name) return m;
  }
  fail(ErrorKind::input, "unknown method '" + std::string(name) + "'");
}

struct VolumeHits {
  std::size_t hit_count = 0;
  double max_score = 0.0;
  double sum_score = 0.0;
};

/// Per-query accumulator over database volumes, ordered by volume id.
class HitTable {
 public:
  void add(const std::string& volume_id, double score) {
    auto [it, inserted] = entries_.try_emplace(volume_id);
    auto& h = it->second;
    if (inserted || score > h.max_score) h.max_score = score;
    h.sum_score += score;
    ++h.hit_count;
  }

  const std::map<std::string, VolumeHits, std::less<>>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  const VolumeHits* find(std::string_view id) const {
    auto it = entries_.find(id);
    return it == entries_.end() ? nullptr : &it->second;
  }

 private:
  std::map<std::string, VolumeHits, std::less<>> entries_;
};

struct RankedEntry {
  std::string volume_id;
  double score = 0.0;

  friend bool operator==(const RankedEntry&, const RankedEntry&) = default;
};

struct RankedList {
  Method method = Method::count_base;
  std::vector<RankedEntry> entries;

  std::size_t size() const noexcept { return entries.size(); }
  bool empty() const noexcept { return entries.empty(); }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.volume_id);
    return out;
  }

  /// 1-based rank of `id`, if present.
  std::optional<std::size_t> rank_of(std::string_view id) const {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].volume_id == id) return i + 1;
    }
    return std::nullopt;
  }

  void truncate(std::size_t m) {
    if (entries.size() > m) entries.resize(m);
  }

  friend bool operator==(const RankedList&, const RankedList&) = default;
};

struct HitTableOptions {
  std::size_t slices_per_query = kDefaultSlicesPerQuery;
  /// Query-side slice selection; empty keeps every slice.
  SliceFilter query_filter;
  /// Skip database slices of the query volume itself.
  bool exclude_self = true;
};

/// Accumulates the top `slices_per_query` hits of every selected query slice.
/// Several hits from one volume for the same query slice each count.
inline HitTable build_hit_table(const SliceIndex& index, const VolumeRecord& query,
                                const HitTableOptions& options = {}) {
  HitTable table;
  std::size_t used = 0;
  const std::string_view exclude = options.exclude_self ? std::string_view(query.volume_id) : std::string_view();
  for (std::size_t i = 0; i < query.num_slices(); ++i) {
    if (options.query_filter && !options.query_filter(query, static_cast<std::uint32_t>(i))) continue;
    ++used;
    for (const auto& hit : index.knn(query.slice(i), options.slices_per_query, exclude)) {
      table.add(hit.key.volume_id, hit.score);
    }
  }
  if (used == 0) fail(ErrorKind::query, "query volume '" + query.volume_id + "' has no slices after filtering");
  return table;
}

namespace detail {

template <class Before, class Score>
RankedList rank_table(const HitTable& table, std::size_t top_m, Method method, Before before, Score score) {
  std::vector<const std::pair<const std::string, VolumeHits>*> rows;
  rows.reserve(table.size());
  for (const auto& kv : table.entries()) rows.push_back(&kv);
  std::sort(rows.begin(), rows.end(), [&](auto* a, auto* b) { return before(*a, *b); });
  RankedList out{method, {}};
  const std::size_t n = std::min(top_m, rows.size());
  out.entries.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.entries.push_back({rows[i]->first, score(rows[i]->second)});
  return out;
}

}  // namespace detail

/// Hit count descending; ties by sum_score descending, then volume id.
inline RankedList rank_count_base(const HitTable& table, std::size_t top_m = kDefaultTopM) {
  return detail::rank_table(
      table, top_m, Method::count_base,
      [](const auto& a, const auto& b) {
        if (a.second.hit_count != b.second.hit_count) return a.second.hit_count > b.second.hit_count;
        if (a.second.sum_score != b.second.sum_score) return a.second.sum_score > b.second.sum_score;
        return a.first < b.first;
      },
      [](const VolumeHits& h) { return static_cast<double>(h.hit_count); });
}

/// Best single hit descending; ties by hit count descending, then volume id.
inline RankedList rank_max_score(const HitTable& table, std::size_t top_m = kDefaultTopM) {
  return detail::rank_table(
      table, top_m, Method::max_score,
      [](const auto& a, const auto& b) {
        if (a.second.max_score != b.second.max_score) return a.second.max_score > b.second.max_score;
        if (a.second.hit_count != b.second.hit_count) return a.second.hit_count > b.second.hit_count;
        return a.first < b.first;
      },
      [](const VolumeHits& h) { return h.max_score; });
}

/// Summed hit similarity descending; ties by hit count descending, then volume id.
inline RankedList rank_sum_sim(const HitTable& table, std::size_t top_m = kDefaultTopM) {
  return detail::rank_table(
      table, top_m, Method::sum_sim,
      [](const auto& a, const auto& b) {
        if (a.second.sum_score != b.second.sum_score) return a.second.sum_score > b.second.sum_score;
        if (a.second.hit_count != b.second.hit_count) return a.second.hit_count > b.second.hit_count;
        return a.first < b.first;
      },
      [](const VolumeHits& h) { return h.sum_score; });
}

// ---------------------------------------------------------------------------
// CSV: query_id,rank,volume_id,score,method

inline constexpr std::string_view kRankedCsvHeader = "query_id,rank,volume_id,score,method";

inline void append_ranked_csv(std::string& out, std::string_view query_id, const RankedList& list) {
  for (std::size_t i = 0; i < list.entries.size(); ++i) {
    const auto& e = list.entries[i];
    out += fmt::format("{},{},{},{:.17g},{}\n", query_id, i + 1, e.volume_id, e.score, to_string(list.method));
  }
}

struct QueryRanking {
  std::string query_id;
  RankedList list;
};

/// Parses ranked-list CSV rows, grouping consecutive rows by (query_id, method).
inline std::vector<QueryRanking> parse_ranked_csv(std::string_view text) {
  std::vector<QueryRanking> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line == kRankedCsvHeader) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
    if (cols.size() != 5) fail(ErrorKind::format, "ranked CSV line " + std::to_string(line_no) + ": expected 5 columns");
    RankedEntry entry;
    std::size_t rank = 0;
    try {
      rank = std::stoul(cols[1]);
      entry.score = std::stod(cols[3]);
    } catch (const std::exception&) {
      fail(ErrorKind::format, "ranked CSV line " + std::to_string(line_no) + ": bad number");
    }
    entry.volume_id = cols[2];
    const Method method = parse_method(cols[4]);
    if (out.empty() || out.back().query_id != cols[0] || out.back().list.method != method) {
      out.push_back({cols[0], RankedList{method, {}}});
    }
    auto& list = out.back().list;
    if (rank != list.entries.size() + 1) {
      fail(ErrorKind::format, "ranked CSV line " + std::to_string(line_no) + ": ranks must be consecutive from 1");
    }
    list.entries.push_back(std::move(entry));
  }
  return out;
}

}  // namespace volret
