#pragma once

// Hierarchical Navigable Small World graph over a borrowed row-major float
// matrix. Similarity is "larger is closer"; node order is insertion order.
// Level draws come from a seeded RNG so builds are reproducible.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <queue>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace volret::hnsw {

struct Params {
  std::size_t m = 32;
  std::size_t ef_construction = 200;
  std::uint64_t seed = 42;
};

/// (similarity, node) with a total order: higher similarity first, lower id on ties.
struct Candidate {
  double sim;
  std::uint32_t id;
};

struct CloserFirst {  // max-heap on closeness
  bool operator()(const Candidate& a, const Candidate& b) const {
    return a.sim < b.sim || (a.sim == b.sim && a.id > b.id);
  }
};

struct FartherFirst {  // max-heap on farness
  bool operator()(const Candidate& a, const Candidate& b) const {
    return a.sim > b.sim || (a.sim == b.sim && a.id < b.id);
  }
};

inline bool closer(const Candidate& a, const Candidate& b) { return CloserFirst{}(b, a); }

template <class Similarity>
class Graph {
 public:
  using Links = std::vector<std::uint32_t>;

  Graph() = default;
  Graph(std::size_t dim, Params params, Similarity sim = {})
      : dim_(dim), params_(params), sim_(std::move(sim)),
        level_mult_(1.0 / std::log(static_cast<double>(std::max<std::size_t>(params.m, 2)))),
        rng_(params.seed) {}

  std::size_t size() const noexcept { return levels_.size(); }
  int max_level() const noexcept { return max_level_; }
  std::uint32_t entry_point() const noexcept { return entry_; }
  const Params& params() const noexcept { return params_; }

  /// Adjacency of `node` at `level`; levels above the node's own level are empty.
  const Links& links(std::uint32_t node, int level) const { return links_[node][level]; }
  int level_of(std::uint32_t node) const { return levels_[node]; }

  /// Appends node `size()` whose vector is row `size()` of `data`.
  void insert(std::span<const float> data) {
    const auto id = static_cast<std::uint32_t>(levels_.size());
    const int level = draw_level();
    levels_.push_back(level);
    links_.emplace_back(static_cast<std::size_t>(level) + 1);
    if (id == 0) {
      entry_ = 0;
      max_level_ = level;
      return;
    }
    const auto q = row(data, id);
    Candidate cur{sim_(q, row(data, entry_)), entry_};
    for (int l = max_level_; l > level; --l) cur = greedy(data, q, cur, l);

    std::vector<Candidate> entry_points{cur};
    for (int l = std::min(level, max_level_); l >= 0; --l) {
      auto found = search_layer(data, q, entry_points, params_.ef_construction, l);
      const std::size_t cap = capacity(l);
      auto chosen = select_neighbors(data, found, params_.m);
      auto& mine = links_[id][l];
      for (const auto& c : chosen) mine.push_back(c.id);
      for (const auto& c : chosen) {
        auto& theirs = links_[c.id][l];
        theirs.push_back(id);
        if (theirs.size() > cap) shrink(data, c.id, l, cap);
      }
      entry_points = std::move(found);
    }
    if (level > max_level_) {
      max_level_ = level;
      entry_ = id;
    }
  }

  /// Up to `ef` closest nodes to `query`, closest first.
  std::vector<Candidate> search(std::span<const float> data, std::span<const float> query,
                                std::size_t ef) const {
    if (levels_.empty()) return {};
    Candidate cur{sim_(query, row(data, entry_)), entry_};
    for (int l = max_level_; l > 0; --l) cur = greedy(data, query, cur, l);
    auto found = search_layer(data, query, {cur}, std::max<std::size_t>(ef, 1), 0);
    return found;
  }

  /// Restores a graph from persisted parts.
  void restore(std::vector<int> levels, std::vector<std::vector<Links>> links, std::uint32_t entry,
               int max_level) {
    levels_ = std::move(levels);
    links_ = std::move(links);
    entry_ = entry;
    max_level_ = max_level;
  }

 private:
  std::span<const float> row(std::span<const float> data, std::uint32_t id) const {
    return data.subspan(static_cast<std::size_t>(id) * dim_, dim_);
  }

  std::size_t capacity(int level) const { return level == 0 ? 2 * params_.m : params_.m; }

  int draw_level() {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double u = 1.0 - unit(rng_);  // (0, 1]
    return static_cast<int>(std::floor(-std::log(u) * level_mult_));
  }

  Candidate greedy(std::span<const float> data, std::span<const float> q, Candidate cur,
                   int level) const {
    for (bool moved = true; moved;) {
      moved = false;
      for (std::uint32_t nb : links_[cur.id][level]) {
        Candidate c{sim_(q, row(data, nb)), nb};
        if (closer(c, cur)) {
          cur = c;
          moved = true;
        }
      }
    }
    return cur;
  }

  std::vector<Candidate> search_layer(std::span<const float> data, std::span<const float> q,
                                      const std::vector<Candidate>& entry_points, std::size_t ef,
                                      int level) const {
    std::vector<char> visited(levels_.size(), 0);
    std::priority_queue<Candidate, std::vector<Candidate>, CloserFirst> frontier;
    std::priority_queue<Candidate, std::vector<Candidate>, FartherFirst> best;
    for (const auto& e : entry_points) {
      if (visited[e.id]) continue;
      visited[e.id] = 1;
      frontier.push(e);
      best.push(e);
      if (best.size() > ef) best.pop();
    }
    while (!frontier.empty()) {
      const Candidate c = frontier.top();
      if (best.size() >= ef && closer(best.top(), c)) break;
      frontier.pop();
      for (std::uint32_t nb : links_[c.id][level]) {
        if (visited[nb]) continue;
        visited[nb] = 1;
        Candidate n{sim_(q, row(data, nb)), nb};
        if (best.size() < ef || closer(n, best.top())) {
          frontier.push(n);
          best.push(n);
          if (best.size() > ef) best.pop();
        }
      }
    }
    std::vector<Candidate> out;
    out.reserve(best.size());
    for (; !best.empty(); best.pop()) out.push_back(best.top());
    std::reverse(out.begin(), out.end());
    return out;
  }

  // Diversity heuristic: keep a candidate only if it is closer to the base
  // than to every neighbor already kept.
  std::vector<Candidate> select_neighbors(std::span<const float> data,
                                          const std::vector<Candidate>& sorted,
                                          std::size_t limit) const {
    std::vector<Candidate> kept;
    for (const auto& c : sorted) {
      if (kept.size() >= limit) break;
      bool good = true;
      for (const auto& k : kept) {
        if (sim_(row(data, c.id), row(data, k.id)) > c.sim) {
          good = false;
          break;
        }
      }
      if (good) kept.push_back(c);
    }
    return kept;
  }

  void shrink(std::span<const float> data, std::uint32_t node, int level, std::size_t cap) {
    auto& adj = links_[node][level];
    const auto base = row(data, node);
    std::vector<Candidate> cands;
    cands.reserve(adj.size());
    for (std::uint32_t nb : adj) cands.push_back({sim_(base, row(data, nb)), nb});
    std::sort(cands.begin(), cands.end(), closer);
    auto kept = select_neighbors(data, cands, cap);
    adj.clear();
    for (const auto& c : kept) adj.push_back(c.id);
  }

  std::size_t dim_ = 0;
  Params params_;
  Similarity sim_;
  double level_mult_ = 1.0;
  std::mt19937_64 rng_;
  std::vector<int> levels_;
  std::vector<std::vector<Links>> links_;
  std::uint32_t entry_ = 0;
  int max_level_ = 0;
};

}  // namespace volret::hnsw
