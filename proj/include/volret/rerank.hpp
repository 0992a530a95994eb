#pragma once

// Re-ranking of top-M candidate volumes.
//
// Late interaction: a candidate's rank score is the sum over query slices of
// the best cosine similarity to any candidate slice,
//   RS(c) = sum_i max_j <q_i, c_j>,
// computed from the full slice matrices of both volumes.
//
// Reciprocal rank fusion: RRF(v) = sum over lists of 1 / (k + rank(v)), with
// absent volumes contributing nothing.

#include <algorithm>
#include <array>
#include <cstddef>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

#include "volret/ann_index.hpp"
#include "volret/corpus.hpp"
#include "volret/parallel.hpp"
#include "volret/retrieval.hpp"

namespace volret {

inline constexpr int kRrfDefaultK = 60;

/// n x L matrix of normalized slice embeddings, row i = slice i. Either a view
/// into corpus storage or an owning copy of selected rows.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix(std::span<const float> data, std::size_t dim)
      : data_(data), rows_(dim == 0 ? 0 : data.size() / dim), dim_(dim) {}

  static EmbeddingMatrix owning(std::vector<float> values, std::size_t dim) {
    auto store = std::make_shared<const std::vector<float>>(std::move(values));
    EmbeddingMatrix m(std::span<const float>(*store), dim);
    m.store_ = std::move(store);
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const float> data() const noexcept { return data_; }
  std::span<const float> row(std::size_t i) const noexcept { return data_.subspan(i * dim_, dim_); }

 private:
  std::span<const float> data_;
  std::size_t rows_;
  std::size_t dim_;
  std::shared_ptr<const std::vector<float>> store_;
};

/// All slices of `volume`, in slice order, without copying.
inline EmbeddingMatrix embedding_matrix(const VolumeRecord& volume) {
  if (volume.num_slices() == 0) fail(ErrorKind::query, "volume '" + volume.volume_id + "' is empty");
  return EmbeddingMatrix(volume.embeddings, volume.dim);
}

/// Slices of `volume` accepted by `filter`, in slice order.
inline EmbeddingMatrix embedding_matrix(const VolumeRecord& volume, const SliceFilter& filter) {
  if (!filter) return embedding_matrix(volume);
  std::vector<float> rows;
  for (std::size_t i = 0; i < volume.num_slices(); ++i) {
    if (!filter(volume, static_cast<std::uint32_t>(i))) continue;
    auto r = volume.slice(i);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  if (rows.empty()) fail(ErrorKind::query, "volume '" + volume.volume_id + "' has no slices after filtering");
  return EmbeddingMatrix::owning(std::move(rows), volume.dim);
}

/// Row-major n x m matrix of cosine similarities.
struct SimilarityMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;

  float operator()(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
};

namespace detail {

using RowMajorF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMajorF>;

inline ConstRowMap as_eigen(const EmbeddingMatrix& m) {
  return ConstRowMap(m.data().data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.dim()));
}

inline void check_pair(const EmbeddingMatrix& q, const EmbeddingMatrix& c) {
  if (q.dim() != c.dim()) {
    fail(ErrorKind::query, "embedding dimension mismatch: " + std::to_string(q.dim()) + " vs " +
                               std::to_string(c.dim()));
  }
  if (q.rows() == 0 || c.rows() == 0) fail(ErrorKind::query, "empty embedding matrix");
}

}  // namespace detail

inline SimilarityMatrix similarity_matrix(const EmbeddingMatrix& q, const EmbeddingMatrix& c) {
  detail::check_pair(q, c);
  SimilarityMatrix out{q.rows(), c.rows(), std::vector<float>(q.rows() * c.rows())};
  Eigen::Map<detail::RowMajorF> sim(out.values.data(), static_cast<Eigen::Index>(out.rows),
                                    static_cast<Eigen::Index>(out.cols));
  sim.noalias() = detail::as_eigen(q) * detail::as_eigen(c).transpose();
  return out;
}

/// Sum over query rows of the row-wise maximum similarity.
inline double cmir_score(const EmbeddingMatrix& q, const EmbeddingMatrix& c) {
  detail::check_pair(q, c);
  const Eigen::MatrixXf sim = detail::as_eigen(q) * detail::as_eigen(c).transpose();
  double total = 0.0;
  for (Eigen::Index i = 0; i < sim.rows(); ++i) total += static_cast<double>(sim.row(i).maxCoeff());
  return total;
}

struct CmirOptions {
  /// Query-side slice selection; empty uses every query slice.
  SliceFilter query_filter;
  std::size_t workers = 0;
};

/// Reorders `candidates` by late-interaction score over full candidate
/// volumes. Ties keep the incoming order.
inline RankedList cmir_rerank(const VolumeRecord& query, const RankedList& candidates, const Corpus& corpus,
                              const CmirOptions& options = {}) {
  std::vector<const VolumeRecord*> volumes;
  volumes.reserve(candidates.size());
  for (const auto& e : candidates.entries) volumes.push_back(&corpus.at(e.volume_id));
  const EmbeddingMatrix q = embedding_matrix(query, options.query_filter);

  std::vector<double> scores(volumes.size());
  parallel_for(
      volumes.size(), [&](std::size_t i) { scores[i] = cmir_score(q, embedding_matrix(*volumes[i])); },
      options.workers);

  std::vector<std::size_t> order(volumes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  RankedList out{Method::cmir, {}};
  out.entries.reserve(order.size());
  for (auto i : order) out.entries.push_back({candidates.entries[i].volume_id, scores[i]});
  return out;
}

/// Fuses three rankings of one query. Per-volume terms are summed in rank
/// order so the result does not depend on the order of the lists.
inline RankedList rrf_fuse(const RankedList& a, const RankedList& b, const RankedList& c, int k = kRrfDefaultK) {
  if (k < 0) fail(ErrorKind::input, "RRF k must be non-negative");
  std::unordered_map<std::string, std::vector<std::size_t>> ranks;
  for (const RankedList* list : {&a, &b, &c}) {
    std::unordered_set<std::string_view> seen;
    for (std::size_t i = 0; i < list->entries.size(); ++i) {
      const auto& id = list->entries[i].volume_id;
      if (!seen.insert(id).second) fail(ErrorKind::input, "duplicate volume '" + id + "' in one ranked list");
      ranks[id].push_back(i + 1);
    }
  }
  RankedList out{Method::rrf, {}};
  out.entries.reserve(ranks.size());
  for (auto& [id, rs] : ranks) {
    std::sort(rs.begin(), rs.end());
    double score = 0.0;
    for (auto r : rs) score += 1.0 / (static_cast<double>(k) + static_cast<double>(r));
    out.entries.push_back({id, score});
  }
  std::sort(out.entries.begin(), out.entries.end(), [](const RankedEntry& x, const RankedEntry& y) {
    if (x.score != y.score) return x.score > y.score;
    return x.volume_id < y.volume_id;
  });
  return out;
}

}  // namespace volret
