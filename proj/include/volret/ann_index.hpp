#pragma once

// Slice-level cosine top-k search over normalized embeddings, either exact
// (brute-force scan) or approximate (HNSW). Both modes score pairs with the
// same inner product and return hits ordered by score descending, then
// (volume_id, slice_index) ascending.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "volret/corpus.hpp"
#include "volret/file_io.hpp"
#include "volret/hnsw.hpp"
#include "volret/vector_ops.hpp"

namespace volret {

struct IndexConfig {
  std::size_t m = 32;
  std::size_t ef_construction = 200;
  std::size_t ef_search = 128;
  bool exact = false;
  std::uint64_t seed = 42;

  void validate() const {
    if (m < 2) fail(ErrorKind::invalid_spec, "index m must be >= 2");
    if (ef_construction == 0 || ef_search == 0) fail(ErrorKind::invalid_spec, "ef must be positive");
  }
};

struct SliceHit {
  SliceKey key;
  double score = 0.0;
};

/// Predicate selecting which slices of a volume take part (index or query side).
using SliceFilter = std::function<bool(const VolumeRecord&, std::uint32_t)>;

/// Keeps slices that contain `organ`.
inline SliceFilter organ_filter(Task organ) {
  return [organ](const VolumeRecord& v, std::uint32_t i) { return v.slice_in_organ(organ, i); };
}

struct InnerProduct {
  double operator()(std::span<const float> a, std::span<const float> b) const noexcept {
    return dot(a, b);
  }
};

class SliceIndex {
 public:
  SliceIndex() = default;

  static SliceIndex build(const Corpus& corpus, const IndexConfig& config,
                          const SliceFilter& filter = {}) {
    config.validate();
    SliceIndex index;
    index.config_ = config;
    index.dim_ = corpus.dimension();
    for (const auto& v : corpus.volumes()) {
      std::uint32_t owner = 0;
      bool registered = false;
      for (std::size_t i = 0; i < v.num_slices(); ++i) {
        const auto si = static_cast<std::uint32_t>(i);
        if (filter && !filter(v, si)) continue;
        if (!registered) {
          owner = index.register_volume(v.volume_id);
          registered = true;
        }
        auto row = v.slice(i);
        index.vectors_.insert(index.vectors_.end(), row.begin(), row.end());
        index.owner_.push_back(owner);
        index.slice_.push_back(si);
        ++index.volume_slices_[owner];
      }
    }
    if (index.owner_.empty()) fail(ErrorKind::empty_index, "no slices left after filtering");
    index.finish();
    return index;
  }

  std::size_t size() const noexcept { return owner_.size(); }
  std::size_t dimension() const noexcept { return dim_; }
  const IndexConfig& config() const noexcept { return config_; }
  bool exact() const noexcept { return !graph_.has_value(); }

  /// Overrides the query-time beam width.
  void set_ef_search(std::size_t ef) { config_.ef_search = std::max<std::size_t>(ef, 1); }

  SliceKey key(std::size_t entry) const { return {volume_ids_[owner_[entry]], slice_[entry]}; }

  std::vector<SliceKey> keys() const {
    std::vector<SliceKey> out;
    out.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) out.push_back(key(i));
    return out;
  }

  /// Number of indexed slices belonging to `volume_id`.
  std::size_t slices_of(std::string_view volume_id) const {
    auto it = slot_.find(std::string(volume_id));
    return it == slot_.end() ? 0 : volume_slices_[it->second];
  }

  std::span<const float> vector(std::size_t entry) const {
    return {vectors_.data() + entry * dim_, dim_};
  }

  /// Top-k slices by cosine similarity, skipping slices of `exclude_volume`.
  std::vector<SliceHit> knn(std::span<const float> query, std::size_t k,
                            std::string_view exclude_volume = {}) const {
    if (query.size() != dim_) {
      fail(ErrorKind::query, "query dimension " + std::to_string(query.size()) + " != index dimension " +
                                 std::to_string(dim_));
    }
    if (k == 0) fail(ErrorKind::query, "k must be >= 1");
    std::optional<std::uint32_t> skip;
    if (!exclude_volume.empty()) {
      if (auto it = slot_.find(std::string(exclude_volume)); it != slot_.end()) skip = it->second;
    }

    std::vector<Scored> scored;
    if (exact()) {
      scored.reserve(size());
      for (std::size_t i = 0; i < size(); ++i) {
        if (skip && owner_[i] == *skip) continue;
        scored.push_back({dot(query, vector(i)), static_cast<std::uint32_t>(i)});
      }
    } else {
      const std::size_t excluded = skip ? volume_slices_[*skip] : 0;
      const std::size_t ef = std::max(config_.ef_search, k + excluded);
      for (const auto& c : graph_->search(vectors_, query, ef)) {
        if (skip && owner_[c.id] == *skip) continue;
        scored.push_back({c.sim, c.id});
      }
    }
    const std::size_t keep = std::min(k, scored.size());
    auto before = [this](const Scored& a, const Scored& b) { return ranks_before(a, b); };
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(),
                      before);
    std::vector<SliceHit> hits;
    hits.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) hits.push_back({key(scored[i].entry), scored[i].score});
    return hits;
  }

  // -------------------------------------------------------------------------
  // Persistence: "VIDX" | version u32 | config | dim u32 | volumes | entries |
  // vectors | optional graph. Rebuilding from the corpus is always possible.

  static constexpr std::string_view kMagic = "VIDX";
  static constexpr std::uint32_t kVersion = 1;

  std::string serialize() const {
    io::ByteWriter w;
    w.bytes(kMagic);
    w.u32(kVersion);
    w.u64(config_.m);
    w.u64(config_.ef_construction);
    w.u64(config_.ef_search);
    w.u32(exact() ? 1 : 0);
    w.u64(config_.seed);
    w.u32(static_cast<std::uint32_t>(dim_));
    w.u32(static_cast<std::uint32_t>(volume_ids_.size()));
    for (const auto& id : volume_ids_) {
      w.u16(static_cast<std::uint16_t>(id.size()));
      w.bytes(id);
    }
    w.u64(size());
    for (std::size_t i = 0; i < size(); ++i) {
      w.u32(owner_[i]);
      w.u32(slice_[i]);
    }
    for (float x : vectors_) w.f32(x);
    if (graph_) {
      w.u32(graph_->entry_point());
      w.u32(static_cast<std::uint32_t>(graph_->max_level()));
      for (std::uint32_t n = 0; n < size(); ++n) {
        const int lv = graph_->level_of(n);
        w.u32(static_cast<std::uint32_t>(lv));
        for (int l = 0; l <= lv; ++l) {
          const auto& adj = graph_->links(n, l);
          w.u32(static_cast<std::uint32_t>(adj.size()));
          for (auto nb : adj) w.u32(nb);
        }
      }
    }
    return w.str();
  }

  void save(const std::filesystem::path& path) const { io::write_atomic(path, serialize()); }

  static SliceIndex deserialize(const std::vector<std::uint8_t>& bytes) {
    io::ByteReader r(bytes, ErrorKind::format, "index file");
    if (r.bytes(4) != kMagic) fail(ErrorKind::format, "bad index magic at offset 0");
    if (r.u32() != kVersion) fail(ErrorKind::format, "unsupported index version at offset 4");
    SliceIndex index;
    index.config_.m = r.u64();
    index.config_.ef_construction = r.u64();
    index.config_.ef_search = r.u64();
    index.config_.exact = r.u32() != 0;
    index.config_.seed = r.u64();
    index.config_.validate();
    index.dim_ = r.u32();
    const std::uint32_t volumes = r.u32();
    for (std::uint32_t v = 0; v < volumes; ++v) {
      const auto len = r.u16();
      index.register_volume(r.bytes(len));
    }
    const std::uint64_t n = r.u64();
    r.require(n * 8);
    for (std::uint64_t i = 0; i < n; ++i) {
      const auto owner = r.u32();
      if (owner >= volumes) fail(ErrorKind::format, "entry owner out of range at offset " + std::to_string(r.offset()));
      index.owner_.push_back(owner);
      index.slice_.push_back(r.u32());
      ++index.volume_slices_[owner];
    }
    r.require(n * index.dim_ * 4);
    index.vectors_.resize(n * index.dim_);
    for (auto& x : index.vectors_) x = r.f32();
    index.finish_order();
    if (!index.config_.exact) {
      const auto entry = r.u32();
      const auto max_level = static_cast<int>(r.u32());
      std::vector<int> levels(n);
      std::vector<std::vector<std::vector<std::uint32_t>>> links(n);
      for (std::uint64_t node = 0; node < n; ++node) {
        levels[node] = static_cast<int>(r.u32());
        if (levels[node] > max_level) fail(ErrorKind::format, "node level exceeds max level");
        links[node].resize(static_cast<std::size_t>(levels[node]) + 1);
        for (auto& adj : links[node]) {
          const auto deg = r.u32();
          r.require(std::size_t{deg} * 4);
          adj.resize(deg);
          for (auto& nb : adj) {
            nb = r.u32();
            if (nb >= n) fail(ErrorKind::format, "neighbor id out of range");
          }
        }
      }
      if (n > 0 && entry >= n) fail(ErrorKind::format, "entry point out of range");
      Graph g(index.dim_, {index.config_.m, index.config_.ef_construction, index.config_.seed});
      g.restore(std::move(levels), std::move(links), entry, max_level);
      index.graph_ = std::move(g);
    }
    if (!r.at_end()) fail(ErrorKind::format, "trailing bytes at offset " + std::to_string(r.offset()));
    return index;
  }

  static SliceIndex load(const std::filesystem::path& path) { return deserialize(io::read_file(path)); }

 private:
  using Graph = hnsw::Graph<InnerProduct>;

  struct Scored {
    double score;
    std::uint32_t entry;
  };

  bool ranks_before(const Scored& a, const Scored& b) const {
    if (a.score != b.score) return a.score > b.score;
    const auto ra = volume_rank_[owner_[a.entry]], rb = volume_rank_[owner_[b.entry]];
    if (ra != rb) return ra < rb;
    return slice_[a.entry] < slice_[b.entry];
  }

  std::uint32_t register_volume(const std::string& id) {
    auto [it, inserted] = slot_.emplace(id, static_cast<std::uint32_t>(volume_ids_.size()));
    if (inserted) {
      volume_ids_.push_back(id);
      volume_slices_.push_back(0);
    }
    return it->second;
  }

  void finish_order() {
    std::vector<std::uint32_t> order(volume_ids_.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(),
              [this](auto a, auto b) { return volume_ids_[a] < volume_ids_[b]; });
    volume_rank_.assign(order.size(), 0);
    for (std::uint32_t r = 0; r < order.size(); ++r) volume_rank_[order[r]] = r;
  }

  void finish() {
    finish_order();
    if (config_.exact) return;
    Graph g(dim_, {config_.m, config_.ef_construction, config_.seed});
    const std::span<const float> all(vectors_);
    for (std::size_t i = 0; i < size(); ++i) g.insert(all.first((i + 1) * dim_));
    graph_ = std::move(g);
  }

  IndexConfig config_;
  std::size_t dim_ = 0;
  std::vector<float> vectors_;
  std::vector<std::uint32_t> owner_;  // entry -> volume slot
  std::vector<std::uint32_t> slice_;  // entry -> slice index
  std::vector<std::string> volume_ids_;
  std::vector<std::size_t> volume_slices_;
  std::vector<std::uint32_t> volume_rank_;  // slot -> rank of id in sorted order
  std::unordered_map<std::string, std::uint32_t> slot_;
  std::optional<Graph> graph_;
};

}  // namespace volret
