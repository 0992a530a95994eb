#pragma once

// Corpus domain types and the on-disk interchange formats.
//
// VEMB (binary, little-endian):
//   magic "VEMB" | version u32 = 1 | dim u32 | record_count u64
//   per record: volume_id_len u16 | volume_id bytes | slice_index u32 | dim x f32
//
// Metadata (JSON lines, one object per volume):
//   {"volume_id", "task", "tumor_stage", "num_slices", "organ_slice_indices",
//    optional "organ_slices": {"<organ>": [indices]}}

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "volret/error.hpp"
#include "volret/file_io.hpp"
#include "volret/vector_ops.hpp"

namespace volret {

enum class Task : std::uint8_t { colon, liver, lung, pancreas };

inline constexpr std::array<Task, 4> kAllTasks = {Task::colon, Task::liver, Task::lung,
                                                  Task::pancreas};

inline constexpr int kMaxTumorStage = 4;

constexpr std::string_view to_string(Task task) {
  switch (task) {
    case Task::colon: return "colon";
    case Task::liver: return "liver";
    case Task::lung: return "lung";
    case Task::pancreas: return "pancreas";
  }
  return "?";
}

inline std::optional<Task> try_parse_task(std::string_view name) {
  for (Task t : kAllTasks) {
    if (to_string(t) == name) return t;
  }
  return std::nullopt;
}

inline Task parse_task(std::string_view name) {
  if (auto t = try_parse_task(name)) return *t;
  fail(ErrorKind::input, "unknown task '" + std::string(name) + "'");
}

struct SliceKey {
  std::string volume_id;
  std::uint32_t slice_index = 0;

  friend auto operator<=>(const SliceKey&, const SliceKey&) = default;
};

/// One volume: ordered slice embeddings (row-major, `dim` floats per slice)
/// plus labels. Stage 0 means no tumor; 1-4 are T stages of the task organ.
struct VolumeRecord {
  std::string volume_id;
  Task task = Task::colon;
  int tumor_stage = 0;
  std::size_t dim = 0;
  /// Sorted slice indices containing the task's organ.
  std::vector<std::uint32_t> organ_slice_indices;
  /// Sorted slice indices for organs other than `task`.
  std::map<Task, std::vector<std::uint32_t>> other_organ_slices;
  std::vector<float> embeddings;

  std::size_t num_slices() const noexcept { return dim == 0 ? 0 : embeddings.size() / dim; }

  std::span<const float> slice(std::size_t i) const noexcept {
    return {embeddings.data() + i * dim, dim};
  }
  std::span<float> slice(std::size_t i) noexcept { return {embeddings.data() + i * dim, dim}; }

  /// Slices containing `organ`; empty when the organ is absent.
  const std::vector<std::uint32_t>& organ_slices(Task organ) const {
    if (organ == task) return organ_slice_indices;
    static const std::vector<std::uint32_t> kNone;
    auto it = other_organ_slices.find(organ);
    return it == other_organ_slices.end() ? kNone : it->second;
  }

  bool contains_organ(Task organ) const { return !organ_slices(organ).empty(); }

  bool slice_in_organ(Task organ, std::uint32_t index) const {
    const auto& s = organ_slices(organ);
    return std::binary_search(s.begin(), s.end(), index);
  }

  /// Tumor stage with respect to `organ`: only the task organ carries a tumor label.
  int stage_for(Task organ) const noexcept { return organ == task ? tumor_stage : 0; }
};

namespace detail {

inline void normalize_index_set(std::vector<std::uint32_t>& s) {
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
}

inline void check_index_set(const std::vector<std::uint32_t>& s, std::size_t n,
                            const std::string& what) {
  if (!s.empty() && s.back() >= n) {
    fail(ErrorKind::consistency, what + ": slice index " + std::to_string(s.back()) +
                                     " out of range for " + std::to_string(n) + " slices");
  }
}

}  // namespace detail

/// Immutable-after-construction collection of volumes sharing one dimension.
/// Volumes keep insertion order; lookup by id is O(1).
class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::size_t dimension) : dimension_(dimension) {}

  std::size_t dimension() const noexcept { return dimension_; }
  const std::vector<VolumeRecord>& volumes() const noexcept { return volumes_; }
  std::size_t size() const noexcept { return volumes_.size(); }
  bool empty() const noexcept { return volumes_.empty(); }

  std::size_t total_slices() const noexcept {
    std::size_t n = 0;
    for (const auto& v : volumes_) n += v.num_slices();
    return n;
  }

  const VolumeRecord* find(std::string_view id) const {
    auto it = by_id_.find(std::string(id));
    return it == by_id_.end() ? nullptr : &volumes_[it->second];
  }

  const VolumeRecord& at(std::string_view id) const {
    if (const auto* v = find(id)) return *v;
    fail(ErrorKind::consistency, "unknown volume id '" + std::string(id) + "'");
  }

  /// Validates and appends `volume`, normalizing its embeddings.
  void add(VolumeRecord volume) {
    if (dimension_ == 0) fail(ErrorKind::corrupt_corpus, "corpus dimension must be positive");
    if (volume.dim != dimension_) {
      fail(ErrorKind::corrupt_corpus, "volume '" + volume.volume_id + "' has dimension " +
                                          std::to_string(volume.dim) + ", corpus has " +
                                          std::to_string(dimension_));
    }
    if (volume.volume_id.empty()) fail(ErrorKind::consistency, "empty volume id");
    if (volume.volume_id.size() > 0xFFFF) fail(ErrorKind::consistency, "volume id too long");
    if (by_id_.count(volume.volume_id)) {
      fail(ErrorKind::consistency, "duplicate volume id '" + volume.volume_id + "'");
    }
    if (volume.embeddings.empty() || volume.embeddings.size() % dimension_ != 0) {
      fail(ErrorKind::corrupt_corpus, "volume '" + volume.volume_id + "' has no complete slices");
    }
    if (volume.tumor_stage < 0 || volume.tumor_stage > kMaxTumorStage) {
      fail(ErrorKind::consistency, "volume '" + volume.volume_id + "' has tumor_stage " +
                                       std::to_string(volume.tumor_stage));
    }
    const std::size_t n = volume.num_slices();
    detail::normalize_index_set(volume.organ_slice_indices);
    detail::check_index_set(volume.organ_slice_indices, n, volume.volume_id);
    volume.other_organ_slices.erase(volume.task);
    for (auto& [organ, s] : volume.other_organ_slices) {
      detail::normalize_index_set(s);
      detail::check_index_set(s, n, volume.volume_id);
    }
    for (std::size_t i = 0; i < n; ++i) {
      auto row = volume.slice(i);
      if (!all_finite(row)) {
        fail(ErrorKind::corrupt_corpus, "non-finite value in " + volume.volume_id + ":" +
                                            std::to_string(i));
      }
      if (!normalize_in_place(row)) {
        fail(ErrorKind::corrupt_corpus, "zero vector at " + volume.volume_id + ":" +
                                            std::to_string(i));
      }
    }
    by_id_.emplace(volume.volume_id, volumes_.size());
    volumes_.push_back(std::move(volume));
  }

 private:
  std::size_t dimension_ = 0;
  std::vector<VolumeRecord> volumes_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

// ---------------------------------------------------------------------------
// VEMB + metadata

inline constexpr std::string_view kVembMagic = "VEMB";
inline constexpr std::uint32_t kVembVersion = 1;
inline constexpr std::size_t kVembHeaderBytes = 4 + 4 + 4 + 8;

/// Bytes of one VEMB record.
constexpr std::size_t vemb_record_bytes(std::size_t id_len, std::size_t dim) {
  return 2 + id_len + 4 + 4 * dim;
}

/// Metadata sidecar used when only the embedding path is given.
inline std::filesystem::path metadata_path_for(const std::filesystem::path& embeddings) {
  auto p = embeddings;
  p.replace_extension(".meta.jsonl");
  return p;
}

inline std::string encode_vemb(const Corpus& corpus) {
  io::ByteWriter w;
  w.bytes(kVembMagic);
  w.u32(kVembVersion);
  w.u32(static_cast<std::uint32_t>(corpus.dimension()));
  w.u64(corpus.total_slices());
  for (const auto& v : corpus.volumes()) {
    for (std::size_t i = 0; i < v.num_slices(); ++i) {
      w.u16(static_cast<std::uint16_t>(v.volume_id.size()));
      w.bytes(v.volume_id);
      w.u32(static_cast<std::uint32_t>(i));
      for (float x : v.slice(i)) w.f32(x);
    }
  }
  return w.str();
}

inline nlohmann::json metadata_json(const VolumeRecord& v) {
  nlohmann::json j;
  j["volume_id"] = v.volume_id;
  j["task"] = std::string(to_string(v.task));
  j["tumor_stage"] = v.tumor_stage;
  j["num_slices"] = v.num_slices();
  j["organ_slice_indices"] = v.organ_slice_indices;
  if (!v.other_organ_slices.empty()) {
    nlohmann::json organs = nlohmann::json::object();
    for (const auto& [organ, s] : v.other_organ_slices) organs[std::string(to_string(organ))] = s;
    j["organ_slices"] = std::move(organs);
  }
  return j;
}

inline std::string encode_metadata(const Corpus& corpus) {
  std::string out;
  for (const auto& v : corpus.volumes()) {
    out += metadata_json(v).dump();
    out += '\n';
  }
  return out;
}

/// Writes the VEMB file and its JSON-lines metadata.
inline void write_embeddings(const Corpus& corpus, const std::filesystem::path& embeddings_path,
                             const std::filesystem::path& metadata_path) {
  io::write_atomic(embeddings_path, encode_vemb(corpus));
  io::write_atomic(metadata_path, encode_metadata(corpus));
}

inline void write_embeddings(const Corpus& corpus, const std::filesystem::path& path) {
  write_embeddings(corpus, path, metadata_path_for(path));
}

struct VolumeMetadata {
  std::string volume_id;
  Task task = Task::colon;
  int tumor_stage = 0;
  std::size_t num_slices = 0;
  std::vector<std::uint32_t> organ_slice_indices;
  std::map<Task, std::vector<std::uint32_t>> other_organ_slices;
};

inline std::vector<VolumeMetadata> parse_metadata(std::string_view text) {
  std::vector<VolumeMetadata> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "metadata line " + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::format, where + ": " + e.what());
    }
    try {
      VolumeMetadata m;
      m.volume_id = j.at("volume_id").get<std::string>();
      const auto task_name = j.at("task").get<std::string>();
      auto task = try_parse_task(task_name);
      if (!task) fail(ErrorKind::format, where + ": unknown task '" + task_name + "'");
      m.task = *task;
      m.tumor_stage = j.at("tumor_stage").get<int>();
      m.num_slices = j.at("num_slices").get<std::size_t>();
      m.organ_slice_indices = j.at("organ_slice_indices").get<std::vector<std::uint32_t>>();
      if (auto it = j.find("organ_slices"); it != j.end()) {
        for (const auto& [name, indices] : it->items()) {
          auto organ = try_parse_task(name);
          if (!organ) fail(ErrorKind::format, where + ": unknown organ '" + name + "'");
          m.other_organ_slices[*organ] = indices.get<std::vector<std::uint32_t>>();
        }
      }
      if (m.tumor_stage < 0 || m.tumor_stage > kMaxTumorStage) {
        fail(ErrorKind::format, where + ": tumor_stage out of range");
      }
      rows.push_back(std::move(m));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::format, where + ": " + e.what());
    }
  }
  return rows;
}

/// Parses VEMB bytes and joins them with metadata rows into a Corpus.
inline Corpus decode_corpus(const std::vector<std::uint8_t>& vemb,
                            const std::vector<VolumeMetadata>& metadata) {
  io::ByteReader r(vemb, ErrorKind::format, "VEMB header");
  if (r.bytes(4) != kVembMagic) fail(ErrorKind::format, "bad magic at offset 0");
  const auto version = r.u32();
  if (version != kVembVersion) {
    fail(ErrorKind::format, "unsupported version " + std::to_string(version) + " at offset 4");
  }
  const std::size_t dim = r.u32();
  if (dim == 0) fail(ErrorKind::format, "dimension 0 at offset 8");
  const std::uint64_t count = r.u64();

  std::unordered_map<std::string, std::size_t> meta_index;
  std::vector<VolumeRecord> records(metadata.size());
  std::vector<std::vector<bool>> seen(metadata.size());
  for (std::size_t i = 0; i < metadata.size(); ++i) {
    const auto& m = metadata[i];
    if (!meta_index.emplace(m.volume_id, i).second) {
      fail(ErrorKind::consistency, "duplicate metadata for '" + m.volume_id + "'");
    }
    auto& rec = records[i];
    rec.volume_id = m.volume_id;
    rec.task = m.task;
    rec.tumor_stage = m.tumor_stage;
    rec.dim = dim;
    rec.organ_slice_indices = m.organ_slice_indices;
    rec.other_organ_slices = m.other_organ_slices;
    rec.embeddings.assign(m.num_slices * dim, 0.0f);
    seen[i].assign(m.num_slices, false);
  }

  io::ByteReader body(vemb, ErrorKind::corrupt_corpus, "VEMB record");
  body.bytes(kVembHeaderBytes);
  for (std::uint64_t rec_no = 0; rec_no < count; ++rec_no) {
    const std::size_t start = body.offset();
    const std::size_t id_len = body.u16();
    std::string id = body.bytes(id_len);
    const std::uint32_t slice = body.u32();
    body.require(4 * dim);
    auto it = meta_index.find(id);
    if (it == meta_index.end()) {
      fail(ErrorKind::consistency, "record at offset " + std::to_string(start) +
                                       " references volume '" + id + "' missing from metadata");
    }
    auto& rec = records[it->second];
    if (slice >= seen[it->second].size()) {
      fail(ErrorKind::consistency, "record at offset " + std::to_string(start) + ": slice " +
                                       std::to_string(slice) + " beyond num_slices of '" + id +
                                       "'");
    }
    if (seen[it->second][slice]) {
      fail(ErrorKind::consistency, "record at offset " + std::to_string(start) +
                                       ": duplicate slice " + id + ":" + std::to_string(slice));
    }
    seen[it->second][slice] = true;
    float* dst = rec.embeddings.data() + static_cast<std::size_t>(slice) * dim;
    for (std::size_t d = 0; d < dim; ++d) dst[d] = body.f32();
  }
  if (!body.at_end()) {
    fail(ErrorKind::corrupt_corpus, std::to_string(body.remaining()) +
                                        " trailing bytes after record " + std::to_string(count) +
                                        " at offset " + std::to_string(body.offset()) +
                                        " (dimension mismatch?)");
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto missing = std::count(seen[i].begin(), seen[i].end(), false);
    if (records[i].embeddings.empty() || missing > 0) {
      fail(ErrorKind::consistency, "metadata for '" + records[i].volume_id + "' declares " +
                                       std::to_string(seen[i].size()) + " slices but " +
                                       std::to_string(missing) + " have no embedding");
    }
  }

  Corpus corpus(dim);
  for (auto& rec : records) corpus.add(std::move(rec));
  return corpus;
}

inline Corpus load_embeddings(const std::filesystem::path& embeddings_path,
                              const std::filesystem::path& metadata_path) {
  namespace fs = std::filesystem;
  if (!fs::exists(metadata_path)) {
    fail(ErrorKind::consistency, "metadata file '" + metadata_path.string() + "' not found");
  }
  const auto vemb = io::read_file(embeddings_path);
  const auto metadata = parse_metadata(io::read_text(metadata_path));
  return decode_corpus(vemb, metadata);
}

inline Corpus load_embeddings(const std::filesystem::path& path) {
  return load_embeddings(path, metadata_path_for(path));
}

// ---------------------------------------------------------------------------
// Summary

struct TaskSummary {
  std::string label;
  std::size_t volumes = 0;
  std::size_t slices = 0;
  std::size_t tumor_volumes = 0;
};

/// Per-task volume/slice counts followed by a totals row.
inline std::vector<TaskSummary> summarize(const Corpus& corpus) {
  std::vector<TaskSummary> rows;
  TaskSummary total{"Total"};
  for (Task t : kAllTasks) {
    TaskSummary row{std::string(to_string(t))};
    for (const auto& v : corpus.volumes()) {
      if (v.task != t) continue;
      ++row.volumes;
      row.slices += v.num_slices();
      if (v.tumor_stage > 0) ++row.tumor_volumes;
    }
    total.volumes += row.volumes;
    total.slices += row.slices;
    total.tumor_volumes += row.tumor_volumes;
    rows.push_back(std::move(row));
  }
  rows.push_back(std::move(total));
  return rows;
}

}  // namespace volret
