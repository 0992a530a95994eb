#pragma once

// Query/database splits for the three database setups.
//
//   organ_specific_seg    index holds only the organ's slices of database volumes
//   organ_specific_noseg  index holds every slice of the same database volumes
//   organ_agnostic        one index over every slice of the remaining volumes
//
// Splits are at volume level and positive/negative queries are balanced 1:1.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "volret/ann_index.hpp"
#include "volret/corpus.hpp"

namespace volret {

inline constexpr double kDefaultSamplingFraction = 0.25;

enum class SetupMode : std::uint8_t { organ_specific_seg, organ_specific_noseg, organ_agnostic };

inline constexpr std::array<SetupMode, 3> kAllSetups = {
    SetupMode::organ_specific_seg, SetupMode::organ_specific_noseg, SetupMode::organ_agnostic};

constexpr std::string_view to_string(SetupMode m) {
  switch (m) {
    case SetupMode::organ_specific_seg: return "organ_specific_seg";
    case SetupMode::organ_specific_noseg: return "organ_specific_noseg";
    case SetupMode::organ_agnostic: return "organ_agnostic";
  }
  return "?";
}

inline SetupMode parse_setup(std::string_view name) {
  for (SetupMode m : kAllSetups) {
    if (to_string(m) == name) return m;
  }
  fail(ErrorKind::input, "unknown setup mode '" + std::string(name) + "'");
}

constexpr bool is_organ_specific(SetupMode m) { return m != SetupMode::organ_agnostic; }

struct ExperimentPlan {
  SetupMode mode = SetupMode::organ_specific_seg;
  std::optional<Task> organ;
  double p = kDefaultSamplingFraction;
  std::uint64_t seed = 0;
  std::vector<std::string> query_ids;     // sorted
  std::vector<std::string> database_ids;  // sorted

  friend bool operator==(const ExperimentPlan&, const ExperimentPlan&) = default;
};

struct SamplingOptions {
  /// Draw each stage group with replacement and keep the distinct ids. The
  /// default draws without replacement inside one seed; seeds are independent.
  bool with_replacement = false;
};

/// Stage used for relevance judgments under `plan`: organ-specific plans only
/// count tumors of the probed organ.
inline int relevance_stage(const ExperimentPlan& plan, const VolumeRecord& v) {
  return plan.organ && is_organ_specific(plan.mode) ? v.stage_for(*plan.organ) : v.tumor_stage;
}

/// round(x) with halves rounded up.
inline std::size_t round_half_up(double x) { return static_cast<std::size_t>(std::floor(x + 0.5)); }

namespace detail {

inline void check_fraction(double p) {
  if (!(p > 0.0 && p <= 1.0)) fail(ErrorKind::sampling, "sampling fraction must be in (0, 1]");
}

inline std::mt19937_64 plan_rng(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt)};
  return std::mt19937_64(seq);
}

/// Draws `count` members of `pool` (corpus order), keeping distinct ids.
inline std::vector<const VolumeRecord*> draw(std::vector<const VolumeRecord*> pool, std::size_t count,
                                             bool with_replacement, std::mt19937_64& rng) {
  std::vector<const VolumeRecord*> out;
  if (pool.empty() || count == 0) return out;
  if (with_replacement) {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    std::set<std::size_t> chosen;
    for (std::size_t i = 0; i < count; ++i) chosen.insert(pick(rng));
    for (auto i : chosen) out.push_back(pool[i]);
    return out;
  }
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(std::min(count, pool.size()));
  return pool;
}

inline std::vector<std::string> sorted_ids(const std::vector<const VolumeRecord*>& vols) {
  std::vector<std::string> ids;
  ids.reserve(vols.size());
  for (const auto* v : vols) ids.push_back(v->volume_id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace detail

/// Positives: per tumor stage of `organ`'s task, round(|S_x| * p) volumes.
/// Negatives: as many volumes from the other tasks that contain `organ`.
/// Database: every remaining volume that contains `organ`.
inline ExperimentPlan sample_organ_specific(const Corpus& corpus, Task organ, double p, std::uint64_t seed,
                                            SetupMode mode = SetupMode::organ_specific_seg,
                                            const SamplingOptions& options = {}) {
  detail::check_fraction(p);
  if (!is_organ_specific(mode)) fail(ErrorKind::sampling, "organ-specific sampling needs an organ-specific mode");
  auto rng = detail::plan_rng(seed, 1 + static_cast<std::uint64_t>(organ));

  std::vector<const VolumeRecord*> positives;
  for (int stage = 1; stage <= kMaxTumorStage; ++stage) {
    std::vector<const VolumeRecord*> group;
    for (const auto& v : corpus.volumes()) {
      if (v.task == organ && v.tumor_stage == stage) group.push_back(&v);
    }
    const auto n = round_half_up(static_cast<double>(group.size()) * p);
    auto picked = detail::draw(std::move(group), n, options.with_replacement, rng);
    positives.insert(positives.end(), picked.begin(), picked.end());
  }
  if (positives.empty()) {
    fail(ErrorKind::sampling, "no tumor volumes to sample for " + std::string(to_string(organ)));
  }

  std::vector<const VolumeRecord*> negative_pool;
  for (const auto& v : corpus.volumes()) {
    if (v.task != organ && v.contains_organ(organ)) negative_pool.push_back(&v);
  }
  if (negative_pool.size() < positives.size()) {
    fail(ErrorKind::sampling, "only " + std::to_string(negative_pool.size()) + " negative candidates for " +
                                  std::to_string(positives.size()) + " positives (" + std::string(to_string(organ)) +
                                  ")");
  }
  auto negatives = detail::draw(std::move(negative_pool), positives.size(), false, rng);

  ExperimentPlan plan{mode, organ, p, seed, {}, {}};
  auto queries = positives;
  queries.insert(queries.end(), negatives.begin(), negatives.end());
  plan.query_ids = detail::sorted_ids(queries);
  const std::unordered_set<std::string_view> taken(plan.query_ids.begin(), plan.query_ids.end());
  for (const auto& v : corpus.volumes()) {
    if (!taken.count(v.volume_id) && v.contains_organ(organ)) plan.database_ids.push_back(v.volume_id);
  }
  std::sort(plan.database_ids.begin(), plan.database_ids.end());
  return plan;
}

/// Per task, round(|tumor volumes| * p) positives and as many tumor-free
/// volumes of the same task (topped up from other tasks when a task runs
/// short). Everything else forms one database.
inline ExperimentPlan sample_organ_agnostic(const Corpus& corpus, double p, std::uint64_t seed,
                                            const SamplingOptions& options = {}) {
  detail::check_fraction(p);
  auto rng = detail::plan_rng(seed, 0);
  std::vector<const VolumeRecord*> queries;
  std::unordered_set<std::string_view> chosen;
  std::size_t shortfall = 0, total_positives = 0;
  for (Task t : kAllTasks) {
    std::vector<const VolumeRecord*> tumors, clean;
    for (const auto& v : corpus.volumes()) {
      if (v.task != t) continue;
      (v.tumor_stage > 0 ? tumors : clean).push_back(&v);
    }
    const auto n = round_half_up(static_cast<double>(tumors.size()) * p);
    auto pos = detail::draw(std::move(tumors), n, options.with_replacement, rng);
    auto neg = detail::draw(std::move(clean), pos.size(), false, rng);
    shortfall += pos.size() - neg.size();
    total_positives += pos.size();
    for (const auto* v : pos) chosen.insert(v->volume_id), queries.push_back(v);
    for (const auto* v : neg) chosen.insert(v->volume_id), queries.push_back(v);
  }
  if (total_positives == 0) fail(ErrorKind::sampling, "no tumor volumes to sample");
  if (shortfall > 0) {
    std::vector<const VolumeRecord*> spare;
    for (const auto& v : corpus.volumes()) {
      if (v.tumor_stage == 0 && !chosen.count(v.volume_id)) spare.push_back(&v);
    }
    if (spare.size() < shortfall) {
      fail(ErrorKind::sampling, "only " + std::to_string(spare.size()) + " spare tumor-free volumes for a shortfall of " +
                                    std::to_string(shortfall));
    }
    for (const auto* v : detail::draw(std::move(spare), shortfall, false, rng)) {
      chosen.insert(v->volume_id);
      queries.push_back(v);
    }
  }
  ExperimentPlan plan{SetupMode::organ_agnostic, std::nullopt, p, seed, detail::sorted_ids(queries), {}};
  for (const auto& v : corpus.volumes()) {
    if (!chosen.count(v.volume_id)) plan.database_ids.push_back(v.volume_id);
  }
  std::sort(plan.database_ids.begin(), plan.database_ids.end());
  return plan;
}

struct PlanBalance {
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

inline PlanBalance query_balance(const ExperimentPlan& plan, const Corpus& corpus) {
  PlanBalance b;
  for (const auto& id : plan.query_ids) {
    (relevance_stage(plan, corpus.at(id)) > 0 ? b.positives : b.negatives) += 1;
  }
  return b;
}

/// Throws a consistency error when `plan` does not fit `corpus` or breaks the
/// split invariants (disjoint ids, balanced queries).
inline void check_plan(const ExperimentPlan& plan, const Corpus& corpus) {
  if (is_organ_specific(plan.mode) && !plan.organ) fail(ErrorKind::consistency, "organ-specific plan without organ");
  std::unordered_set<std::string_view> queries;
  for (const auto& id : plan.query_ids) {
    if (!corpus.find(id)) fail(ErrorKind::consistency, "plan query '" + id + "' not in corpus");
    if (!queries.insert(id).second) fail(ErrorKind::consistency, "duplicate query id '" + id + "'");
  }
  std::unordered_set<std::string_view> database;
  for (const auto& id : plan.database_ids) {
    if (!corpus.find(id)) fail(ErrorKind::consistency, "plan database id '" + id + "' not in corpus");
    if (queries.count(id)) fail(ErrorKind::consistency, "volume '" + id + "' is both query and database");
    if (!database.insert(id).second) fail(ErrorKind::consistency, "duplicate database id '" + id + "'");
  }
  const auto balance = query_balance(plan, corpus);
  if (balance.positives != balance.negatives) {
    fail(ErrorKind::consistency, "unbalanced queries: " + std::to_string(balance.positives) + " positive vs " +
                                     std::to_string(balance.negatives) + " negative");
  }
}

struct QueryVolume {
  const VolumeRecord* volume = nullptr;
  /// Slices that take part in slice search; empty keeps all.
  SliceFilter filter;
  int stage = 0;
};

struct MaterializedPlan {
  SliceIndex index;
  std::vector<QueryVolume> queries;  // in plan.query_ids order
};

inline MaterializedPlan materialize(const ExperimentPlan& plan, const Corpus& corpus, const IndexConfig& config) {
  check_plan(plan, corpus);
  std::unordered_set<std::string> database(plan.database_ids.begin(), plan.database_ids.end());
  SliceFilter filter;
  if (plan.mode == SetupMode::organ_specific_seg) {
    const Task organ = *plan.organ;
    filter = [database, organ](const VolumeRecord& v, std::uint32_t i) {
      return v.slice_in_organ(organ, i) && database.count(v.volume_id) > 0;
    };
  } else {
    filter = [database](const VolumeRecord& v, std::uint32_t) { return database.count(v.volume_id) > 0; };
  }
  MaterializedPlan out{SliceIndex::build(corpus, config, filter), {}};
  for (const auto& id : plan.query_ids) {
    const auto& v = corpus.at(id);
    QueryVolume q{&v, {}, relevance_stage(plan, v)};
    if (is_organ_specific(plan.mode)) {
      if (!v.contains_organ(*plan.organ)) {
        fail(ErrorKind::consistency, "query '" + id + "' has no " + std::string(to_string(*plan.organ)) + " slices");
      }
      q.filter = organ_filter(*plan.organ);
    }
    out.queries.push_back(std::move(q));
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON: {mode, organ, p, seed, query_ids, database_ids}

inline nlohmann::json plan_to_json(const ExperimentPlan& plan) {
  nlohmann::json j;
  j["mode"] = std::string(to_string(plan.mode));
  j["organ"] = plan.organ ? nlohmann::json(std::string(to_string(*plan.organ))) : nlohmann::json(nullptr);
  j["p"] = plan.p;
  j["seed"] = plan.seed;
  j["query_ids"] = plan.query_ids;
  j["database_ids"] = plan.database_ids;
  return j;
}

inline ExperimentPlan plan_from_json(const nlohmann::json& j) {
  try {
    ExperimentPlan plan;
    plan.mode = parse_setup(j.at("mode").get<std::string>());
    if (!j.at("organ").is_null()) plan.organ = parse_task(j.at("organ").get<std::string>());
    plan.p = j.at("p").get<double>();
    plan.seed = j.at("seed").get<std::uint64_t>();
    plan.query_ids = j.at("query_ids").get<std::vector<std::string>>();
    plan.database_ids = j.at("database_ids").get<std::vector<std::string>>();
    std::sort(plan.query_ids.begin(), plan.query_ids.end());
    std::sort(plan.database_ids.begin(), plan.database_ids.end());
    return plan;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("plan JSON: ") + e.what());
  }
}

}  // namespace volret
