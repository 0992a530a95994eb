#pragma once

// Seeded synthetic corpora standing in for real slice embeddings.
//
// Latent structure: one "healthy" center per organ, one tumor center per
// (organ, stage) placed near its organ center, and a ring of background
// centers indexed by axial position. Every volume lays its present organs out
// in anatomical order along the slice axis with background slices in between;
// tumor volumes draw a contiguous block of their task-organ slices from the
// stage-specific tumor center.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "volret/corpus.hpp"

namespace volret {

struct SyntheticTask {
  Task task = Task::colon;
  std::size_t volumes = 0;
  /// Relative frequency of stages 0..4; converted to exact per-stage counts.
  std::array<double, kMaxTumorStage + 1> stage_weights{0.2, 0.2, 0.2, 0.2, 0.2};
};

struct SyntheticSpec {
  std::size_t dimension = 32;
  std::size_t min_slices = 10;
  std::size_t max_slices = 20;
  /// Expected norm of the Gaussian perturbation added to a center (per-coordinate
  /// standard deviation noise_sigma / sqrt(dimension)).
  double noise_sigma = 0.1;
  std::size_t background_centers = 8;
  /// Distance scale between an organ center and its tumor centers.
  double tumor_shift = 0.8;
  /// Probability that an organ other than the task organ appears in a volume.
  double organ_presence = 0.6;
  double organ_min_fraction = 0.15;
  double organ_max_fraction = 0.35;
  /// Fraction of task-organ slices replaced by tumor slices in tumor volumes.
  double tumor_fraction = 0.5;
  std::vector<SyntheticTask> tasks;

  void validate() const {
    auto bad = [](const std::string& why) { fail(ErrorKind::invalid_spec, why); };
    if (dimension == 0) bad("dimension must be positive");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) bad("noise_sigma must be >= 0");
    if (min_slices == 0 || max_slices < min_slices) bad("slice range must satisfy 0 < min <= max");
    if (background_centers == 0) bad("background_centers must be positive");
    if (!(tumor_shift >= 0.0)) bad("tumor_shift must be >= 0");
    if (!(organ_presence >= 0.0 && organ_presence <= 1.0)) bad("organ_presence must be in [0,1]");
    if (!(organ_min_fraction > 0.0 && organ_min_fraction <= organ_max_fraction &&
          organ_max_fraction <= 1.0)) {
      bad("organ fractions must satisfy 0 < min <= max <= 1");
    }
    if (!(tumor_fraction > 0.0 && tumor_fraction <= 1.0)) bad("tumor_fraction must be in (0,1]");
    if (tasks.empty()) bad("at least one task is required");
    for (const auto& t : tasks) {
      double total = 0.0;
      for (double w : t.stage_weights) {
        if (!(w >= 0.0)) bad("stage weights must be non-negative");
        total += w;
      }
      if (t.volumes > 0 && !(total > 0.0)) bad("stage weights must not all be zero");
    }
  }

  /// One fifth of the benchmark's per-task volume counts (120 volumes). A quarter
  /// of each non-lung task is tumor-free; lung volumes are all tumor cases.
  static SyntheticSpec scaled_benchmark() {
    SyntheticSpec spec;
    constexpr std::array<double, kMaxTumorStage + 1> mixed{0.25, 0.1875, 0.1875, 0.1875, 0.1875};
    spec.tasks = {{Task::colon, 25, mixed},
                  {Task::liver, 26, mixed},
                  {Task::lung, 13, {0.0, 0.25, 0.25, 0.25, 0.25}},
                  {Task::pancreas, 56, mixed}};
    return spec;
  }
};

inline void to_json(nlohmann::json& j, const SyntheticSpec& s) {
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& t : s.tasks) {
    tasks.push_back({{"task", std::string(to_string(t.task))},
                     {"volumes", t.volumes},
                     {"stage_weights", t.stage_weights}});
  }
  j = {{"dimension", s.dimension},
       {"min_slices", s.min_slices},
       {"max_slices", s.max_slices},
       {"noise_sigma", s.noise_sigma},
       {"background_centers", s.background_centers},
       {"tumor_shift", s.tumor_shift},
       {"organ_presence", s.organ_presence},
       {"organ_min_fraction", s.organ_min_fraction},
       {"organ_max_fraction", s.organ_max_fraction},
       {"tumor_fraction", s.tumor_fraction},
       {"tasks", tasks}};
}

inline void from_json(const nlohmann::json& j, SyntheticSpec& s) {
  s = SyntheticSpec{};
  s.dimension = j.value("dimension", s.dimension);
  s.min_slices = j.value("min_slices", s.min_slices);
  s.max_slices = j.value("max_slices", s.max_slices);
  s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
  s.background_centers = j.value("background_centers", s.background_centers);
  s.tumor_shift = j.value("tumor_shift", s.tumor_shift);
  s.organ_presence = j.value("organ_presence", s.organ_presence);
  s.organ_min_fraction = j.value("organ_min_fraction", s.organ_min_fraction);
  s.organ_max_fraction = j.value("organ_max_fraction", s.organ_max_fraction);
  s.tumor_fraction = j.value("tumor_fraction", s.tumor_fraction);
  for (const auto& t : j.at("tasks")) {
    SyntheticTask task;
    task.task = parse_task(t.at("task").get<std::string>());
    task.volumes = t.at("volumes").get<std::size_t>();
    if (t.contains("stage_weights")) {
      task.stage_weights = t.at("stage_weights").get<std::array<double, kMaxTumorStage + 1>>();
    }
    s.tasks.push_back(task);
  }
}

inline SyntheticSpec parse_synthetic_spec(const std::string& text) {
  try {
    return nlohmann::json::parse(text).get<SyntheticSpec>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::invalid_spec, e.what());
  }
}

namespace detail {

/// Largest-remainder apportionment of `total` items over `weights`.
template <std::size_t N>
std::array<std::size_t, N> apportion(std::size_t total, const std::array<double, N>& weights) {
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::array<std::size_t, N> counts{};
  std::array<double, N> remainder{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < N; ++i) {
    const double exact = sum > 0.0 ? static_cast<double>(total) * weights[i] / sum : 0.0;
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    remainder[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  std::array<std::size_t, N> order{};
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++counts[order[i % N]];
  return counts;
}

class CenterBank {
 public:
  CenterBank(const SyntheticSpec& spec, std::mt19937_64& rng) : dim_(spec.dimension) {
    for (std::size_t i = 0; i < kAllTasks.size(); ++i) organ_.push_back(random_unit(rng));
    for (std::size_t o = 0; o < kAllTasks.size(); ++o) {
      for (int s = 1; s <= kMaxTumorStage; ++s) {
        auto dir = random_unit(rng);
        std::vector<float> c(dim_);
        for (std::size_t d = 0; d < dim_; ++d) {
          c[d] = static_cast<float>(organ_[o][d] + spec.tumor_shift * dir[d]);
        }
        normalize_in_place(c);
        tumor_.push_back(std::move(c));
      }
    }
    for (std::size_t b = 0; b < spec.background_centers; ++b) background_.push_back(random_unit(rng));
  }

  const std::vector<float>& organ(Task t) const { return organ_[static_cast<std::size_t>(t)]; }
  const std::vector<float>& tumor(Task t, int stage) const {
    return tumor_[static_cast<std::size_t>(t) * kMaxTumorStage + static_cast<std::size_t>(stage - 1)];
  }
  const std::vector<float>& background(std::size_t i) const { return background_[i]; }

 private:
  std::vector<float> random_unit(std::mt19937_64& rng) const {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<float> v(dim_);
    for (;;) {
      for (auto& x : v) x = static_cast<float>(gauss(rng));
      if (normalize_in_place(v)) return v;
    }
  }

  std::size_t dim_;
  std::vector<std::vector<float>> organ_;
  std::vector<std::vector<float>> tumor_;
  std::vector<std::vector<float>> background_;
};

}  // namespace detail

/// Pure function of (spec, seed).
inline Corpus generate_synthetic_corpus(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  const detail::CenterBank centers(spec, rng);
  const std::size_t dim = spec.dimension;
  const double coord_sigma = spec.noise_sigma / std::sqrt(static_cast<double>(dim));
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Anatomical order along the slice axis (head to feet).
  constexpr std::array<Task, 4> kAxialOrder = {Task::lung, Task::liver, Task::pancreas, Task::colon};

  Corpus corpus(dim);
  for (const auto& task_spec : spec.tasks) {
    const auto stage_counts = detail::apportion(task_spec.volumes, task_spec.stage_weights);
    std::vector<int> stages;
    for (int s = 0; s <= kMaxTumorStage; ++s) stages.insert(stages.end(), stage_counts[s], s);
    std::shuffle(stages.begin(), stages.end(), rng);

    for (std::size_t vi = 0; vi < task_spec.volumes; ++vi) {
      VolumeRecord vol;
      vol.volume_id = fmt::format("{}_{:03d}", to_string(task_spec.task), vi);
      vol.task = task_spec.task;
      vol.tumor_stage = stages[vi];
      vol.dim = dim;
      const std::size_t n =
          std::uniform_int_distribution<std::size_t>(spec.min_slices, spec.max_slices)(rng);

      std::vector<Task> present;
      std::vector<std::size_t> lengths;
      for (Task organ : kAxialOrder) {
        const bool keep = organ == task_spec.task || unit(rng) < spec.organ_presence;
        if (!keep) continue;
        const double frac =
            spec.organ_min_fraction + (spec.organ_max_fraction - spec.organ_min_fraction) * unit(rng);
        present.push_back(organ);
        lengths.push_back(std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(frac * n))));
      }
      // Shrink the longest organ ranges until everything fits.
      while (std::accumulate(lengths.begin(), lengths.end(), std::size_t{0}) > n) {
        auto it = std::max_element(lengths.begin(), lengths.end());
        if (*it <= 1) break;
        --*it;
      }
      std::size_t spare = n - std::min(n, std::accumulate(lengths.begin(), lengths.end(), std::size_t{0}));
      std::vector<std::size_t> gaps(present.size() + 1, 0);
      std::uniform_int_distribution<std::size_t> pick_gap(0, gaps.size() - 1);
      for (; spare > 0; --spare) ++gaps[pick_gap(rng)];

      // Slice kind: -1 background, otherwise index into `present`.
      std::vector<int> kind;
      kind.reserve(n);
      for (std::size_t g = 0; g < present.size(); ++g) {
        kind.insert(kind.end(), gaps[g], -1);
        kind.insert(kind.end(), lengths[g], static_cast<int>(g));
      }
      kind.insert(kind.end(), gaps.back(), -1);
      kind.resize(n, -1);

      // Tumor block inside the task organ's range.
      std::size_t tumor_begin = 0, tumor_end = 0;
      if (vol.tumor_stage > 0) {
        std::size_t first = n, count = 0;
        for (std::size_t i = 0; i < n; ++i) {
          if (kind[i] >= 0 && present[static_cast<std::size_t>(kind[i])] == task_spec.task) {
            first = std::min(first, i);
            ++count;
          }
        }
        const std::size_t len = std::clamp<std::size_t>(
            static_cast<std::size_t>(std::lround(spec.tumor_fraction * static_cast<double>(count))), 1, count);
        const std::size_t offset = std::uniform_int_distribution<std::size_t>(0, count - len)(rng);
        tumor_begin = first + offset;
        tumor_end = tumor_begin + len;
      }

      vol.embeddings.resize(n * dim);
      for (std::size_t i = 0; i < n; ++i) {
        const std::vector<float>* center = nullptr;
        if (kind[i] < 0) {
          const auto b = std::min(spec.background_centers - 1, i * spec.background_centers / n);
          center = &centers.background(b);
        } else {
          const Task organ = present[static_cast<std::size_t>(kind[i])];
          const auto idx = static_cast<std::uint32_t>(i);
          if (organ == task_spec.task) {
            vol.organ_slice_indices.push_back(idx);
          } else {
            vol.other_organ_slices[organ].push_back(idx);
          }
          const bool tumor = organ == task_spec.task && i >= tumor_begin && i < tumor_end;
          center = tumor ? &centers.tumor(organ, vol.tumor_stage) : &centers.organ(organ);
        }
        auto row = vol.slice(i);
        for (std::size_t d = 0; d < dim; ++d) {
          const double jitter = coord_sigma > 0.0 ? coord_sigma * noise(rng) : 0.0;
          row[d] = static_cast<float>((*center)[d] + jitter);
        }
      }
      corpus.add(std::move(vol));
    }
  }
  return corpus;
}

}  // namespace volret
