#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "volret/corpus.hpp"

namespace volret::testing {

inline std::vector<float> random_vector(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<float> v(dim);
  for (auto& x : v) x = static_cast<float>(g(rng));
  return v;
}

/// Random corpus with random labels and organ slice sets; ids are zero-padded
/// so insertion order equals id order unless `shuffle_ids` is set.
inline Corpus random_corpus(std::uint64_t seed, std::size_t volumes, std::size_t min_slices,
                            std::size_t max_slices, std::size_t dim, bool shuffle_ids = false) {
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(volumes);
  for (std::size_t i = 0; i < volumes; ++i) order[i] = i;
  if (shuffle_ids) std::shuffle(order.begin(), order.end(), rng);
  Corpus corpus(dim);
  for (std::size_t i = 0; i < volumes; ++i) {
    VolumeRecord v;
    v.volume_id = fmt::format("vol{:04d}", order[i]);
    v.task = kAllTasks[order[i] % 4];
    v.tumor_stage = static_cast<int>(rng() % 5);
    v.dim = dim;
    const std::size_t n = std::uniform_int_distribution<std::size_t>(min_slices, max_slices)(rng);
    for (std::size_t s = 0; s < n; ++s) {
      auto row = random_vector(rng, dim);
      v.embeddings.insert(v.embeddings.end(), row.begin(), row.end());
      if (rng() % 3 == 0) v.organ_slice_indices.push_back(static_cast<std::uint32_t>(s));
    }
    if (v.organ_slice_indices.empty()) v.organ_slice_indices.push_back(0);
    corpus.add(std::move(v));
  }
  return corpus;
}

/// Fresh per-test scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("volret_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace volret::testing
