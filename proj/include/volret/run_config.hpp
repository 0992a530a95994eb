#pragma once

// Declarative run file for `volret run`:
//
//   {
//     "embeddings": "corpus.vemb", "metadata": "corpus.meta.jsonl", "output_dir": "out",
//     "index": {"m": 32, "ef_construction": 200, "ef_search": 128, "exact": false, "seed": 42},
//     "experiment": {"setups": [...], "organs": [...], "p": 0.25, "seeds": [0, 1], "with_replacement": false},
//     "methods": ["count_base", "max_score", "sum_sim", "cmir", "rrf"],
//     "slices_per_query": 20, "top_m": 20, "rrf_k": 60,
//     "cmir_candidates": "count_base", "cmir_filter_query": true, "workers": 0
//   }
//
// Every key is optional except "embeddings". Relative paths resolve against
// the run file's directory.

#include <filesystem>
#include <string>

#include <json.hpp>

#include "volret/pipeline.hpp"

namespace volret {

struct RunConfig {
  std::filesystem::path embeddings;
  std::filesystem::path metadata;  // empty: sidecar next to embeddings
  std::filesystem::path output_dir = "volret_out";
  SweepConfig sweep;

  std::filesystem::path metadata_or_default() const {
    return metadata.empty() ? metadata_path_for(embeddings) : metadata;
  }

  void validate() const {
    if (embeddings.empty()) fail(ErrorKind::invalid_spec, "run config needs \"embeddings\"");
    if (!std::filesystem::exists(embeddings)) fail(ErrorKind::invalid_spec, "embeddings file not found: " + embeddings.string());
    if (!std::filesystem::exists(metadata_or_default())) {
      fail(ErrorKind::consistency, "metadata file not found: " + metadata_or_default().string());
    }
    sweep.validate();
  }
};

namespace detail {

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) out = it->get<T>();
}

}  // namespace detail

inline nlohmann::json index_config_json(const IndexConfig& c) {
  return {{"m", c.m}, {"ef_construction", c.ef_construction}, {"ef_search", c.ef_search}, {"exact", c.exact},
          {"seed", c.seed}};
}

inline IndexConfig index_config_from_json(const nlohmann::json& j, IndexConfig c = {}) {
  detail::read_opt(j, "m", c.m);
  detail::read_opt(j, "ef_construction", c.ef_construction);
  detail::read_opt(j, "ef_search", c.ef_search);
  detail::read_opt(j, "exact", c.exact);
  detail::read_opt(j, "seed", c.seed);
  return c;
}

inline RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base = {}) {
  RunConfig rc;
  auto& s = rc.sweep;
  try {
    auto path_of = [&](const char* key, std::filesystem::path& out) {
      std::string value;
      detail::read_opt(j, key, value);
      if (value.empty()) return;
      std::filesystem::path p(value);
      out = p.is_relative() && !base.empty() ? base / p : p;
    };
    path_of("embeddings", rc.embeddings);
    path_of("metadata", rc.metadata);
    path_of("output_dir", rc.output_dir);
    if (auto it = j.find("index"); it != j.end()) s.index = index_config_from_json(*it);
    if (auto it = j.find("experiment"); it != j.end()) {
      const auto& e = *it;
      if (auto sit = e.find("setups"); sit != e.end()) {
        s.setups.clear();
        for (const auto& name : *sit) s.setups.push_back(parse_setup(name.get<std::string>()));
      }
      if (auto oit = e.find("organs"); oit != e.end()) {
        s.organs.clear();
        for (const auto& name : *oit) s.organs.push_back(parse_task(name.get<std::string>()));
      }
      detail::read_opt(e, "p", s.p);
      detail::read_opt(e, "seeds", s.seeds);
      detail::read_opt(e, "with_replacement", s.sampling.with_replacement);
    }
    if (auto it = j.find("methods"); it != j.end()) {
      s.methods.clear();
      for (const auto& name : *it) s.methods.push_back(parse_method(name.get<std::string>()));
    }
    detail::read_opt(j, "slices_per_query", s.slices_per_query);
    detail::read_opt(j, "top_m", s.top_m);
    detail::read_opt(j, "rrf_k", s.rrf_k);
    if (auto it = j.find("cmir_candidates"); it != j.end()) s.cmir_candidates = parse_method(it->get<std::string>());
    detail::read_opt(j, "cmir_filter_query", s.cmir_filter_query);
    detail::read_opt(j, "workers", s.workers);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::invalid_spec, std::string("run config: ") + e.what());
  }
  return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  const auto text = io::read_text(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::invalid_spec, path.string() + ": " + e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

inline nlohmann::json run_config_json(const RunConfig& rc) {
  const auto& s = rc.sweep;
  nlohmann::json j;
  j["embeddings"] = rc.embeddings.string();
  j["metadata"] = rc.metadata_or_default().string();
  j["output_dir"] = rc.output_dir.string();
  j["index"] = index_config_json(s.index);
  nlohmann::json e;
  e["setups"] = nlohmann::json::array();
  for (auto m : s.setups) e["setups"].push_back(std::string(to_string(m)));
  e["organs"] = nlohmann::json::array();
  for (auto o : s.organs) e["organs"].push_back(std::string(to_string(o)));
  e["p"] = s.p;
  e["seeds"] = s.seeds;
  e["with_replacement"] = s.sampling.with_replacement;
  j["experiment"] = e;
  j["methods"] = nlohmann::json::array();
  for (auto m : s.methods) j["methods"].push_back(std::string(to_string(m)));
  j["slices_per_query"] = s.slices_per_query;
  j["top_m"] = s.top_m;
  j["rrf_k"] = s.rrf_k;
  j["cmir_candidates"] = std::string(to_string(s.cmir_candidates));
  j["cmir_filter_query"] = s.cmir_filter_query;
  j["workers"] = s.workers;
  return j;
}

}  // namespace volret
