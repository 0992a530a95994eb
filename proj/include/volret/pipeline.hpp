#pragma once

// End-to-end experiment sweep: sample -> materialize -> retrieve -> re-rank ->
// evaluate, plus the CSV/JSON/text outputs written by `volret run`.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "volret/ann_index.hpp"
#include "volret/corpus.hpp"
#include "volret/experiments.hpp"
#include "volret/file_io.hpp"
#include "volret/metrics.hpp"
#include "volret/parallel.hpp"
#include "volret/rerank.hpp"
#include "volret/retrieval.hpp"

namespace volret {

struct SweepConfig {
  std::vector<SetupMode> setups{kAllSetups.begin(), kAllSetups.end()};
  std::vector<Task> organs{kAllTasks.begin(), kAllTasks.end()};
  double p = kDefaultSamplingFraction;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  SamplingOptions sampling;
  IndexConfig index;
  std::vector<Method> methods{kAllMethods.begin(), kAllMethods.end()};
  std::size_t slices_per_query = kDefaultSlicesPerQuery;
  std::size_t top_m = kDefaultTopM;
  int rrf_k = kRrfDefaultK;
  /// Aggregation whose top-M list C-MIR re-ranks.
  Method cmir_candidates = Method::count_base;
  /// Build the C-MIR query matrix from the same slices used for slice search
  /// (organ slices in organ-specific setups). Off means every query slice.
  bool cmir_filter_query = true;
  std::size_t workers = 0;

  void validate() const {
    if (seeds.empty()) fail(ErrorKind::invalid_spec, "at least one seed is required");
    if (setups.empty()) fail(ErrorKind::invalid_spec, "at least one setup is required");
    if (methods.empty()) fail(ErrorKind::invalid_spec, "at least one method is required");
    if (slices_per_query == 0 || top_m == 0) fail(ErrorKind::invalid_spec, "slices_per_query and top_m must be positive");
    if (cmir_candidates == Method::cmir || cmir_candidates == Method::rrf) {
      fail(ErrorKind::invalid_spec, "C-MIR candidates must come from an aggregation method");
    }
    index.validate();
  }
};

struct QueryOutcome {
  std::string query_id;
  Task query_task = Task::colon;
  int query_stage = 0;
  std::map<Method, RankedList> lists;
};

struct PlanOutcome {
  ExperimentPlan plan;
  std::vector<QueryOutcome> queries;
};

/// Runs every query of one plan. Results depend only on (plan, corpus, config).
inline PlanOutcome run_plan(const ExperimentPlan& plan, const Corpus& corpus, const SweepConfig& config) {
  const auto mat = materialize(plan, corpus, config.index);
  const std::set<Method> wanted(config.methods.begin(), config.methods.end());
  PlanOutcome out{plan, std::vector<QueryOutcome>(mat.queries.size())};
  for (std::size_t qi = 0; qi < mat.queries.size(); ++qi) {
    const auto& q = mat.queries[qi];
    HitTableOptions opts;
    opts.slices_per_query = config.slices_per_query;
    opts.query_filter = q.filter;
    const auto table = build_hit_table(mat.index, *q.volume, opts);
    std::map<Method, RankedList> lists;
    lists[Method::count_base] = rank_count_base(table, config.top_m);
    lists[Method::max_score] = rank_max_score(table, config.top_m);
    lists[Method::sum_sim] = rank_sum_sim(table, config.top_m);
    if (wanted.count(Method::cmir)) {
      CmirOptions cmir;
      if (config.cmir_filter_query) cmir.query_filter = q.filter;
      cmir.workers = 1;
      lists[Method::cmir] = cmir_rerank(*q.volume, lists.at(config.cmir_candidates), corpus, cmir);
    }
    if (wanted.count(Method::rrf)) {
      auto fused = rrf_fuse(lists.at(Method::count_base), lists.at(Method::max_score), lists.at(Method::sum_sim),
                            config.rrf_k);
      fused.truncate(config.top_m);
      lists[Method::rrf] = std::move(fused);
    }
    auto& qo = out.queries[qi];
    qo.query_id = q.volume->volume_id;
    qo.query_task = q.volume->task;
    qo.query_stage = q.stage;
    for (Method m : config.methods) qo.lists[m] = lists.at(m);
  }
  return out;
}

/// Every plan of the sweep, in (setup, organ, seed) order. Organ-specific
/// setups sharing an organ and seed share the same split.
inline std::vector<ExperimentPlan> sweep_plans(const Corpus& corpus, const SweepConfig& config) {
  std::vector<ExperimentPlan> plans;
  for (SetupMode setup : config.setups) {
    if (is_organ_specific(setup)) {
      for (Task organ : config.organs) {
        for (auto seed : config.seeds) {
          plans.push_back(sample_organ_specific(corpus, organ, config.p, seed, setup, config.sampling));
        }
      }
    } else {
      for (auto seed : config.seeds) plans.push_back(sample_organ_agnostic(corpus, config.p, seed, config.sampling));
    }
  }
  return plans;
}

inline std::vector<PlanOutcome> run_sweep(const std::vector<ExperimentPlan>& plans, const Corpus& corpus,
                                          const SweepConfig& config) {
  config.validate();
  std::vector<PlanOutcome> outcomes(plans.size());
  parallel_for(plans.size(), [&](std::size_t i) { outcomes[i] = run_plan(plans[i], corpus, config); }, config.workers);
  return outcomes;
}

// ---------------------------------------------------------------------------
// Evaluation

/// Reporting group of a query: the probed organ for organ-specific plans, the
/// query's own task for organ-agnostic ones.
inline Task report_group(const ExperimentPlan& plan, const QueryOutcome& q) {
  return plan.organ && is_organ_specific(plan.mode) ? *plan.organ : q.query_task;
}

struct CellKey {
  SetupMode setup;
  Task organ;
  RelevanceTask relevance;
  Method method;

  friend auto operator<=>(const CellKey&, const CellKey&) = default;
};

struct MetricRow {
  CellKey key;
  std::vector<std::uint64_t> seeds;
  std::vector<MetricReport> per_seed;  // query-mean per seed
  MetricReport mean;                   // mean over seeds
};

struct SignificanceRow {
  SetupMode setup;
  Task organ;
  RelevanceTask relevance;
  Method reference;  // best non-C-MIR method by mean AP
  double cmir_ap = 0.0;
  double reference_ap = 0.0;
  WilcoxonResult test;
};

struct ExperimentResults {
  std::vector<MetricRow> rows;
  std::vector<SignificanceRow> significance;

  const MetricRow* find(SetupMode s, Task o, RelevanceTask r, Method m) const {
    for (const auto& row : rows) {
      if (row.key == CellKey{s, o, r, m}) return &row;
    }
    return nullptr;
  }
};

/// Means per (setup, organ, relevance, method) over queries then seeds, plus
/// Wilcoxon tests of per-seed AP for C-MIR against the best other method.
inline ExperimentResults evaluate_experiment(const std::vector<PlanOutcome>& outcomes, const Corpus& corpus,
                                             const std::vector<Method>& methods) {
  // (cell, seed) -> per-query reports
  std::map<CellKey, std::map<std::uint64_t, std::vector<MetricReport>>> acc;
  for (const auto& po : outcomes) {
    for (const auto& q : po.queries) {
      const Task group = report_group(po.plan, q);
      for (Method m : methods) {
        auto it = q.lists.find(m);
        if (it == q.lists.end()) {
          fail(ErrorKind::report, "query '" + q.query_id + "' has no output for method " + std::string(to_string(m)));
        }
        for (RelevanceTask rel : kAllRelevanceTasks) {
          const auto flags = relevance_flags(it->second, [&](const std::string& id) {
            return is_relevant(rel, q.query_stage, relevance_stage(po.plan, corpus.at(id)));
          });
          acc[{po.plan.mode, group, rel, m}][po.plan.seed].push_back(evaluate_relevance(flags));
        }
      }
    }
  }
  ExperimentResults results;
  for (auto& [key, by_seed] : acc) {
    MetricRow row{key, {}, {}, {}};
    for (auto& [seed, reports] : by_seed) {
      row.seeds.push_back(seed);
      row.per_seed.push_back(mean(reports));
    }
    row.mean = mean(row.per_seed);
    results.rows.push_back(std::move(row));
  }

  const bool has_cmir = std::find(methods.begin(), methods.end(), Method::cmir) != methods.end();
  if (!has_cmir) return results;
  std::set<std::tuple<SetupMode, Task, RelevanceTask>> groups;
  for (const auto& row : results.rows) groups.insert({row.key.setup, row.key.organ, row.key.relevance});
  for (const auto& [setup, organ, rel] : groups) {
    const auto* cmir = results.find(setup, organ, rel, Method::cmir);
    const MetricRow* best = nullptr;
    for (Method m : methods) {
      if (m == Method::cmir) continue;
      const auto* row = results.find(setup, organ, rel, m);
      if (row && (!best || row->mean.ap > best->mean.ap)) best = row;
    }
    if (!cmir || !best) continue;
    std::vector<double> a, b;
    for (std::size_t i = 0; i < cmir->per_seed.size(); ++i) {
      a.push_back(cmir->per_seed[i].ap);
      b.push_back(best->per_seed[i].ap);
    }
    results.significance.push_back(
        {setup, organ, rel, best->key.method, cmir->mean.ap, best->mean.ap, wilcoxon_signed_rank_two_sided(a, b)});
  }
  return results;
}

/// Runs and evaluates a list of plans.
inline ExperimentResults evaluate_experiment(const std::vector<ExperimentPlan>& plans, const Corpus& corpus,
                                             const SweepConfig& config) {
  return evaluate_experiment(run_sweep(plans, corpus, config), corpus, config.methods);
}

// ---------------------------------------------------------------------------
// Output

inline std::string plan_file_stem(const ExperimentPlan& plan) {
  return fmt::format("{}_{}_seed{}", to_string(plan.mode), plan.organ ? to_string(*plan.organ) : "all", plan.seed);
}

inline std::string ranked_csv(const PlanOutcome& po) {
  std::string out(kRankedCsvHeader);
  out += '\n';
  for (const auto& q : po.queries) {
    for (const auto& [method, list] : q.lists) append_ranked_csv(out, q.query_id, list);
  }
  return out;
}

inline std::string metrics_csv(const ExperimentResults& r) {
  std::string out = "setup,organ,relevance,method,seeds,p_at_3,p_at_5,p_at_10,ap\n";
  for (const auto& row : r.rows) {
    out += fmt::format("{},{},{},{},{},{:.6f},{:.6f},{:.6f},{:.6f}\n", to_string(row.key.setup),
                       to_string(row.key.organ), to_string(row.key.relevance), to_string(row.key.method),
                       row.seeds.size(), row.mean.p_at_3, row.mean.p_at_5, row.mean.p_at_10, row.mean.ap);
  }
  return out;
}

inline std::string metrics_per_seed_csv(const ExperimentResults& r) {
  std::string out = "setup,organ,relevance,method,seed,p_at_3,p_at_5,p_at_10,ap\n";
  for (const auto& row : r.rows) {
    for (std::size_t i = 0; i < row.seeds.size(); ++i) {
      const auto& m = row.per_seed[i];
      out += fmt::format("{},{},{},{},{},{:.6f},{:.6f},{:.6f},{:.6f}\n", to_string(row.key.setup),
                         to_string(row.key.organ), to_string(row.key.relevance), to_string(row.key.method),
                         row.seeds[i], m.p_at_3, m.p_at_5, m.p_at_10, m.ap);
    }
  }
  return out;
}

inline std::string significance_csv(const ExperimentResults& r) {
  std::string out = "setup,organ,relevance,reference,cmir_ap,reference_ap,cmir_worse,w_statistic,n_used,p_value,degenerate\n";
  for (const auto& s : r.significance) {
    out += fmt::format("{},{},{},{},{:.6f},{:.6f},{},{},{},{:.6f},{}\n", to_string(s.setup), to_string(s.organ),
                       to_string(s.relevance), to_string(s.reference), s.cmir_ap, s.reference_ap,
                       s.cmir_ap < s.reference_ap ? 1 : 0, s.test.statistic, s.test.n_used, s.test.p_value,
                       s.test.degenerate ? 1 : 0);
  }
  return out;
}

/// Aligned text tables: per relevance task and organ, one row per method and
/// one p@3/p@5/p@10/AP column block per setup; then the significance table.
inline std::string results_text(const ExperimentResults& r, const std::vector<Method>& methods) {
  std::set<SetupMode> setups;
  std::set<Task> organs;
  for (const auto& row : r.rows) {
    setups.insert(row.key.setup);
    organs.insert(row.key.organ);
  }
  std::string out;
  for (RelevanceTask rel : kAllRelevanceTasks) {
    out += fmt::format("== tumor {} ==\n", to_string(rel));
    std::string header = fmt::format("{:<10} {:<11}", "organ", "method");
    for (SetupMode s : setups) header += fmt::format(" | {:^31}", to_string(s));
    out += header + "\n";
    std::string sub = fmt::format("{:<10} {:<11}", "", "");
    for (std::size_t i = 0; i < setups.size(); ++i) sub += fmt::format(" | {:>7}{:>8}{:>8}{:>8}", "p@3", "p@5", "p@10", "AP");
    out += sub + "\n";
    for (Task organ : organs) {
      for (Method m : methods) {
        std::string line = fmt::format("{:<10} {:<11}", to_string(organ), to_string(m));
        for (SetupMode s : setups) {
          if (const auto* row = r.find(s, organ, rel, m)) {
            line += fmt::format(" | {:>7.3f}{:>8.3f}{:>8.3f}{:>8.3f}", row->mean.p_at_3, row->mean.p_at_5,
                                row->mean.p_at_10, row->mean.ap);
          } else {
            line += fmt::format(" | {:>31}", "-");
          }
        }
        out += line + "\n";
      }
    }
    out += "\n";
  }
  if (!r.significance.empty()) {
    out += "== Wilcoxon signed-rank (AP, C-MIR vs best other method; * = C-MIR worse on average) ==\n";
    out += fmt::format("{:<10} {:<9} {:<21} {:<12} {:>8}\n", "relevance", "organ", "setup", "reference", "p");
    for (const auto& s : r.significance) {
      out += fmt::format("{:<10} {:<9} {:<21} {:<12} {:>8.3f}\n", to_string(s.relevance), to_string(s.organ),
                         to_string(s.setup),
                         std::string(to_string(s.reference)) + (s.cmir_ap < s.reference_ap ? "*" : ""),
                         s.test.p_value);
    }
  }
  return out;
}

/// Writes plans/, ranked/, metrics.csv, metrics_per_seed.csv,
/// significance.csv and results.txt under `dir`.
inline void write_sweep_outputs(const std::filesystem::path& dir, const std::vector<PlanOutcome>& outcomes,
                                const ExperimentResults& results, const std::vector<Method>& methods) {
  for (const auto& po : outcomes) {
    const auto stem = plan_file_stem(po.plan);
    io::write_atomic(dir / "plans" / (stem + ".json"), plan_to_json(po.plan).dump(2) + "\n");
    io::write_atomic(dir / "ranked" / (stem + ".csv"), ranked_csv(po));
  }
  io::write_atomic(dir / "metrics.csv", metrics_csv(results));
  io::write_atomic(dir / "metrics_per_seed.csv", metrics_per_seed_csv(results));
  io::write_atomic(dir / "significance.csv", significance_csv(results));
  io::write_atomic(dir / "results.txt", results_text(results, methods));
}

}  // namespace volret
