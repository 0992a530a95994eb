// Generates a small synthetic corpus, runs one organ-specific plan and prints
// the top candidates of the first query under every method.

#include <iostream>

#include <fmt/format.h>

#include "volret/volret.hpp"

int main() {
  using namespace volret;
  const Corpus corpus = generate_synthetic_corpus(SyntheticSpec::scaled_benchmark(), 7);
  const auto plan = sample_organ_specific(corpus, Task::liver, 0.25, 0);

  SweepConfig config;
  config.index.exact = true;
  const auto outcome = run_plan(plan, corpus, config);

  const auto& q = outcome.queries.front();
  fmt::print("query {} (stage {}), database {} volumes\n", q.query_id, q.query_stage, plan.database_ids.size());
  for (const auto& [method, list] : q.lists) {
    fmt::print("{:<11}", to_string(method));
    for (std::size_t i = 0; i < std::min<std::size_t>(5, list.size()); ++i) {
      const auto& v = corpus.at(list.entries[i].volume_id);
      fmt::print(" {}(s{})", v.volume_id, relevance_stage(plan, v));
    }
    fmt::print("\n");
  }
  return 0;
}
