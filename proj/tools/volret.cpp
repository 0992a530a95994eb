// volret: command-line front end.
//
// Exit codes: 0 success, 1 runtime failure, 2 invalid input.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "volret/volret.hpp"

namespace fs = std::filesystem;
using namespace volret;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitInput = 2;

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

Corpus load_corpus(const fs::path& embeddings, const std::string& metadata) {
  return metadata.empty() ? load_embeddings(embeddings) : load_embeddings(embeddings, metadata);
}

void emit(const std::string& text, const std::string& out) {
  if (out.empty() || out == "-") {
    std::cout << text;
  } else {
    io::write_atomic(out, text);
  }
}

struct IndexFlags {
  std::optional<std::size_t> m, ef_construction, ef_search;
  std::optional<std::uint64_t> seed;
  bool exact = false;

  void add_to(CLI::App* app) {
    app->add_option("--m", m, "HNSW max links per node");
    app->add_option("--ef-construction", ef_construction, "HNSW build beam width");
    app->add_option("--ef-search", ef_search, "HNSW query beam width");
    app->add_option("--index-seed", seed, "HNSW level RNG seed");
    app->add_flag("--exact", exact, "brute-force search instead of HNSW");
  }

  void apply(IndexConfig& c) const {
    if (m) c.m = *m;
    if (ef_construction) c.ef_construction = *ef_construction;
    if (ef_search) c.ef_search = *ef_search;
    if (seed) c.seed = *seed;
    if (exact) c.exact = true;
  }
};

// ---------------------------------------------------------------------------

int cmd_ingest(const std::string& embeddings, const std::string& metadata) {
  const Corpus corpus = load_corpus(embeddings, metadata);
  fmt::print("dimension: {}\n", corpus.dimension());
  fmt::print("{:<10} {:>8} {:>8} {:>8}\n", "task", "volumes", "slices", "tumor");
  for (const auto& row : summarize(corpus)) {
    fmt::print("{:<10} {:>8} {:>8} {:>8}\n", row.label, row.volumes, row.slices, row.tumor_volumes);
  }
  return 0;
}

int cmd_synth(const std::string& spec_path, bool benchmark, std::uint64_t seed, const std::string& out,
              const std::string& metadata) {
  SyntheticSpec spec;
  if (!spec_path.empty()) {
    spec = parse_synthetic_spec(io::read_text(spec_path));
  } else if (benchmark) {
    spec = SyntheticSpec::scaled_benchmark();
  } else {
    fail(ErrorKind::invalid_spec, "give --spec or --benchmark");
  }
  const Corpus corpus = generate_synthetic_corpus(spec, seed);
  if (metadata.empty()) {
    write_embeddings(corpus, out);
  } else {
    write_embeddings(corpus, out, metadata);
  }
  fmt::print("wrote {} volumes, {} slices to {}\n", corpus.size(), corpus.total_slices(), out);
  return 0;
}

int cmd_build_index(const std::string& embeddings, const std::string& metadata, const std::string& plan_path,
                    const std::string& organ, const IndexFlags& flags, const std::string& out) {
  const Corpus corpus = load_corpus(embeddings, metadata);
  IndexConfig config;
  flags.apply(config);
  config.validate();
  std::optional<SliceIndex> index;
  if (!plan_path.empty()) {
    const auto plan = plan_from_json(nlohmann::json::parse(io::read_text(plan_path)));
    index.emplace(materialize(plan, corpus, config).index);
  } else {
    index.emplace(SliceIndex::build(corpus, config, organ.empty() ? SliceFilter{} : organ_filter(parse_task(organ))));
  }
  index->save(out);
  fmt::print("indexed {} slices (dimension {}) to {}\n", index->size(), index->dimension(), out);
  return 0;
}

int cmd_run(const std::string& config_path, const std::string& output_dir, const std::string& seeds,
            const std::string& methods, const std::string& setups, const std::string& organs,
            std::optional<double> p, std::optional<std::size_t> workers, const IndexFlags& flags) {
  RunConfig rc = load_run_config(config_path);
  auto& s = rc.sweep;
  if (!output_dir.empty()) rc.output_dir = output_dir;
  if (!seeds.empty()) {
    s.seeds.clear();
    for (const auto& x : split_list(seeds)) s.seeds.push_back(std::stoull(x));
  }
  if (!methods.empty()) {
    s.methods.clear();
    for (const auto& x : split_list(methods)) s.methods.push_back(parse_method(x));
  }
  if (!setups.empty()) {
    s.setups.clear();
    for (const auto& x : split_list(setups)) s.setups.push_back(parse_setup(x));
  }
  if (!organs.empty()) {
    s.organs.clear();
    for (const auto& x : split_list(organs)) s.organs.push_back(parse_task(x));
  }
  if (p) s.p = *p;
  if (workers) s.workers = *workers;
  flags.apply(s.index);
  rc.validate();

  const Corpus corpus = load_embeddings(rc.embeddings, rc.metadata_or_default());
  std::vector<ExperimentPlan> plans;
  try {
    plans = sweep_plans(corpus, s);
  } catch (const Error& e) {
    fmt::print(stderr, "stage sample: {}\n", e.what());
    throw;
  }
  std::vector<PlanOutcome> outcomes;
  try {
    outcomes = run_sweep(plans, corpus, s);
  } catch (const Error& e) {
    fmt::print(stderr, "stage retrieve/rerank: {}\n", e.what());
    throw;
  }
  ExperimentResults results;
  try {
    results = evaluate_experiment(outcomes, corpus, s.methods);
  } catch (const Error& e) {
    fmt::print(stderr, "stage evaluate: {}\n", e.what());
    throw;
  }
  write_sweep_outputs(rc.output_dir, outcomes, results, s.methods);
  io::write_atomic(rc.output_dir / "run_config.json", run_config_json(rc).dump(2) + "\n");
  std::cout << results_text(results, s.methods);
  fmt::print("{} plans written to {}\n", plans.size(), rc.output_dir.string());
  return 0;
}

int cmd_rerank(const std::string& embeddings, const std::string& metadata, const std::string& query,
               const std::string& candidates, const std::string& ranked, const std::string& from_method,
               const std::string& organ, bool with_rrf, std::size_t top_m, const std::string& out) {
  const Corpus corpus = load_corpus(embeddings, metadata);
  CmirOptions opts;
  if (!organ.empty()) opts.query_filter = organ_filter(parse_task(organ));
  std::string csv(kRankedCsvHeader);
  csv += '\n';
  if (!candidates.empty()) {
    if (query.empty()) fail(ErrorKind::input, "--candidates needs --query");
    RankedList list{Method::count_base, {}};
    for (const auto& id : split_list(candidates)) list.entries.push_back({id, 0.0});
    append_ranked_csv(csv, query, cmir_rerank(corpus.at(query), list, corpus, opts));
  } else if (!ranked.empty()) {
    const Method source = parse_method(from_method);
    std::map<std::string, std::map<Method, RankedList>> by_query;
    std::vector<std::string> order;
    for (auto& qr : parse_ranked_csv(io::read_text(ranked))) {
      if (!query.empty() && qr.query_id != query) continue;
      if (!by_query.count(qr.query_id)) order.push_back(qr.query_id);
      by_query[qr.query_id][qr.list.method] = qr.list;
    }
    for (const auto& qid : order) {
      const auto& lists = by_query.at(qid);
      auto it = lists.find(source);
      if (it == lists.end()) {
        fail(ErrorKind::input, "query '" + qid + "' has no " + std::string(to_string(source)) + " list");
      }
      append_ranked_csv(csv, qid, cmir_rerank(corpus.at(qid), it->second, corpus, opts));
      if (with_rrf) {
        for (Method m : {Method::count_base, Method::max_score, Method::sum_sim}) {
          if (!lists.count(m)) fail(ErrorKind::input, "RRF needs a " + std::string(to_string(m)) + " list for '" + qid + "'");
        }
        auto fused = rrf_fuse(lists.at(Method::count_base), lists.at(Method::max_score), lists.at(Method::sum_sim));
        fused.truncate(top_m);
        append_ranked_csv(csv, qid, fused);
      }
    }
  } else {
    fail(ErrorKind::input, "give --candidates or --ranked");
  }
  emit(csv, out);
  return 0;
}

int cmd_evaluate(const std::string& embeddings, const std::string& metadata, const std::string& run_dir,
                 const std::string& methods, const std::string& out_dir) {
  const Corpus corpus = load_corpus(embeddings, metadata);
  const fs::path dir(run_dir);
  if (!fs::is_directory(dir / "plans")) fail(ErrorKind::input, "no plans/ directory under " + run_dir);
  std::vector<fs::path> plan_files;
  for (const auto& entry : fs::directory_iterator(dir / "plans")) {
    if (entry.path().extension() == ".json") plan_files.push_back(entry.path());
  }
  std::sort(plan_files.begin(), plan_files.end());
  std::vector<PlanOutcome> outcomes;
  std::set<Method> seen;
  for (const auto& pf : plan_files) {
    PlanOutcome po{plan_from_json(nlohmann::json::parse(io::read_text(pf))), {}};
    check_plan(po.plan, corpus);
    const auto ranked_path = dir / "ranked" / (pf.stem().string() + ".csv");
    std::map<std::string, std::size_t> slot;
    for (auto& qr : parse_ranked_csv(io::read_text(ranked_path))) {
      auto [it, inserted] = slot.emplace(qr.query_id, po.queries.size());
      if (inserted) {
        const auto& v = corpus.at(qr.query_id);
        po.queries.push_back({qr.query_id, v.task, relevance_stage(po.plan, v), {}});
      }
      seen.insert(qr.list.method);
      po.queries[it->second].lists[qr.list.method] = std::move(qr.list);
    }
    outcomes.push_back(std::move(po));
  }
  std::vector<Method> wanted;
  if (methods.empty()) {
    wanted.assign(seen.begin(), seen.end());
  } else {
    for (const auto& x : split_list(methods)) wanted.push_back(parse_method(x));
  }
  const auto results = evaluate_experiment(outcomes, corpus, wanted);
  const fs::path target = out_dir.empty() ? dir : fs::path(out_dir);
  io::write_atomic(target / "metrics.csv", metrics_csv(results));
  io::write_atomic(target / "metrics_per_seed.csv", metrics_per_seed_csv(results));
  io::write_atomic(target / "significance.csv", significance_csv(results));
  const auto text = results_text(results, wanted);
  io::write_atomic(target / "results.txt", text);
  std::cout << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Content-based 3D volume retrieval from slice embeddings"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "volret 0.1.0");

  std::string embeddings, metadata, out;

  auto* ingest = app.add_subcommand("ingest", "validate an embeddings file and print per-task counts");
  ingest->add_option("embeddings", embeddings, "VEMB file")->required();
  ingest->add_option("--metadata", metadata, "JSON-lines metadata (default: <stem>.meta.jsonl)");

  std::string spec_path;
  bool benchmark = false;
  std::uint64_t seed = 0;
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  synth->add_option("--spec", spec_path, "synthetic corpus spec (JSON)");
  synth->add_flag("--benchmark", benchmark, "use the built-in 120-volume benchmark-shaped spec");
  synth->add_option("--seed", seed, "generator seed");
  synth->add_option("--out,-o", out, "output VEMB path")->required();
  synth->add_option("--metadata", metadata, "output metadata path (default: <stem>.meta.jsonl)");

  std::string plan_path, organ;
  IndexFlags index_flags;
  auto* build = app.add_subcommand("build-index", "build and save a slice index");
  build->add_option("embeddings", embeddings, "VEMB file")->required();
  build->add_option("--metadata", metadata, "metadata path");
  build->add_option("--plan", plan_path, "index the database of this plan (JSON)");
  build->add_option("--organ", organ, "index only slices of this organ");
  build->add_option("--out,-o", out, "output index path")->required();
  index_flags.add_to(build);

  std::string config_path, output_dir, seeds, methods, setups, organs;
  std::optional<double> p;
  std::optional<std::size_t> workers;
  auto* run = app.add_subcommand("run", "run a full experiment sweep");
  run->add_option("config", config_path, "run configuration (JSON)")->required();
  run->add_option("--output-dir", output_dir, "override output directory");
  run->add_option("--seeds", seeds, "comma-separated seeds");
  run->add_option("--methods", methods, "comma-separated methods");
  run->add_option("--setups", setups, "comma-separated setup modes");
  run->add_option("--organs", organs, "comma-separated organs");
  run->add_option("--p", p, "query sampling fraction");
  run->add_option("--workers", workers, "worker threads (also capped by VOLRET_WORKERS)");
  index_flags.add_to(run);

  std::string query, candidates, ranked, from_method = "count_base";
  bool with_rrf = false;
  std::size_t top_m = kDefaultTopM;
  auto* rerank = app.add_subcommand("rerank", "re-rank candidate volumes with C-MIR (and RRF)");
  rerank->add_option("embeddings", embeddings, "VEMB file")->required();
  rerank->add_option("--metadata", metadata, "metadata path");
  rerank->add_option("--query", query, "query volume id");
  rerank->add_option("--candidates", candidates, "comma-separated candidate volume ids");
  rerank->add_option("--ranked", ranked, "ranked-list CSV to re-rank");
  rerank->add_option("--from", from_method, "method whose lists are re-ranked");
  rerank->add_option("--organ", organ, "use only this organ's query slices");
  rerank->add_flag("--rrf", with_rrf, "also emit RRF of the three aggregation lists");
  rerank->add_option("--top-m", top_m, "RRF output length");
  rerank->add_option("--out,-o", out, "output CSV (default: stdout)");

  std::string run_dir;
  auto* evaluate = app.add_subcommand("evaluate", "recompute metric tables from plans and ranked lists");
  evaluate->add_option("embeddings", embeddings, "VEMB file")->required();
  evaluate->add_option("--metadata", metadata, "metadata path");
  evaluate->add_option("--run-dir", run_dir, "directory holding plans/ and ranked/")->required();
  evaluate->add_option("--methods", methods, "comma-separated methods (default: all found)");
  evaluate->add_option("--out-dir", output_dir, "where to write tables (default: run dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitInput;
  }

  try {
    if (*ingest) return cmd_ingest(embeddings, metadata);
    if (*synth) return cmd_synth(spec_path, benchmark, seed, out, metadata);
    if (*build) return cmd_build_index(embeddings, metadata, plan_path, organ, index_flags, out);
    if (*run) return cmd_run(config_path, output_dir, seeds, methods, setups, organs, p, workers, index_flags);
    if (*rerank) return cmd_rerank(embeddings, metadata, query, candidates, ranked, from_method, organ, with_rrf, top_m, out);
    if (*evaluate) return cmd_evaluate(embeddings, metadata, run_dir, methods, output_dir);
  } catch (const Error& e) {
    fmt::print(stderr, "volret: {}\n", e.what());
    return e.is_input_error() ? kExitInput : kExitRuntime;
  } catch (const nlohmann::json::exception& e) {
    fmt::print(stderr, "volret: format error: {}\n", e.what());
    return kExitInput;
  } catch (const std::invalid_argument& e) {
    fmt::print(stderr, "volret: input error: {}\n", e.what());
    return kExitInput;
  } catch (const std::exception& e) {
    fmt::print(stderr, "volret: {}\n", e.what());
    return kExitRuntime;
  }
  return kExitRuntime;
}
