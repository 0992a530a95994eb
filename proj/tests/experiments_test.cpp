#include <set>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "volret/experiments.hpp"
#include "volret/synthetic.hpp"

using namespace volret;
using volret::testing::random_vector;

namespace {

/// Per task: `per_stage` volumes for each stage 1-4 plus `negatives` stage-0
/// volumes. Every volume holds slices of all four organs.
Corpus toy_corpus(std::size_t per_stage, std::size_t negatives, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  Corpus c(8);
  for (Task t : kAllTasks) {
    std::vector<int> stages;
    for (int s = 1; s <= 4; ++s) stages.insert(stages.end(), per_stage, s);
    stages.insert(stages.end(), negatives, 0);
    for (std::size_t i = 0; i < stages.size(); ++i) {
      VolumeRecord v;
      v.volume_id = fmt::format("{}_{:02d}", to_string(t), i);
      v.task = t;
      v.tumor_stage = stages[i];
      v.dim = 8;
      for (int s = 0; s < 8; ++s) {
        auto r = random_vector(rng, 8);
        v.embeddings.insert(v.embeddings.end(), r.begin(), r.end());
      }
      for (Task o : kAllTasks) {
        const auto base = static_cast<std::uint32_t>(2 * static_cast<int>(o));
        if (o == t) {
          v.organ_slice_indices = {base, base + 1};
        } else {
          v.other_organ_slices[o] = {base, base + 1};
        }
      }
      c.add(std::move(v));
    }
  }
  return c;
}

void expect_invariants(const ExperimentPlan& plan, const Corpus& c) {
  EXPECT_NO_THROW(check_plan(plan, c));
  std::set<std::string> q(plan.query_ids.begin(), plan.query_ids.end());
  for (const auto& id : plan.database_ids) EXPECT_EQ(q.count(id), 0u);
  const auto b = query_balance(plan, c);
  EXPECT_EQ(b.positives, b.negatives);
  EXPECT_GT(b.positives, 0u);
  EXPECT_TRUE(std::is_sorted(plan.query_ids.begin(), plan.query_ids.end()));
}

IndexConfig exact_config() {
  IndexConfig c;
  c.exact = true;
  return c;
}

}  // namespace

TEST(OrganSpecific, OnePerStagePlusMatchedNegatives) {
  const Corpus c = toy_corpus(4, 2);
  const auto plan = sample_organ_specific(c, Task::lung, 0.25, 0);
  expect_invariants(plan, c);
  std::map<int, int> per_stage;
  std::size_t negatives = 0;
  for (const auto& id : plan.query_ids) {
    const auto& v = c.at(id);
    if (v.task == Task::lung && v.tumor_stage > 0) {
      ++per_stage[v.tumor_stage];
    } else {
      EXPECT_NE(v.task, Task::lung) << "negatives come from other tasks";
      EXPECT_TRUE(v.contains_organ(Task::lung));
      ++negatives;
    }
  }
  EXPECT_EQ(per_stage, (std::map<int, int>{{1, 1}, {2, 1}, {3, 1}, {4, 1}}));
  EXPECT_EQ(negatives, 4u);
  EXPECT_EQ(plan.query_ids.size() + plan.database_ids.size(), c.size());
}

TEST(OrganSpecific, FullFractionTakesEveryTumorVolume) {
  const Corpus c = toy_corpus(4, 2);
  const auto plan = sample_organ_specific(c, Task::colon, 1.0, 3);
  expect_invariants(plan, c);
  const std::set<std::string> q(plan.query_ids.begin(), plan.query_ids.end());
  for (const auto& v : c.volumes()) {
    if (v.task == Task::colon && v.tumor_stage > 0) EXPECT_EQ(q.count(v.volume_id), 1u) << v.volume_id;
  }
  for (const auto& id : plan.database_ids) EXPECT_EQ(q.count(id), 0u);
  EXPECT_EQ(plan.query_ids.size() + plan.database_ids.size(), c.size());
}

TEST(OrganSpecific, DatabaseOnlyHoldsVolumesWithTheOrgan) {
  Corpus c = toy_corpus(2, 1);
  // A colon volume without lung slices.
  VolumeRecord v = c.at("colon_00");
  v.volume_id = "colon_nolung";
  v.other_organ_slices.erase(Task::lung);
  c.add(v);
  const auto plan = sample_organ_specific(c, Task::lung, 0.5, 1);
  EXPECT_EQ(std::count(plan.database_ids.begin(), plan.database_ids.end(), "colon_nolung"), 0);
  EXPECT_EQ(std::count(plan.query_ids.begin(), plan.query_ids.end(), "colon_nolung"), 0);
}

TEST(OrganSpecific, InsufficientNegativesIsSamplingError) {
  Corpus c(4);
  for (int s = 1; s <= 4; ++s) {
    c.add({fmt::format("lung_{}", s), Task::lung, s, 4, {0}, {}, {1, 0, 0, 0}});
  }
  try {
    sample_organ_specific(c, Task::lung, 1.0, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::sampling);
  }
  EXPECT_THROW(sample_organ_specific(c, Task::lung, 0.0, 0), Error);
  EXPECT_THROW(sample_organ_specific(c, Task::lung, 1.5, 0), Error);
}

TEST(OrganSpecific, ScaledCorpusTenSeeds) {
  const Corpus c = generate_synthetic_corpus(SyntheticSpec::scaled_benchmark(), 0);
  for (Task organ : kAllTasks) {
    std::set<std::vector<std::string>> distinct;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto plan = sample_organ_specific(c, organ, 0.25, seed);
      expect_invariants(plan, c);
      distinct.insert(plan.query_ids);
      EXPECT_EQ(plan, sample_organ_specific(c, organ, 0.25, seed));
    }
    EXPECT_GE(distinct.size(), organ == Task::lung ? 2u : 5u) << to_string(organ);
  }
}

TEST(OrganSpecific, WithReplacementDrawsStayValid) {
  const Corpus c = generate_synthetic_corpus(SyntheticSpec::scaled_benchmark(), 1);
  SamplingOptions opts;
  opts.with_replacement = true;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    expect_invariants(sample_organ_specific(c, Task::pancreas, 0.25, seed, SetupMode::organ_specific_seg, opts), c);
  }
}

TEST(OrganAgnostic, FourTasksFourPositives) {
  const Corpus c = toy_corpus(1, 2);
  const auto plan = sample_organ_agnostic(c, 0.25, 0);
  expect_invariants(plan, c);
  const auto b = query_balance(plan, c);
  EXPECT_EQ(b.positives, 4u);
  EXPECT_EQ(b.negatives, 4u);
  EXPECT_FALSE(plan.organ.has_value());
  EXPECT_EQ(plan.query_ids.size() + plan.database_ids.size(), c.size());
  EXPECT_EQ(plan, sample_organ_agnostic(c, 0.25, 0));
}

TEST(OrganAgnostic, ScaledCorpusRatio) {
  const Corpus c = generate_synthetic_corpus(SyntheticSpec::scaled_benchmark(), 0);
  const double expected_queries = 244.0 / 601.0 * static_cast<double>(c.size());
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto plan = sample_organ_agnostic(c, 0.25, seed);
    expect_invariants(plan, c);
    EXPECT_NEAR(static_cast<double>(plan.query_ids.size()), expected_queries, 2.0);
    EXPECT_NEAR(static_cast<double>(plan.database_ids.size()), static_cast<double>(c.size()) - expected_queries, 2.0);
  }
}

TEST(Materialize, SegIndexIsSubsetOfNoseg) {
  const Corpus c = generate_synthetic_corpus(SyntheticSpec::scaled_benchmark(), 2);
  for (Task organ : kAllTasks) {
    auto plan = sample_organ_specific(c, organ, 0.25, 4);
    const auto seg = materialize(plan, c, exact_config());
    plan.mode = SetupMode::organ_specific_noseg;
    const auto noseg = materialize(plan, c, exact_config());
    std::size_t organ_slices = 0, all_slices = 0;
    for (const auto& id : plan.database_ids) {
      organ_slices += c.at(id).organ_slices(organ).size();
      all_slices += c.at(id).num_slices();
    }
    EXPECT_EQ(seg.index.size(), organ_slices);
    EXPECT_EQ(noseg.index.size(), all_slices);
    const auto noseg_keys = noseg.index.keys();
    const std::set<SliceKey> all(noseg_keys.begin(), noseg_keys.end());
    for (const auto& k : seg.index.keys()) EXPECT_EQ(all.count(k), 1u);
    const double ratio = static_cast<double>(noseg.index.size()) / static_cast<double>(seg.index.size());
    EXPECT_GE(ratio, 1.5);
    EXPECT_LE(ratio, 16.0);
    ASSERT_EQ(seg.queries.size(), plan.query_ids.size());
    for (const auto& q : seg.queries) {
      ASSERT_TRUE(static_cast<bool>(q.filter));
      EXPECT_EQ(q.stage, q.volume->stage_for(organ));
    }
  }
}

TEST(Materialize, AgnosticIndexSpansAllTasks) {
  const Corpus c = generate_synthetic_corpus(SyntheticSpec::scaled_benchmark(), 3);
  const auto plan = sample_organ_agnostic(c, 0.25, 1);
  const auto m = materialize(plan, c, exact_config());
  std::set<Task> tasks;
  for (const auto& k : m.index.keys()) tasks.insert(c.at(k.volume_id).task);
  EXPECT_EQ(tasks.size(), 4u);
  std::size_t all = 0;
  for (const auto& id : plan.database_ids) all += c.at(id).num_slices();
  EXPECT_EQ(m.index.size(), all);
  for (const auto& q : m.queries) {
    EXPECT_FALSE(static_cast<bool>(q.filter));
    EXPECT_EQ(q.stage, q.volume->tumor_stage);
  }
}

TEST(Materialize, MismatchedPlanIsConsistencyError) {
  const Corpus c = toy_corpus(2, 1);
  auto plan = sample_organ_specific(c, Task::liver, 0.5, 0);
  plan.database_ids.push_back("not_there");
  EXPECT_THROW(materialize(plan, c, exact_config()), Error);
  plan = sample_organ_specific(c, Task::liver, 0.5, 0);
  plan.database_ids.push_back(plan.query_ids.front());
  try {
    materialize(plan, c, exact_config());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::consistency);
  }
}

TEST(PlanJson, RoundTrip) {
  const Corpus c = toy_corpus(2, 4);
  for (const auto& plan : {sample_organ_specific(c, Task::liver, 0.5, 9), sample_organ_agnostic(c, 0.5, 9)}) {
    const auto j = plan_to_json(plan);
    EXPECT_EQ(plan_from_json(nlohmann::json::parse(j.dump())), plan);
    for (const char* key : {"mode", "organ", "p", "seed", "query_ids", "database_ids"}) EXPECT_TRUE(j.contains(key));
  }
  EXPECT_THROW(plan_from_json(nlohmann::json::object()), Error);
}

TEST(Sampling, RoundHalfUp) {
  EXPECT_EQ(round_half_up(2.5), 3u);
  EXPECT_EQ(round_half_up(2.49), 2u);
  EXPECT_EQ(round_half_up(0.5), 1u);
  EXPECT_EQ(round_half_up(0.0), 0u);
}
