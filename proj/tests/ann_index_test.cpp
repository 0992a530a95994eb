#include <set>
#include <thread>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "test_support.hpp"
#include "volret/ann_index.hpp"

using namespace volret;
using volret::testing::random_corpus;
using volret::testing::random_vector;

namespace {

IndexConfig exact_config() {
  IndexConfig c;
  c.exact = true;
  return c;
}

std::vector<float> normalized(std::vector<float> v) {
  normalize_in_place(v);
  return v;
}

double recall_at(const SliceIndex& ann, const Corpus& corpus, std::size_t queries, std::size_t k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::size_t found = 0;
  for (std::size_t q = 0; q < queries; ++q) {
    const auto query = normalized(random_vector(rng, corpus.dimension()));
    std::set<std::pair<std::string, std::uint32_t>> truth;
    for (const auto& h : oracle::knn(corpus, {}, query.data(), k)) truth.insert({h.volume_id, h.slice});
    for (const auto& h : ann.knn(query, k)) found += truth.count({h.key.volume_id, h.key.slice_index});
  }
  return static_cast<double>(found) / static_cast<double>(queries * k);
}

}  // namespace

TEST(SliceIndex, SizeMatchesFilter) {
  Corpus c(2);
  VolumeRecord a{"A", Task::liver, 0, 2, {2, 3}, {}, {1, 0, 0, 1, 1, 1, 1, -1}};
  VolumeRecord b{"B", Task::lung, 0, 2, {}, {}, {1, 0, -1, 0}};
  c.add(a);
  c.add(b);
  EXPECT_EQ(SliceIndex::build(c, exact_config()).size(), 6u);
  const auto seg = SliceIndex::build(c, exact_config(), organ_filter(Task::liver));
  ASSERT_EQ(seg.size(), 2u);
  EXPECT_EQ(seg.key(0), (SliceKey{"A", 2}));
  EXPECT_EQ(seg.key(1), (SliceKey{"A", 3}));
  EXPECT_EQ(seg.slices_of("B"), 0u);
}

TEST(SliceIndex, EmptyAfterFilterThrows) {
  const Corpus c = random_corpus(1, 3, 2, 3, 4);
  try {
    SliceIndex::build(c, exact_config(), [](const VolumeRecord&, std::uint32_t) { return false; });
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::empty_index);
  }
}

TEST(SliceIndex, SelfQueryScoresOne) {
  const Corpus c = random_corpus(2, 10, 3, 6, 16);
  for (bool exact : {true, false}) {
    IndexConfig cfg;
    cfg.exact = exact;
    const auto idx = SliceIndex::build(c, cfg);
    const auto& v = c.volumes()[4];
    const auto hits = idx.knn(v.slice(1), 5);
    ASSERT_FALSE(hits.empty());
    EXPECT_EQ(hits[0].key, (SliceKey{v.volume_id, 1}));
    EXPECT_NEAR(hits[0].score, 1.0, 1e-6);
  }
}

TEST(SliceIndex, OrthogonalQueryScoresZero) {
  Corpus c(4);
  c.add({"A", Task::colon, 0, 4, {0}, {}, {1, 0, 0, 0, 0, 1, 0, 0}});
  c.add({"B", Task::colon, 0, 4, {0}, {}, {1, 1, 0, 0, 0.5f, -0.5f, 0, 0}});
  const auto idx = SliceIndex::build(c, exact_config());
  const std::vector<float> q{0, 0, 0.6f, 0.8f};
  const auto hits = idx.knn(q, 3);
  ASSERT_EQ(hits.size(), 3u);
  for (const auto& h : hits) EXPECT_NEAR(h.score, 0.0, 1e-6);
  // All tied: ordered by (volume id, slice).
  EXPECT_EQ(hits[0].key, (SliceKey{"A", 0}));
  EXPECT_EQ(hits[1].key, (SliceKey{"A", 1}));
  EXPECT_EQ(hits[2].key, (SliceKey{"B", 0}));
}

TEST(SliceIndex, ExactMatchesOracleWithTieBreaks) {
  const Corpus c = random_corpus(3, 25, 5, 15, 8, true);
  const auto idx = SliceIndex::build(c, exact_config());
  std::mt19937_64 rng(9);
  for (int q = 0; q < 30; ++q) {
    const auto query = normalized(random_vector(rng, 8));
    const auto got = idx.knn(query, 20);
    const auto want = oracle::knn(c, {}, query.data(), 20);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].key.volume_id, want[i].volume_id);
      EXPECT_EQ(got[i].key.slice_index, want[i].slice);
      EXPECT_NEAR(got[i].score, want[i].score, 1e-12);
      if (i > 0) EXPECT_GE(got[i - 1].score, got[i].score);
    }
  }
}

TEST(SliceIndex, ExclusionSkipsVolume) {
  const Corpus c = random_corpus(4, 8, 4, 8, 8);
  for (bool exact : {true, false}) {
    IndexConfig cfg;
    cfg.exact = exact;
    const auto idx = SliceIndex::build(c, cfg);
    const auto& v = c.volumes()[2];
    for (const auto& h : idx.knn(v.slice(0), 10, v.volume_id)) EXPECT_NE(h.key.volume_id, v.volume_id);
    const auto want = oracle::knn(c, {}, v.slice(0).data(), 10, v.volume_id);
    if (exact) {
      const auto got = idx.knn(v.slice(0), 10, v.volume_id);
      ASSERT_EQ(got.size(), want.size());
      for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i].key.volume_id, want[i].volume_id);
    }
  }
}

TEST(SliceIndex, QueryErrors) {
  const Corpus c = random_corpus(5, 3, 2, 3, 4);
  const auto idx = SliceIndex::build(c, exact_config());
  const std::vector<float> wrong(5, 0.1f);
  EXPECT_THROW(idx.knn(wrong, 3), Error);
  EXPECT_THROW(idx.knn(c.volumes()[0].slice(0), 0), Error);
  IndexConfig bad;
  bad.m = 1;
  EXPECT_THROW(SliceIndex::build(c, bad), Error);
}

TEST(SliceIndex, ExactInvariantToInsertionOrder) {
  const Corpus a = random_corpus(6, 20, 3, 6, 8, false);
  // Same volumes inserted in reverse order.
  Corpus b(8);
  for (auto it = a.volumes().rbegin(); it != a.volumes().rend(); ++it) b.add(*it);
  const auto ia = SliceIndex::build(a, exact_config());
  const auto ib = SliceIndex::build(b, exact_config());
  std::mt19937_64 rng(1);
  for (int q = 0; q < 20; ++q) {
    const auto query = normalized(random_vector(rng, 8));
    const auto ha = ia.knn(query, 15), hb = ib.knn(query, 15);
    ASSERT_EQ(ha.size(), hb.size());
    for (std::size_t i = 0; i < ha.size(); ++i) {
      EXPECT_EQ(ha[i].key, hb[i].key);
      EXPECT_EQ(ha[i].score, hb[i].score);
    }
  }
}

TEST(SliceIndex, HnswDeterministicPerSeed) {
  const Corpus c = random_corpus(7, 40, 10, 20, 16);
  IndexConfig cfg;
  const auto a = SliceIndex::build(c, cfg);
  const auto b = SliceIndex::build(c, cfg);
  EXPECT_EQ(a.serialize(), b.serialize());
  std::mt19937_64 rng(2);
  for (int q = 0; q < 10; ++q) {
    const auto query = normalized(random_vector(rng, 16));
    const auto ha = a.knn(query, 20), hb = b.knn(query, 20);
    ASSERT_EQ(ha.size(), hb.size());
    for (std::size_t i = 0; i < ha.size(); ++i) EXPECT_EQ(ha[i].key, hb[i].key);
  }
}

TEST(SliceIndex, HnswRecallOnThousandVectors) {
  const Corpus c = random_corpus(8, 50, 20, 20, 32);
  ASSERT_EQ(c.total_slices(), 1000u);
  const auto idx = SliceIndex::build(c, IndexConfig{});
  EXPECT_GE(recall_at(idx, c, 50, 20, 77), 0.95);
}

TEST(SliceIndex, ScoresSymmetricAndBounded) {
  const Corpus c = random_corpus(9, 6, 3, 5, 8);
  const auto idx = SliceIndex::build(c, exact_config());
  const auto& a = c.volumes()[0];
  const auto& b = c.volumes()[1];
  EXPECT_EQ(dot(a.slice(0), b.slice(1)), dot(b.slice(1), a.slice(0)));
  for (const auto& h : idx.knn(a.slice(0), 30)) {
    EXPECT_LE(h.score, 1.0 + 1e-6);
    EXPECT_GE(h.score, -1.0 - 1e-6);
  }
}

TEST(SliceIndex, ConcurrentQueriesMatchSequential) {
  const Corpus c = random_corpus(10, 30, 10, 20, 16);
  const auto idx = SliceIndex::build(c, IndexConfig{});
  std::vector<std::vector<float>> queries;
  std::mt19937_64 rng(3);
  for (int i = 0; i < 16; ++i) queries.push_back(normalized(random_vector(rng, 16)));
  std::vector<std::vector<SliceHit>> seq, par(queries.size());
  for (const auto& q : queries) seq.push_back(idx.knn(q, 20));
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      for (std::size_t i = t; i < queries.size(); i += 4) par[i] = idx.knn(queries[i], 20);
    });
  }
  for (auto& t : threads) t.join();
  for (std::size_t i = 0; i < queries.size(); ++i) {
    ASSERT_EQ(seq[i].size(), par[i].size());
    for (std::size_t j = 0; j < seq[i].size(); ++j) EXPECT_EQ(seq[i][j].key, par[i][j].key);
  }
}

TEST(SliceIndex, PersistenceRoundTrip) {
  const Corpus c = random_corpus(11, 20, 5, 10, 8);
  for (bool exact : {true, false}) {
    IndexConfig cfg;
    cfg.exact = exact;
    const auto idx = SliceIndex::build(c, cfg, organ_filter(Task::liver));
    const auto dir = volret::testing::scratch_dir("vidx");
    idx.save(dir / "i.vidx");
    const auto back = SliceIndex::load(dir / "i.vidx");
    EXPECT_EQ(back.size(), idx.size());
    EXPECT_EQ(back.exact(), exact);
    EXPECT_EQ(back.serialize(), idx.serialize());
    std::mt19937_64 rng(4);
    for (int q = 0; q < 5; ++q) {
      const auto query = normalized(random_vector(rng, 8));
      const auto a = idx.knn(query, 10), b = back.knn(query, 10);
      ASSERT_EQ(a.size(), b.size());
      for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].key, b[i].key);
    }
  }
  auto bytes = SliceIndex::build(c, exact_config()).serialize();
  std::vector<std::uint8_t> raw(bytes.begin(), bytes.end());
  raw.resize(raw.size() / 2);
  EXPECT_THROW(SliceIndex::deserialize(raw), Error);
}
