#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "generators.hpp"
#include "hgformer/error.hpp"
#include "hgformer/eval.hpp"
#include "tempdir.hpp"

namespace hgf {
namespace {

using namespace eval;
using geometry::CurvatureSpace;
using graph::BipartiteGraph;
using testing::Gen;
using testing::TempDir;

using Truth = std::vector<std::vector<std::size_t>>;

// ---- ranking ---------------------------------------------------------------------------

TEST(RankItems, CoincidentItemRanksFirst) {
  Gen gen(1);
  const CurvatureSpace sp(1.0, 4);
  const Matrix items = gen.points(sp, 8, 2.0);
  Matrix users(1, 5);
  users.row(0) = items.row(3);
  const BipartiteGraph g = BipartiteGraph::from_edges(1, 8, {});
  const RankedList r = rank_items(sp, users, items, g, 3);
  ASSERT_EQ(r[0].size(), 3u);
  EXPECT_EQ(r[0][0], 3u);
}

TEST(RankItems, EquidistantItemsKeepIndexOrder) {
  Gen gen(2);
  const CurvatureSpace sp(0.5, 3);
  Matrix items(6, 4);
  const auto p = gen.point(sp);
  for (Index r = 0; r < 6; ++r) items.row(r) = testing::row_matrix(p).row(0);
  const Matrix users = gen.points(sp, 2);
  const BipartiteGraph g = BipartiteGraph::from_edges(2, 6, {{1, 2}});
  const RankedList r = rank_items(sp, users, items, g, 10);
  EXPECT_EQ(r[0], (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
  EXPECT_EQ(r[1], (std::vector<std::size_t>{0, 1, 3, 4, 5}));
}

TEST(RankItems, MatchesFullSortOracle) {
  Gen gen(3);
  for (int trial = 0; trial < 20; ++trial) {
    const CurvatureSpace sp(trial % 2 ? 1.0 : 0.1, 4);
    const Matrix users = gen.points(sp, 3, 2.0), items = gen.points(sp, 10, 2.0);
    const BipartiteGraph g = gen.bipartite(3, 10, 0.3);
    const std::size_t k = 1 + static_cast<std::size_t>(trial % 10);
    const RankedList r = rank_items(sp, users, items, g, k);
    for (std::size_t u = 0; u < 3; ++u) {
      std::vector<std::pair<double, std::size_t>> all;
      for (std::size_t i = 0; i < 10; ++i) {
        if (g.has_edge(u, i)) continue;
        all.emplace_back(geometry::distance(sp, testing::row_point(users, static_cast<Index>(u)),
                                            testing::row_point(items, static_cast<Index>(i))),
                         i);
      }
      std::sort(all.begin(), all.end());
      std::vector<std::size_t> expect;
      for (std::size_t j = 0; j < std::min(k, all.size()); ++j) expect.push_back(all[j].second);
      EXPECT_EQ(r[u], expect) << "trial " << trial << " user " << u;
    }
  }
}

TEST(RankItems, ExcludesEveryTrainingItem) {
  Gen gen(4);
  const CurvatureSpace sp(1.0, 2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + trial % 4, m = 1 + trial % 7;
    const BipartiteGraph g = gen.bipartite(n, m, gen.uniform(0.0, 1.0));
    const RankedList r = rank_items(sp, gen.points(sp, static_cast<Index>(n)), gen.points(sp, static_cast<Index>(m)), g, 4);
    for (std::size_t u = 0; u < n; ++u) {
      EXPECT_EQ(r[u].size(), std::min<std::size_t>(4, m - g.user_degree(u)));
      for (std::size_t i : r[u]) EXPECT_FALSE(g.has_edge(u, i));
    }
  }
}

TEST(RankItems, Errors) {
  const CurvatureSpace sp(1.0, 2);
  const BipartiteGraph g = BipartiteGraph::from_edges(1, 2, {});
  const Matrix pts = Matrix::Zero(2, 3);
  EXPECT_THROW(rank_items(sp, pts.topRows(1), pts, g, 0), ArgumentError);
  EXPECT_THROW(rank_items(sp, pts, pts, g, 1), DimensionError);
  EXPECT_THROW(rank_items(sp, Matrix::Zero(1, 4), pts, g, 1), DimensionError);
}

// ---- accuracy metrics --------------------------------------------------------------------

TEST(Recall, Examples) {
  EXPECT_DOUBLE_EQ(recall_at_k({{1, 3}}, Truth{{1, 2}}, 2).value, 0.5);
  EXPECT_DOUBLE_EQ(recall_at_k({{2, 1}}, Truth{{1, 2}}, 2).value, 1.0);
  EXPECT_DOUBLE_EQ(recall_at_k({{5, 6, 7}}, Truth{{5, 6, 8, 9}}, 2).value, 0.5);
}

TEST(Recall, EmptyTruthIsSkippedAndCounted) {
  const auto r = recall_at_k({{0, 1}, {2, 3}}, Truth{{}, {2}}, 2);
  EXPECT_DOUBLE_EQ(r.value, 1.0);
  EXPECT_EQ(r.evaluated_users, 1u);
  EXPECT_EQ(r.skipped_users, 1u);
}

TEST(Ndcg, Examples) {
  // 1 / (1 + 1/log2 3)
  EXPECT_NEAR(ndcg_at_k({{4, 7}}, Truth{{4, 9}}, 2).value, 0.6131471927654584, 1e-15);
  EXPECT_NEAR(ndcg_at_k({{3, 1, 2, 8}}, Truth{{1, 2, 3}}, 4).value, 1.0, 1e-15);
  EXPECT_EQ(ndcg_at_k({{0, 1}}, Truth{{5}}, 2).value, 0.0);
}

TEST(Metrics, OracleRankerScoresOne) {
  Gen gen(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 12;
    Truth truth(4);
    RankedList ranked(4);
    for (std::size_t u = 0; u < 4; ++u) {
      std::vector<std::size_t> perm(m);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), gen.rng);
      const std::size_t t = 1 + gen.rng() % 5;
      truth[u].assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(t));
      ranked[u] = perm;
    }
    // k at least the largest truth set
    EXPECT_DOUBLE_EQ(recall_at_k(ranked, truth, 5).value, 1.0);
    EXPECT_NEAR(ndcg_at_k(ranked, truth, 5).value, 1.0, 1e-15);
    const double r3 = recall_at_k(ranked, truth, 3).value, n3 = ndcg_at_k(ranked, truth, 3).value;
    EXPECT_GE(r3, 0.0);
    EXPECT_LE(r3, 1.0);
    EXPECT_NEAR(n3, 1.0, 1e-15);
  }
}

TEST(Metrics, UserCountMismatchThrows) {
  EXPECT_THROW(recall_at_k({{0}}, Truth{{0}, {1}}, 1), DimensionError);
  EXPECT_THROW(ndcg_at_k({{0}, {1}}, Truth{{0}}, 1), DimensionError);
}

// ---- random ranker -------------------------------------------------------------------------

struct Enumerated {
  double recall_mean = 0.0, recall_var = 0.0, ndcg_mean = 0.0, ndcg_var = 0.0;
};

// Mean and variance of the per-user metric over every ordering of the candidates.
Enumerated enumerate_user(const BipartiteGraph& g, std::size_t u, const std::vector<std::size_t>& truth, std::size_t k) {
  std::vector<std::size_t> cand;
  for (std::size_t i = 0; i < g.num_items(); ++i) {
    if (!g.has_edge(u, i)) cand.push_back(i);
  }
  double rs = 0, rs2 = 0, ns = 0, ns2 = 0, count = 0;
  do {
    std::vector<std::size_t> top(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(std::min(k, cand.size())));
    const double r = recall_at_k({top}, Truth{truth}, k).value;
    const double n = ndcg_at_k({top}, Truth{truth}, k).value;
    rs += r;
    rs2 += r * r;
    ns += n;
    ns2 += n * n;
    count += 1;
  } while (std::next_permutation(cand.begin(), cand.end()));
  Enumerated e;
  e.recall_mean = rs / count;
  e.recall_var = rs2 / count - e.recall_mean * e.recall_mean;
  e.ndcg_mean = ns / count;
  e.ndcg_var = ns2 / count - e.ndcg_mean * e.ndcg_mean;
  return e;
}

TEST(RandomRanker, ClosedFormMatchesEnumeration) {
  const BipartiteGraph g = BipartiteGraph::from_edges(3, 8, {{0, 0}, {1, 1}, {1, 2}, {2, 7}});
  const Truth truth = {{3, 4}, {0, 5, 6}, {1}};
  for (std::size_t k : {1, 2, 3, 5, 8}) {
    double rm = 0, rv = 0, nm = 0;
    for (std::size_t u = 0; u < 3; ++u) {
      const auto e = enumerate_user(g, u, truth[u], k);
      rm += e.recall_mean / 3.0;
      rv += e.recall_var / 9.0;
      nm += e.ndcg_mean / 3.0;
    }
    const auto c = random_ranker_expectation(g, truth, k);
    EXPECT_EQ(c.users, 3u);
    EXPECT_NEAR(c.recall_mean, rm, 1e-12) << k;
    EXPECT_NEAR(c.recall_std, std::sqrt(rv), 1e-12) << k;
    EXPECT_NEAR(c.ndcg_mean, nm, 1e-12) << k;
  }
}

TEST(RandomRanker, ShuffledRankingsMatchExpectation) {
  const BipartiteGraph g = BipartiteGraph::from_edges(3, 8, {{0, 0}, {1, 1}, {1, 2}, {2, 7}});
  const Truth truth = {{3, 4}, {0, 5, 6}, {1}};
  const std::size_t k = 3;
  double ndcg_var = 0.0;
  for (std::size_t u = 0; u < 3; ++u) ndcg_var += enumerate_user(g, u, truth[u], k).ndcg_var / 9.0;
  const auto c = random_ranker_expectation(g, truth, k);
  std::mt19937_64 rng(2024);
  constexpr int kTrials = 200;
  double rsum = 0.0, nsum = 0.0;
  for (int t = 0; t < kTrials; ++t) {
    RankedList ranked(3);
    for (std::size_t u = 0; u < 3; ++u) {
      for (std::size_t i = 0; i < 8; ++i) {
        if (!g.has_edge(u, i)) ranked[u].push_back(i);
      }
      std::shuffle(ranked[u].begin(), ranked[u].end(), rng);
    }
    rsum += recall_at_k(ranked, truth, k).value;
    nsum += ndcg_at_k(ranked, truth, k).value;
  }
  EXPECT_LE(std::abs(rsum / kTrials - c.recall_mean), 3.0 * c.recall_std / std::sqrt(kTrials));
  EXPECT_LE(std::abs(nsum / kTrials - c.ndcg_mean), 3.0 * std::sqrt(ndcg_var / kTrials));
}

// ---- long tail -------------------------------------------------------------------------------

TEST(TailItems, TopTwentyPercentAreHead) {
  const std::vector<std::size_t> deg = {10, 9, 8, 7, 6, 5, 4, 3, 2, 1};
  const auto tail = tail_items(deg, 0.8);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(tail[i], i >= 2) << i;
  // order of the degrees does not matter
  const std::vector<std::size_t> shuffled = {3, 10, 1, 9, 2, 4, 5, 6, 7, 8};
  const auto t2 = tail_items(shuffled, 0.8);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(t2[i], shuffled[i] < 9) << i;
}

TEST(TailItems, ThresholdTiesGoToHead) {
  const std::vector<std::size_t> deg = {5, 5, 5, 1, 1, 1, 1, 1, 1, 1};
  const auto tail = tail_items(deg, 0.8);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(tail[i], i >= 3) << i;
  const std::vector<std::size_t> flat(10, 4);
  const auto none = tail_items(flat, 0.8);
  EXPECT_EQ(std::count(none.begin(), none.end(), true), 0);
}

TEST(TailItems, QuantileBounds) {
  const std::vector<std::size_t> deg = {3, 2, 1};
  const auto all = tail_items(deg, 1.0);
  EXPECT_EQ(std::count(all.begin(), all.end(), true), 3);
  const auto none = tail_items(deg, 0.0);
  EXPECT_EQ(std::count(none.begin(), none.end(), true), 0);
  EXPECT_THROW(tail_items(deg, 1.5), ArgumentError);
}

TEST(TailPercentage, Examples) {
  const std::vector<bool> tail = {false, false, true, true, true, true};
  EXPECT_DOUBLE_EQ(tail_percentage_at_k({{2, 3, 4}}, tail, 3).value, 1.0);
  EXPECT_DOUBLE_EQ(tail_percentage_at_k({{0, 2, 1, 5}}, tail, 4).value, 0.5);
  // a shorter list is measured against its own length
  const auto r = tail_percentage_at_k({{0, 2}, {}}, tail, 10);
  EXPECT_DOUBLE_EQ(r.value, 0.5);
  EXPECT_EQ(r.skipped_users, 1u);
}

TEST(TailRecall, RestrictsTruthToTailItems) {
  const std::vector<bool> tail = {false, false, true, true};
  const auto r = tail_recall_at_k({{2, 0}, {1, 0}}, Truth{{0, 2, 3}, {1}}, tail, 2);
  EXPECT_DOUBLE_EQ(r.value, 0.5);
  EXPECT_EQ(r.evaluated_users, 1u);
  EXPECT_EQ(r.skipped_users, 1u);
}

TEST(ItemPopularity, IsTrainingDegree) {
  const BipartiteGraph g = BipartiteGraph::from_edges(3, 3, {{0, 0}, {1, 0}, {2, 0}, {1, 2}});
  EXPECT_EQ(item_popularity(g), (std::vector<std::size_t>{3, 0, 1}));
}

// ---- report -----------------------------------------------------------------------------------

graph::SplitDataset toy_split(Gen& gen, const CurvatureSpace& sp, Matrix& users, Matrix& items) {
  const BipartiteGraph g = gen.bipartite(20, 30, 0.3);
  auto split = graph::split_train_test(g, 0.3, 5);
  users = gen.points(sp, 20, 2.0);
  items = gen.points(sp, 30, 2.0);
  return split;
}

TEST(Evaluate, ReportHasBothCutoffsAndValidRanges) {
  Gen gen(6);
  const CurvatureSpace sp(1.0, 4);
  Matrix users, items;
  const auto split = toy_split(gen, sp, users, items);
  const std::vector<std::size_t> ks = {10, 20};
  const MetricsReport rep = evaluate(sp, users, items, split, ks, 0.8, "run-a");
  ASSERT_EQ(rep.per_k.size(), 2u);
  EXPECT_EQ(rep.per_k[0].k, 10u);
  EXPECT_EQ(rep.per_k[1].k, 20u);
  for (const auto& m : rep.per_k) {
    for (double v : {m.recall, m.ndcg, m.tail_percentage, m.tail_recall}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_LE(rep.per_k[0].recall, rep.per_k[1].recall);
  const auto j = nlohmann::json::parse(rep.to_json());
  EXPECT_EQ(j["run_id"], "run-a");
  EXPECT_EQ(j["metrics"].size(), 2u);
  EXPECT_EQ(j["metrics"][0]["k"], 10);
  EXPECT_DOUBLE_EQ(j["metrics"][1]["recall"].get<double>(), rep.per_k[1].recall);
  EXPECT_THROW(evaluate(sp, users, items, split, std::vector<std::size_t>{}, 0.8, "x"), ArgumentError);
}

TEST(Evaluate, PlantedUsersRecoverTheirItem) {
  const CurvatureSpace sp(1.0, 4);
  Gen gen(7);
  const Matrix items = gen.points(sp, 6, 3.0);
  // user u holds item u in training and item u + 1 in the test set, and sits on it
  graph::SplitDataset split;
  split.train = BipartiteGraph::from_edges(5, 6, {{0, 0}, {1, 1}, {2, 2}, {3, 3}, {4, 4}});
  for (std::size_t u = 0; u < 5; ++u) split.test.push_back({u + 1});
  Matrix users(5, 5);
  for (Index u = 0; u < 5; ++u) users.row(u) = items.row(u + 1);
  const std::vector<std::size_t> ks = {1, 10};
  const auto rep = evaluate(sp, users, items, split, ks, 0.8, "oracle");
  EXPECT_DOUBLE_EQ(rep.per_k[0].recall, 1.0);
  EXPECT_DOUBLE_EQ(rep.per_k[0].ndcg, 1.0);
  EXPECT_DOUBLE_EQ(rep.per_k[1].recall, 1.0);
}

TEST(Evaluate, CsvAppendWritesHeaderOnce) {
  TempDir dir;
  MetricsReport rep;
  rep.run_id = "r1";
  rep.per_k = {KMetrics{10, 0.25, 0.5, 0.75, 0.0, 1, 0, 0}, KMetrics{20, 0.5, 0.625, 1.0, 0.0, 1, 0, 0}};
  append_csv(dir / "m.csv", rep);
  rep.run_id = "r2";
  append_csv(dir / "m.csv", rep);
  std::ifstream is(dir / "m.csv");
  std::stringstream ss;
  ss << is.rdbuf();
  EXPECT_EQ(ss.str(),
            "run_id,k,recall,ndcg,tail_pct\n"
            "r1,10,0.25,0.5,0.75\nr1,20,0.5,0.625,1\n"
            "r2,10,0.25,0.5,0.75\nr2,20,0.5,0.625,1\n");
}

}  // namespace
}  // namespace hgf
