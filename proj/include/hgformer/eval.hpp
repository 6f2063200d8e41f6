#pragma once

// Top-k ranking by hyperbolic distance and the accuracy / long-tail metrics
// computed on those rankings.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hgformer/geometry.hpp"
#include "hgformer/graph.hpp"
#include "hgformer/types.hpp"

namespace hgf::eval {

/// Per user, top-k item indices by ascending distance, training items removed.
/// Each list has min(k, M - train degree) entries.
using RankedList = std::vector<std::vector<std::size_t>>;

/// Ties in distance go to the smaller item index.
RankedList rank_items(const geometry::CurvatureSpace& space, const Matrix& users, const Matrix& items,
                      const graph::BipartiteGraph& train, std::size_t k);

struct MetricValue {
  double value = 0.0;
  std::size_t evaluated_users = 0;
  /// Users skipped because their truth set is empty.
  std::size_t skipped_users = 0;
};

/// Mean over users of |top-k ∩ truth| / |truth|.
MetricValue recall_at_k(const RankedList& ranked, std::span<const std::vector<std::size_t>> truth, std::size_t k);
MetricValue ndcg_at_k(const RankedList& ranked, std::span<const std::vector<std::size_t>> truth, std::size_t k);

/// is_tail[i] for every item: the floor(quantile * M) least popular items,
/// except that items sharing the lowest head degree stay head.
std::vector<bool> tail_items(std::span<const std::size_t> popularity, double quantile);
std::vector<std::size_t> item_popularity(const graph::BipartiteGraph& train);

/// Mean over users with a nonempty list of (tail items in top-k) / list length.
MetricValue tail_percentage_at_k(const RankedList& ranked, const std::vector<bool>& is_tail, std::size_t k);

/// Recall against truth restricted to tail items; users whose restricted truth
/// is empty are skipped.
MetricValue tail_recall_at_k(const RankedList& ranked, std::span<const std::vector<std::size_t>> truth,
                             const std::vector<bool>& is_tail, std::size_t k);

/// Expectation of the mean metric, and the standard deviation of that mean,
/// for a ranker that orders each user's candidates uniformly at random.
struct RandomRankerExpectation {
  double recall_mean = 0.0;
  double recall_std = 0.0;
  double ndcg_mean = 0.0;
  std::size_t users = 0;
};

RandomRankerExpectation random_ranker_expectation(const graph::BipartiteGraph& train,
                                                  std::span<const std::vector<std::size_t>> truth, std::size_t k);

struct KMetrics {
  std::size_t k = 0;
  double recall = 0.0;
  double ndcg = 0.0;
  double tail_percentage = 0.0;
  double tail_recall = 0.0;
  std::size_t evaluated_users = 0;
  std::size_t skipped_users = 0;
  std::size_t tail_recall_users = 0;
};

struct MetricsReport {
  std::string run_id;
  double tail_quantile = 0.8;
  std::size_t tail_item_count = 0;
  std::vector<KMetrics> per_k;

  std::string to_json() const;
  /// `run_id,k,recall,ndcg,tail_pct`, one line per k.
  std::string to_csv_rows() const;
};

MetricsReport evaluate(const geometry::CurvatureSpace& space, const Matrix& users, const Matrix& items,
                       const graph::SplitDataset& split, std::span<const std::size_t> ks, double tail_quantile,
                       std::string run_id);

/// Appends the CSV rows, writing the header first when the file is new or empty.
void append_csv(const std::filesystem::path& path, const MetricsReport& report);

}  // namespace hgf::eval
