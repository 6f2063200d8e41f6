#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hgformer/autodiff.hpp"
#include "hgformer/geometry.hpp"
#include "hgformer/types.hpp"

namespace hgf::graph {

using Edge = std::pair<std::size_t, std::size_t>;  // (user, item)

/// User-item interactions in compressed adjacency form, stored in both
/// directions. Neighbour lists are sorted and duplicate-free.
class BipartiteGraph {
 public:
  BipartiteGraph() = default;

  /// Deduplicates edges; throws ArgumentError on out-of-range indices.
  static BipartiteGraph from_edges(std::size_t num_users, std::size_t num_items, std::vector<Edge> edges);

  std::size_t num_users() const noexcept { return num_users_; }
  std::size_t num_items() const noexcept { return num_items_; }
  std::size_t num_edges() const noexcept { return user_items_.size(); }

  std::span<const std::size_t> items_of(std::size_t user) const;
  std::span<const std::size_t> users_of(std::size_t item) const;
  std::size_t user_degree(std::size_t user) const { return items_of(user).size(); }
  std::size_t item_degree(std::size_t item) const { return users_of(item).size(); }
  bool has_edge(std::size_t user, std::size_t item) const;

  /// Edges in user-major order.
  std::vector<Edge> edges() const;

  ad::Adjacency user_adjacency() const { return {user_offsets_, user_items_}; }
  ad::Adjacency item_adjacency() const { return {item_offsets_, item_users_}; }

 private:
  std::size_t num_users_ = 0;
  std::size_t num_items_ = 0;
  std::vector<std::size_t> user_offsets_{0};
  std::vector<std::size_t> user_items_;
  std::vector<std::size_t> item_offsets_{0};
  std::vector<std::size_t> item_users_;
};

/// Raw identifiers in order of first appearance; index = contiguous id.
struct IdMapping {
  std::vector<std::string> users;
  std::vector<std::string> items;
};

struct Interactions {
  BipartiteGraph graph;
  IdMapping ids;
};

/// Reads `user<TAB>item[<TAB>rating<TAB>timestamp]` lines; `#` lines and blank
/// lines are skipped. Throws ParseError (with line number) on malformed lines
/// and ArgumentError for a file without edges.
Interactions load_interactions(const std::filesystem::path& path);

/// Writes users.tsv / items.tsv (`index<TAB>raw_id`) into `dir`.
void save_id_mapping(const IdMapping& ids, const std::filesystem::path& dir);

/// Writes the graph as an interaction file using contiguous integer ids.
void save_interactions(const BipartiteGraph& g, const std::filesystem::path& path);

struct SplitDataset {
  BipartiteGraph train;
  /// Held-out items per user, sorted.
  std::vector<std::vector<std::size_t>> test;
  std::uint64_t seed = 0;
};

/// Per-user uniform holdout of ceil(fraction * deg) items, capped at deg - 1.
SplitDataset split_train_test(const BipartiteGraph& g, double test_fraction, std::uint64_t seed);

/// Synthetic user-item graph with a two-level cluster hierarchy and power-law
/// item popularity. Users mostly interact with items of their own leaf
/// cluster, sometimes with the sibling clusters, and rarely anywhere.
struct SyntheticConfig {
  std::size_t num_users = 500;
  std::size_t num_items = 300;
  std::size_t top_groups = 4;
  std::size_t leaves_per_group = 3;
  std::size_t min_degree = 10;
  std::size_t max_degree = 30;
  double popularity_exponent = 1.0;
  double p_leaf = 0.75;
  double p_group = 0.15;
  std::uint64_t seed = 7;
};

struct SyntheticGraph {
  BipartiteGraph graph;
  std::vector<std::size_t> user_cluster;
  std::vector<std::size_t> item_cluster;
};

SyntheticGraph make_synthetic_hierarchical(const SyntheticConfig& cfg);

// ---- LHGCN ---------------------------------------------------------------------

/// Point sets, one LorentzPoint per row.
using PointMatrix = Matrix;

/// One parameter-free layer: each node becomes the centroid of itself and its
/// neighbours, both sides computed from the same input state.
std::pair<ad::Var, ad::Var> lhgcn_layer(const geometry::CurvatureSpace& space, const BipartiteGraph& g,
                                        ad::Var users, ad::Var items);
std::pair<ad::Var, ad::Var> lhgcn_forward(const geometry::CurvatureSpace& space, const BipartiteGraph& g,
                                          ad::Var users, ad::Var items, std::size_t layers);

std::pair<PointMatrix, PointMatrix> lhgcn_layer(const geometry::CurvatureSpace& space, const BipartiteGraph& g,
                                                const PointMatrix& users, const PointMatrix& items);
std::pair<PointMatrix, PointMatrix> lhgcn_forward(const geometry::CurvatureSpace& space, const BipartiteGraph& g,
                                                  const PointMatrix& users, const PointMatrix& items,
                                                  std::size_t layers);

}  // namespace hgf::graph
