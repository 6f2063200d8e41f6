#include "hgformer/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "hgformer/error.hpp"

namespace hgf::graph {

BipartiteGraph BipartiteGraph::from_edges(std::size_t num_users, std::size_t num_items, std::vector<Edge> edges) {
  for (const auto& [u, i] : edges) {
    if (u >= num_users || i >= num_items) throw ArgumentError("from_edges: edge index out of range");
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

  BipartiteGraph g;
  g.num_users_ = num_users;
  g.num_items_ = num_items;
  g.user_offsets_.assign(num_users + 1, 0);
  g.item_offsets_.assign(num_items + 1, 0);
  for (const auto& [u, i] : edges) {
    ++g.user_offsets_[u + 1];
    ++g.item_offsets_[i + 1];
  }
  std::partial_sum(g.user_offsets_.begin(), g.user_offsets_.end(), g.user_offsets_.begin());
  std::partial_sum(g.item_offsets_.begin(), g.item_offsets_.end(), g.item_offsets_.begin());

  g.user_items_.resize(edges.size());
  g.item_users_.resize(edges.size());
  std::vector<std::size_t> fill(g.item_offsets_.begin(), g.item_offsets_.end() - 1);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto& [u, i] = edges[e];
    g.user_items_[e] = i;  // edges sorted by (user, item): user lists come out sorted
    g.item_users_[fill[i]++] = u;  // users visited in ascending order: item lists sorted too
  }
  return g;
}

std::span<const std::size_t> BipartiteGraph::items_of(std::size_t user) const {
  if (user >= num_users_) throw ArgumentError("items_of: user out of range");
  return std::span(user_items_).subspan(user_offsets_[user], user_offsets_[user + 1] - user_offsets_[user]);
}

std::span<const std::size_t> BipartiteGraph::users_of(std::size_t item) const {
  if (item >= num_items_) throw ArgumentError("users_of: item out of range");
  return std::span(item_users_).subspan(item_offsets_[item], item_offsets_[item + 1] - item_offsets_[item]);
}

bool BipartiteGraph::has_edge(std::size_t user, std::size_t item) const {
  const auto items = items_of(user);
  return std::binary_search(items.begin(), items.end(), item);
}

std::vector<Edge> BipartiteGraph::edges() const {
  std::vector<Edge> out;
  out.reserve(num_edges());
  for (std::size_t u = 0; u < num_users_; ++u) {
    for (std::size_t i : items_of(u)) out.emplace_back(u, i);
  }
  return out;
}

// ---- file IO ---------------------------------------------------------------------

Interactions load_interactions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open interaction file " + path.string());

  Interactions out;
  std::unordered_map<std::string, std::size_t> user_index;
  std::unordered_map<std::string, std::size_t> item_index;
  std::vector<Edge> edges;

  auto intern = [](std::unordered_map<std::string, std::size_t>& index, std::vector<std::string>& names,
                   const std::string& key) {
    auto [it, inserted] = index.try_emplace(key, names.size());
    if (inserted) names.push_back(key);
    return it->second;
  };

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() < 2 || fields.size() > 4) {
      throw ParseError(lineno, "expected 2 to 4 tab-separated fields, got " + std::to_string(fields.size()));
    }
    if (fields[0].empty() || fields[1].empty()) throw ParseError(lineno, "empty user or item id");
    const std::size_t u = intern(user_index, out.ids.users, fields[0]);
    const std::size_t i = intern(item_index, out.ids.items, fields[1]);
    edges.emplace_back(u, i);
  }
  if (edges.empty()) throw ArgumentError("interaction file " + path.string() + " contains no edges");
  out.graph = BipartiteGraph::from_edges(out.ids.users.size(), out.ids.items.size(), std::move(edges));
  return out;
}

void save_id_mapping(const IdMapping& ids, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write = [](const std::filesystem::path& p, const std::vector<std::string>& names) {
    std::ofstream out(p);
    if (!out) throw ArgumentError("cannot write " + p.string());
    for (std::size_t i = 0; i < names.size(); ++i) out << i << '\t' << names[i] << '\n';
  };
  write(dir / "users.tsv", ids.users);
  write(dir / "items.tsv", ids.items);
}

void save_interactions(const BipartiteGraph& g, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write " + path.string());
  out << "# user\titem\n";
  for (const auto& [u, i] : g.edges()) out << 'u' << u << "\ti" << i << '\n';
}

// ---- splitting -----------------------------------------------------------------------

SplitDataset split_train_test(const BipartiteGraph& g, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ArgumentError("test_fraction must be in (0, 1)");
  std::mt19937_64 rng(seed);
  SplitDataset split;
  split.seed = seed;
  split.test.resize(g.num_users());
  std::vector<Edge> train;
  train.reserve(g.num_edges());
  for (std::size_t u = 0; u < g.num_users(); ++u) {
    const auto items = g.items_of(u);
    std::vector<std::size_t> order(items.begin(), items.end());
    const std::size_t deg = order.size();
    std::size_t held = 0;
    if (deg >= 2) {
      held = static_cast<std::size_t>(std::ceil(test_fraction * static_cast<double>(deg) - 1e-9));
      held = std::min(held, deg - 1);
    }
    std::shuffle(order.begin(), order.end(), rng);
    split.test[u].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(held));
    std::sort(split.test[u].begin(), split.test[u].end());
    for (std::size_t k = held; k < deg; ++k) train.emplace_back(u, order[k]);
  }
  split.train = BipartiteGraph::from_edges(g.num_users(), g.num_items(), std::move(train));
  return split;
}

// ---- synthetic data ---------------------------------------------------------------------

SyntheticGraph make_synthetic_hierarchical(const SyntheticConfig& cfg) {
  const std::size_t leaves = cfg.top_groups * cfg.leaves_per_group;
  if (leaves == 0 || cfg.num_items < leaves || cfg.num_users == 0) {
    throw ArgumentError("synthetic graph: need at least one item per leaf cluster");
  }
  if (cfg.min_degree == 0 || cfg.min_degree > cfg.max_degree || cfg.max_degree > cfg.num_items) {
    throw ArgumentError("synthetic graph: invalid degree range");
  }
  std::mt19937_64 rng(cfg.seed);

  // popularity rank is a random permutation; cluster membership round-robin over it
  std::vector<std::size_t> rank(cfg.num_items);
  std::iota(rank.begin(), rank.end(), 0);
  std::shuffle(rank.begin(), rank.end(), rng);
  std::vector<double> weight(cfg.num_items);
  SyntheticGraph out;
  out.item_cluster.resize(cfg.num_items);
  for (std::size_t j = 0; j < cfg.num_items; ++j) {
    weight[j] = std::pow(static_cast<double>(rank[j] + 1), -cfg.popularity_exponent);
  }
  std::vector<std::size_t> by_rank(cfg.num_items);
  for (std::size_t j = 0; j < cfg.num_items; ++j) by_rank[rank[j]] = j;
  for (std::size_t r = 0; r < cfg.num_items; ++r) out.item_cluster[by_rank[r]] = r % leaves;

  std::vector<std::vector<std::size_t>> leaf_items(leaves), group_items(cfg.top_groups);
  for (std::size_t j = 0; j < cfg.num_items; ++j) {
    leaf_items[out.item_cluster[j]].push_back(j);
    group_items[out.item_cluster[j] / cfg.leaves_per_group].push_back(j);
  }
  auto make_dist = [&](const std::vector<std::size_t>& items) {
    std::vector<double> w;
    w.reserve(items.size());
    for (std::size_t j : items) w.push_back(weight[j]);
    return std::discrete_distribution<std::size_t>(w.begin(), w.end());
  };
  std::vector<std::discrete_distribution<std::size_t>> leaf_dist, group_dist;
  for (const auto& items : leaf_items) leaf_dist.push_back(make_dist(items));
  for (const auto& items : group_items) group_dist.push_back(make_dist(items));
  std::discrete_distribution<std::size_t> global_dist(weight.begin(), weight.end());

  std::uniform_int_distribution<std::size_t> pick_leaf(0, leaves - 1);
  std::uniform_int_distribution<std::size_t> pick_degree(cfg.min_degree, cfg.max_degree);
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  std::vector<Edge> edges;
  out.user_cluster.resize(cfg.num_users);
  for (std::size_t u = 0; u < cfg.num_users; ++u) {
    const std::size_t leaf = pick_leaf(rng);
    const std::size_t group = leaf / cfg.leaves_per_group;
    out.user_cluster[u] = leaf;
    const std::size_t degree = pick_degree(rng);
    std::unordered_set<std::size_t> chosen;
    for (std::size_t attempt = 0; chosen.size() < degree && attempt < 50 * degree; ++attempt) {
      const double c = coin(rng);
      std::size_t item;
      if (c < cfg.p_leaf) {
        item = leaf_items[leaf][leaf_dist[leaf](rng)];
      } else if (c < cfg.p_leaf + cfg.p_group) {
        item = group_items[group][group_dist[group](rng)];
      } else {
        item = global_dist(rng);
      }
      if (chosen.insert(item).second) edges.emplace_back(u, item);
    }
  }
  out.graph = BipartiteGraph::from_edges(cfg.num_users, cfg.num_items, std::move(edges));
  return out;
}

// ---- LHGCN --------------------------------------------------------------------------------

std::pair<ad::Var, ad::Var> lhgcn_layer(const geometry::CurvatureSpace& space, const BipartiteGraph& g,
                                        ad::Var users, ad::Var items) {
  const auto amb = static_cast<Index>(space.ambient_dim());
  if (users.rows() != static_cast<Index>(g.num_users()) || items.rows() != static_cast<Index>(g.num_items()) ||
      users.cols() != amb || items.cols() != amb) {
    throw DimensionError("lhgcn_layer: embedding shapes do not match the graph");
  }
  ad::Var u_sum = ad::neighbor_sum(users, items, g.user_adjacency());
  ad::Var i_sum = ad::neighbor_sum(items, users, g.item_adjacency());
  return {ad::normalize_timelike_rows(space.k(), u_sum), ad::normalize_timelike_rows(space.k(), i_sum)};
}

std::pair<ad::Var, ad::Var> lhgcn_forward(const geometry::CurvatureSpace& space, const BipartiteGraph& g,
                                          ad::Var users, ad::Var items, std::size_t layers) {
  for (std::size_t l = 0; l < layers; ++l) std::tie(users, items) = lhgcn_layer(space, g, users, items);
  return {users, items};
}

std::pair<PointMatrix, PointMatrix> lhgcn_layer(const geometry::CurvatureSpace& space, const BipartiteGraph& g,
                                                const PointMatrix& users, const PointMatrix& items) {
  return lhgcn_forward(space, g, users, items, 1);
}

std::pair<PointMatrix, PointMatrix> lhgcn_forward(const geometry::CurvatureSpace& space, const BipartiteGraph& g,
                                                  const PointMatrix& users, const PointMatrix& items,
                                                  std::size_t layers) {
  ad::Tape tape(false);
  auto [u, i] = lhgcn_forward(space, g, tape.constant(users), tape.constant(items), layers);
  return {u.value(), i.value()};
}

}  // namespace hgf::graph
