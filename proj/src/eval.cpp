#include "hgformer/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "hgformer/error.hpp"
#include "hgformer/parallel.hpp"

namespace hgf::eval {

namespace gk = geometry::kernel;

RankedList rank_items(const geometry::CurvatureSpace& space, const Matrix& users, const Matrix& items,
                      const graph::BipartiteGraph& train, std::size_t k) {
  if (k < 1) throw ArgumentError("rank_items: k must be >= 1");
  const auto amb = static_cast<Index>(space.ambient_dim());
  if (users.cols() != amb || items.cols() != amb) throw DimensionError("rank_items: point dimension mismatch");
  if (static_cast<std::size_t>(users.rows()) != train.num_users() ||
      static_cast<std::size_t>(items.rows()) != train.num_items()) {
    throw DimensionError("rank_items: point counts differ from the graph");
  }
  const std::size_t n = train.num_users();
  const std::size_t m = train.num_items();
  RankedList out(n);
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(m);
    for (std::size_t u = begin; u < end; ++u) {
      scored.clear();
      const gk::In ur(users.row(static_cast<Index>(u)).data(), static_cast<std::size_t>(amb));
      for (std::size_t i = 0; i < m; ++i) {
        if (train.has_edge(u, i)) continue;
        const gk::In ir(items.row(static_cast<Index>(i)).data(), static_cast<std::size_t>(amb));
        scored.emplace_back(gk::distance(space.k(), ur, ir), i);
      }
      const std::size_t len = std::min(k, scored.size());
      // pair ordering compares distance first, then index
      std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(len), scored.end());
      out[u].resize(len);
      for (std::size_t r = 0; r < len; ++r) out[u][r] = scored[r].second;
    }
  });
  return out;
}

namespace {

void check_users(const RankedList& ranked, std::span<const std::vector<std::size_t>> truth) {
  if (ranked.size() != truth.size()) throw DimensionError("metrics: ranked lists and truth differ in user count");
}

std::size_t hits_in(std::span<const std::size_t> top, const std::vector<std::size_t>& sorted_truth) {
  std::size_t h = 0;
  for (std::size_t i : top) h += std::binary_search(sorted_truth.begin(), sorted_truth.end(), i) ? 1 : 0;
  return h;
}

std::vector<std::size_t> sorted_copy(const std::vector<std::size_t>& v) {
  std::vector<std::size_t> s = v;
  std::sort(s.begin(), s.end());
  return s;
}

std::span<const std::size_t> head(const std::vector<std::size_t>& list, std::size_t k) {
  return std::span(list).first(std::min(k, list.size()));
}

double idcg(std::size_t relevant, std::size_t k) {
  double s = 0.0;
  for (std::size_t i = 1; i <= std::min(relevant, k); ++i) s += 1.0 / std::log2(static_cast<double>(i) + 1.0);
  return s;
}

}  // namespace

MetricValue recall_at_k(const RankedList& ranked, std::span<const std::vector<std::size_t>> truth, std::size_t k) {
  check_users(ranked, truth);
  MetricValue r;
  double total = 0.0;
  for (std::size_t u = 0; u < ranked.size(); ++u) {
    if (truth[u].empty()) {
      ++r.skipped_users;
      continue;
    }
    const auto t = sorted_copy(truth[u]);
    total += static_cast<double>(hits_in(head(ranked[u], k), t)) / static_cast<double>(t.size());
    ++r.evaluated_users;
  }
  r.value = r.evaluated_users ? total / static_cast<double>(r.evaluated_users) : 0.0;
  return r;
}

MetricValue ndcg_at_k(const RankedList& ranked, std::span<const std::vector<std::size_t>> truth, std::size_t k) {
  check_users(ranked, truth);
  MetricValue r;
  double total = 0.0;
  for (std::size_t u = 0; u < ranked.size(); ++u) {
    if (truth[u].empty()) {
      ++r.skipped_users;
      continue;
    }
    const auto t = sorted_copy(truth[u]);
    const auto top = head(ranked[u], k);
    double dcg = 0.0;
    for (std::size_t i = 0; i < top.size(); ++i) {
      if (std::binary_search(t.begin(), t.end(), top[i])) dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    }
    total += dcg / idcg(t.size(), k);
    ++r.evaluated_users;
  }
  r.value = r.evaluated_users ? total / static_cast<double>(r.evaluated_users) : 0.0;
  return r;
}

std::vector<std::size_t> item_popularity(const graph::BipartiteGraph& train) {
  std::vector<std::size_t> p(train.num_items());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = train.item_degree(i);
  return p;
}

std::vector<bool> tail_items(std::span<const std::size_t> popularity, double quantile) {
  if (!(quantile >= 0.0 && quantile <= 1.0)) throw ArgumentError("tail_items: quantile must lie in [0, 1]");
  const std::size_t m = popularity.size();
  std::vector<bool> tail(m, false);
  const auto tail_count = static_cast<std::size_t>(std::floor(quantile * static_cast<double>(m) + 1e-9));
  const std::size_t head_count = m - std::min(tail_count, m);
  if (head_count == 0) return std::vector<bool>(m, true);
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return popularity[a] > popularity[b]; });
  const std::size_t threshold = popularity[order[head_count - 1]];
  for (std::size_t i = 0; i < m; ++i) tail[i] = popularity[i] < threshold;
  return tail;
}

MetricValue tail_percentage_at_k(const RankedList& ranked, const std::vector<bool>& is_tail, std::size_t k) {
  MetricValue r;
  double total = 0.0;
  for (const auto& list : ranked) {
    const auto top = head(list, k);
    if (top.empty()) {
      ++r.skipped_users;
      continue;
    }
    std::size_t t = 0;
    for (std::size_t i : top) {
      if (i >= is_tail.size()) throw DimensionError("tail_percentage_at_k: item index outside the tail mask");
      t += is_tail[i] ? 1 : 0;
    }
    total += static_cast<double>(t) / static_cast<double>(top.size());
    ++r.evaluated_users;
  }
  r.value = r.evaluated_users ? total / static_cast<double>(r.evaluated_users) : 0.0;
  return r;
}

MetricValue tail_recall_at_k(const RankedList& ranked, std::span<const std::vector<std::size_t>> truth,
                             const std::vector<bool>& is_tail, std::size_t k) {
  std::vector<std::vector<std::size_t>> restricted(truth.size());
  for (std::size_t u = 0; u < truth.size(); ++u) {
    for (std::size_t i : truth[u]) {
      if (i < is_tail.size() && is_tail[i]) restricted[u].push_back(i);
    }
  }
  return recall_at_k(ranked, restricted, k);
}

RandomRankerExpectation random_ranker_expectation(const graph::BipartiteGraph& train,
                                                  std::span<const std::vector<std::size_t>> truth, std::size_t k) {
  if (truth.size() != train.num_users()) throw DimensionError("random_ranker_expectation: user count mismatch");
  RandomRankerExpectation e;
  double var_sum = 0.0;
  for (std::size_t u = 0; u < truth.size(); ++u) {
    if (truth[u].empty()) continue;
    const double c = static_cast<double>(train.num_items() - train.user_degree(u));
    std::size_t reachable = 0;
    for (std::size_t i : truth[u]) reachable += train.has_edge(u, i) ? 0 : 1;
    const double r = static_cast<double>(truth[u].size());
    const double kk = std::min(static_cast<double>(k), c);
    const double p = c > 0 ? static_cast<double>(reachable) / c : 0.0;
    // hits follow a hypergeometric law: kk draws from c candidates, `reachable` of them relevant
    e.recall_mean += kk * p / r;
    const double var_hits = c > 1 ? kk * p * (1.0 - p) * (c - kk) / (c - 1.0) : 0.0;
    var_sum += var_hits / (r * r);
    double disc = 0.0;
    for (std::size_t i = 1; i <= static_cast<std::size_t>(kk); ++i) disc += 1.0 / std::log2(static_cast<double>(i) + 1.0);
    e.ndcg_mean += p * disc / idcg(truth[u].size(), k);
    ++e.users;
  }
  if (e.users > 0) {
    const double n = static_cast<double>(e.users);
    e.recall_mean /= n;
    e.ndcg_mean /= n;
    e.recall_std = std::sqrt(var_sum) / n;
  }
  return e;
}

MetricsReport evaluate(const geometry::CurvatureSpace& space, const Matrix& users, const Matrix& items,
                       const graph::SplitDataset& split, std::span<const std::size_t> ks, double tail_quantile,
                       std::string run_id) {
  if (ks.empty()) throw ArgumentError("evaluate: no cutoffs requested");
  const std::size_t kmax = *std::max_element(ks.begin(), ks.end());
  const RankedList ranked = rank_items(space, users, items, split.train, kmax);
  const auto popularity = item_popularity(split.train);
  const auto tail = tail_items(popularity, tail_quantile);
  MetricsReport report;
  report.run_id = std::move(run_id);
  report.tail_quantile = tail_quantile;
  report.tail_item_count = static_cast<std::size_t>(std::count(tail.begin(), tail.end(), true));
  for (std::size_t k : ks) {
    KMetrics km;
    km.k = k;
    const MetricValue rec = recall_at_k(ranked, split.test, k);
    km.recall = rec.value;
    km.evaluated_users = rec.evaluated_users;
    km.skipped_users = rec.skipped_users;
    km.ndcg = ndcg_at_k(ranked, split.test, k).value;
    km.tail_percentage = tail_percentage_at_k(ranked, tail, k).value;
    const MetricValue tr = tail_recall_at_k(ranked, split.test, tail, k);
    km.tail_recall = tr.value;
    km.tail_recall_users = tr.evaluated_users;
    report.per_k.push_back(km);
  }
  return report;
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["run_id"] = run_id;
  j["tail_quantile"] = tail_quantile;
  j["tail_items"] = tail_item_count;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& m : per_k) {
    nlohmann::ordered_json r;
    r["k"] = m.k;
    r["recall"] = m.recall;
    r["ndcg"] = m.ndcg;
    r["tail_pct"] = m.tail_percentage;
    r["tail_recall"] = m.tail_recall;
    r["evaluated_users"] = m.evaluated_users;
    r["skipped_users"] = m.skipped_users;
    r["tail_recall_users"] = m.tail_recall_users;
    rows.push_back(std::move(r));
  }
  j["metrics"] = std::move(rows);
  return j.dump();
}

std::string MetricsReport::to_csv_rows() const {
  std::ostringstream os;
  os << std::setprecision(17);
  for (const auto& m : per_k) {
    os << run_id << ',' << m.k << ',' << m.recall << ',' << m.ndcg << ',' << m.tail_percentage << '\n';
  }
  return os.str();
}

void append_csv(const std::filesystem::path& path, const MetricsReport& report) {
  std::error_code ec;
  const bool fresh = !std::filesystem::exists(path, ec) || std::filesystem::file_size(path, ec) == 0;
  std::ofstream os(path, std::ios::app);
  if (!os) throw ArgumentError("append_csv: cannot open " + path.string());
  if (fresh) os << "run_id,k,recall,ndcg,tail_pct\n";
  os << report.to_csv_rows();
  if (!os.flush()) throw ArgumentError("append_csv: write to " + path.string() + " failed");
}

}  // namespace hgf::eval
