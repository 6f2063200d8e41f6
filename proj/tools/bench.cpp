// Exact-vs-linear attention benchmark.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "cli.hpp"
#include "hgformer/fpmode.hpp"

namespace hgf::cli {

namespace {

using attention::PointMatrix;

PointMatrix random_points(const geometry::CurvatureSpace& space, std::size_t n, double radius, std::mt19937_64& rng) {
  const auto d = static_cast<Index>(space.dim());
  std::normal_distribution<double> normal(0.0, radius / std::sqrt(static_cast<double>(d)));
  Matrix e(static_cast<Index>(n), d);
  for (Index i = 0; i < e.size(); ++i) e.data()[i] = normal(rng);
  ad::Tape tape(false);
  return ad::lift_rows(space.k(), tape.constant(std::move(e))).value();
}

/// Softmax of the closed-form kernel expectation; for points on the
/// hyperboloid it reduces to softmax_j(q~ . k~ / tau).
Matrix factorized_softmax(const PointMatrix& q, const PointMatrix& k, double tau) {
  const Index d = q.cols() - 1;
  Matrix logits = q.rightCols(d) * k.rightCols(d).transpose() / tau;
  for (Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    logits.row(r) = (logits.row(r).array() - mx).exp().matrix();
    logits.row(r) /= logits.row(r).sum();
  }
  return logits;
}

template <class F>
double min_time_ms(std::size_t repeats, F&& fn) {
  double best = INFINITY;
  for (std::size_t r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<BenchRow> run_bench(const RunConfig& cfg) {
  const FlushDenormals ftz;
  const geometry::CurvatureSpace space(cfg.curvature, cfg.dim);
  attention::AttentionConfig ac;
  ac.temperature = cfg.temp;
  const std::vector<attention::HeadParams> heads = {attention::HeadParams::identity(cfg.dim)};
  std::vector<BenchRow> rows;
  for (std::size_t n : cfg.sizes) {
    std::mt19937_64 rng(cfg.seed + n);
    const PointMatrix users = random_points(space, n, 0.5, rng);
    const PointMatrix items = random_points(space, n, 0.5, rng);
    const std::size_t nq = std::min(cfg.error_queries, n);
    const PointMatrix queries = users.topRows(static_cast<Index>(nq));
    const Matrix target = factorized_softmax(queries, items, cfg.temp);

    double exact_ms = -1.0;
    std::uint64_t exact_madds = 0;
    if (static_cast<std::uint64_t>(n) * n <= cfg.exact_cap) {
      ac.mode = attention::Mode::exact;
      exact_ms = min_time_ms(cfg.bench_repeats, [&] {
        attention::OpCounter c;
        attention::exact_cross_attention(space, ac, heads, users, items, attention::Direction::user_to_item, &c);
        exact_madds = c.core_madds;
      });
    }
    for (std::size_t m : cfg.rf_dims) {
      ac.mode = attention::Mode::linear;
      ac.feature_dim = m;
      const auto features = attention::RandomFeatureMap::sample(m, cfg.dim, cfg.seed);
      BenchRow row;
      row.n = n;
      row.m = n;
      row.d = cfg.dim;
      row.features = m;
      row.exact_ms = exact_ms;
      row.exact_madds = exact_madds;
      row.linear_ms = min_time_ms(cfg.bench_repeats, [&] {
        attention::OpCounter c;
        attention::linear_cross_attention(space, ac, heads, features, users, items,
                                          attention::Direction::user_to_item, &c);
        row.linear_madds = c.core_madds;
      });
      std::vector<double> errs;
      for (std::size_t s = 0; s < cfg.bench_seeds; ++s) {
        const auto f = attention::RandomFeatureMap::sample(m, cfg.dim, cfg.seed * 1000003ULL + s);
        const Matrix w = attention::linear_attention_weights(space, f, cfg.temp, queries, items);
        errs.push_back((w - target).cwiseAbs().mean());
      }
      row.mean_weight_abs_err = median(errs);
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace hgf::cli
