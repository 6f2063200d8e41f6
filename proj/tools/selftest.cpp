// Built-in property checks behind `hgformer selftest`.

#include <cmath>
#include <functional>
#include <ostream>
#include <random>
#include <sstream>

#include "cli.hpp"
#include "hgformer/error.hpp"
#include "hgformer/train.hpp"

namespace hgf::cli {

namespace {

using geometry::CurvatureSpace;
using geometry::LorentzPoint;
using geometry::TangentVector;
namespace gk = geometry::kernel;

constexpr std::size_t kCasesPerSpace = 300;

struct Sampler {
  std::mt19937_64 rng;
  std::normal_distribution<double> normal{0.0, 1.0};
  std::uniform_real_distribution<double> unit{0.0, 1.0};

  Vector direction(std::size_t n) {
    Vector v(n);
    double s = 0.0;
    for (auto& x : v) {
      x = normal(rng);
      s += x * x;
    }
    for (auto& x : v) x /= std::sqrt(s);
    return v;
  }

  LorentzPoint point(const CurvatureSpace& sp) {
    Vector e = direction(sp.dim());
    const double r = sp.sqrt_k() * unit(rng);
    for (auto& x : e) x *= r;
    return geometry::lift(sp, geometry::EuclideanVec(std::move(e)));
  }

  TangentVector tangent(const CurvatureSpace& sp, const LorentzPoint& x, double max_norm) {
    Vector w(sp.ambient_dim());
    for (auto& c : w) c = normal(rng);
    TangentVector v = geometry::project_to_tangent(sp, x, w);
    const double n = std::sqrt(std::max(gk::inner(v.vec, v.vec), 0.0));
    const double target = max_norm * sp.sqrt_k() * unit(rng);
    if (n > 0) {
      for (auto& c : v.vec) c *= target / n;
    }
    return v;
  }
};

using ExpFn = std::function<LorentzPoint(const CurvatureSpace&, const TangentVector&)>;

std::vector<CurvatureSpace> spaces() {
  std::vector<CurvatureSpace> out;
  for (std::size_t d : {2, 8, 64}) {
    for (double k : {0.1, 0.5, 1.0}) out.emplace_back(k, d);
  }
  return out;
}

double norm(std::span<const double> v) { return std::sqrt(gk::dot(v, v)); }

/// Runs `body` over random cases and reports the first violation.
SelftestCheck for_all_spaces(const std::string& name, std::uint64_t seed,
                             const std::function<std::string(const CurvatureSpace&, Sampler&)>& body) {
  SelftestCheck c{name, true, ""};
  Sampler s{std::mt19937_64(seed)};
  for (const auto& sp : spaces()) {
    for (std::size_t i = 0; i < kCasesPerSpace; ++i) {
      std::string why;
      try {
        why = body(sp, s);
      } catch (const std::exception& e) {
        why = std::string("exception: ") + e.what();
      }
      if (!why.empty()) {
        std::ostringstream os;
        os << why << " (d=" << sp.dim() << ", K=" << sp.k() << ", case " << i << ")";
        return {name, false, os.str()};
      }
    }
  }
  return c;
}

SelftestCheck gradient_suite(const std::string& name, attention::Mode mode) {
  std::mt19937_64 rng(17);
  std::vector<graph::Edge> edges;
  std::bernoulli_distribution coin(0.45);
  for (std::size_t u = 0; u < 5; ++u) {
    for (std::size_t i = 0; i < 5; ++i) {
      if (coin(rng) || i == u) edges.emplace_back(u, i);
    }
  }
  const auto g = graph::BipartiteGraph::from_edges(5, 5, edges);
  attention::AttentionConfig ac;
  ac.heads = 2;
  ac.mode = mode;
  ac.feature_dim = 16;
  train::InitConfig init;
  init.embedding_std = 0.4;
  init.projection_noise = 0.2;
  init.gamma_init = 1.0;
  auto state = train::init_model(CurvatureSpace(1.0, 4), 5, 5, ac, 0.5, 2, 23, init);
  const auto features = train::evaluation_features(state, 5);
  train::Triples batch;
  for (const auto& [u, i] : g.edges()) {
    batch.users.push_back(u);
    batch.positives.push_back(i);
    batch.negatives.push_back(train::sample_negative(g, u, rng));
  }
  // a large margin keeps every hinge active so all blocks receive gradient
  const train::LossConfig lc{4.0, 1};
  const auto r = train::gradient_check(state, g, batch, lc, &features, 100, 1e-4, 99);
  std::ostringstream os;
  os << "max relative error " << r.max_rel_error << " in " << r.worst_block;
  return {name, r.passed, os.str()};
}

}  // namespace

std::vector<SelftestCheck> run_selftest(bool inject_fault, std::ostream& log) {
  const ExpFn exp_fn = [inject_fault](const CurvatureSpace& sp, const TangentVector& v) {
    LorentzPoint y = geometry::exp_map(sp, v);
    if (!inject_fault) return y;
    Vector c = y.vector();
    c[0] += 1e-3;
    return LorentzPoint(std::move(c));
  };
  std::vector<SelftestCheck> out;
  auto report = [&](SelftestCheck c) {
    log << (c.passed ? "PASS " : "FAIL ") << c.name << (c.passed ? "" : ": " + c.detail) << '\n';
    out.push_back(std::move(c));
  };

  report(for_all_spaces("geometry.manifold_closure", 1, [&](const CurvatureSpace& sp, Sampler& s) -> std::string {
    const LorentzPoint x = s.point(sp);
    const LorentzPoint y = exp_fn(sp, s.tangent(sp, x, 5.0));
    if (!geometry::is_on_manifold(sp, y.coords())) return "Exp left the hyperboloid";
    const geometry::EuclideanVec e = geometry::unlift(sp, y);
    if (!geometry::is_on_manifold(sp, geometry::lift(sp, e).coords())) return "lift left the hyperboloid";
    return {};
  }));

  report(for_all_spaces("geometry.exp_log_inverse", 2, [&](const CurvatureSpace& sp, Sampler& s) -> std::string {
    const LorentzPoint x = s.point(sp);
    const TangentVector v = s.tangent(sp, x, 5.0);
    const TangentVector back = geometry::log_map(sp, x, exp_fn(sp, v));
    Vector diff(v.vec.size());
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = back.vec[i] - v.vec[i];
    if (norm(diff) > 1e-7 * std::max(1.0, norm(v.vec))) return "Log(Exp(v)) differs from v";
    return {};
  }));

  report(for_all_spaces("geometry.distance_axioms", 3, [&](const CurvatureSpace& sp, Sampler& s) -> std::string {
    const LorentzPoint x = s.point(sp), y = s.point(sp), z = s.point(sp);
    const double dxy = geometry::distance(sp, x, y), dyx = geometry::distance(sp, y, x);
    if (geometry::distance(sp, x, x) != 0.0) return "d(x,x) != 0";
    if (dxy < 0.0 || std::abs(dxy - dyx) > 1e-9) return "distance not symmetric and nonnegative";
    if (dxy > geometry::distance(sp, x, z) + geometry::distance(sp, z, y) + 1e-9) return "triangle inequality";
    return {};
  }));

  report(for_all_spaces("geometry.transport_isometry", 4, [&](const CurvatureSpace& sp, Sampler& s) -> std::string {
    const LorentzPoint x = s.point(sp), y = s.point(sp);
    const TangentVector v = s.tangent(sp, x, 5.0), w = s.tangent(sp, x, 5.0);
    const TangentVector pv = geometry::parallel_transport(sp, x, y, v);
    const TangentVector pw = geometry::parallel_transport(sp, x, y, w);
    const double scale = 1.0 + norm(v.vec) * norm(w.vec);
    if (std::abs(gk::inner(pv.vec, pw.vec) - gk::inner(v.vec, w.vec)) > 1e-8 * scale) return "inner product changed";
    if (!geometry::is_tangent(pv)) return "transported vector not tangent";
    return {};
  }));

  report(for_all_spaces("geometry.centroid_on_manifold", 5, [&](const CurvatureSpace& sp, Sampler& s) -> std::string {
    std::vector<LorentzPoint> pts;
    for (int i = 0; i < 4; ++i) pts.push_back(s.point(sp));
    if (!geometry::is_on_manifold(sp, geometry::centroid(sp, pts).coords())) return "centroid off the hyperboloid";
    return {};
  }));

  {
    const CurvatureSpace sp(1.0, 2);
    const LorentzPoint o = LorentzPoint::origin(sp);
    const LorentzPoint y({std::cosh(1.0), std::sinh(1.0), 0.0});
    const auto est = attention::unbiased_hsm_estimate(sp, o, y, 200000, 8);
    const double target = attention::hsm(o, y);
    const auto at_origin = attention::unbiased_hsm_estimate(sp, o, o, 1000, 8);
    const bool ok = std::abs(est.mean - target) <= 4.0 * est.std_error &&
                    std::abs(at_origin.mean - attention::hsm(o, o)) <= 1e-15;
    std::ostringstream os;
    os << "estimate " << est.mean << " +- " << est.std_error << " vs " << target;
    report({"attention.unbiased_hsm_estimator", ok, os.str()});
  }

  {
    const CurvatureSpace sp(1.0, 4);
    Sampler s{std::mt19937_64(6)};
    const LorentzPoint x = s.point(sp), y = s.point(sp);
    const double target = attention::factorized_kernel(sp, x, y);
    const std::size_t trials = 2000;
    double mean = 0.0, m2 = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
      const auto f = attention::RandomFeatureMap::sample(64, 4, 1000 + t);
      const double v = gk::dot(attention::phi(sp, x, f), attention::phi(sp, y, f));
      const double delta = v - mean;
      mean += delta / static_cast<double>(t + 1);
      m2 += delta * (v - mean);
    }
    const double se = std::sqrt(m2 / static_cast<double>(trials - 1) / static_cast<double>(trials));
    std::ostringstream os;
    os << "mean " << mean << " +- " << se << " vs " << target;
    report({"attention.kernel_expectation", std::abs(mean - target) <= 5.0 * se, os.str()});
  }

  {
    const CurvatureSpace sp(1.0, 3);
    Sampler s{std::mt19937_64(7)};
    Matrix users(4, 4), items(1, 4);
    for (Index r = 0; r < 4; ++r) users.row(r) = Eigen::Map<const Eigen::RowVectorXd>(s.point(sp).vector().data(), 4);
    items.row(0) = Eigen::Map<const Eigen::RowVectorXd>(s.point(sp).vector().data(), 4);
    std::mt19937_64 rng(3);
    const std::vector<attention::HeadParams> heads = {attention::HeadParams::random(3, 0.1, rng)};
    attention::AttentionConfig ac;
    ac.mode = attention::Mode::exact;
    const auto ex = attention::exact_cross_attention(sp, ac, heads, users, items, attention::Direction::user_to_item);
    ac.mode = attention::Mode::linear;
    const auto f = attention::RandomFeatureMap::sample(8, 3, 1);
    const auto li = attention::linear_cross_attention(sp, ac, heads, f, users, items, attention::Direction::user_to_item);
    const double diff = (ex[0] - li[0]).cwiseAbs().maxCoeff();
    std::ostringstream os;
    os << "max difference " << diff;
    report({"attention.single_key_paths_agree", diff <= 1e-12, os.str()});
  }

  report(gradient_suite("train.gradient_check_exact", attention::Mode::exact));
  report(gradient_suite("train.gradient_check_linear", attention::Mode::linear));
  return out;
}

}  // namespace hgf::cli
