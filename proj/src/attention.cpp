#include "hgformer/attention.hpp"

#include <cmath>
#include <memory>
#include <sstream>
#include <string>

#include "hgformer/error.hpp"
#include "hgformer/fpmode.hpp"

namespace hgf::attention {

namespace gk = geometry::kernel;
using geometry::CurvatureSpace;
using geometry::LorentzPoint;

void AttentionConfig::validate() const {
  if (heads < 1) throw ArgumentError("attention: heads must be >= 1");
  if (!(temperature > 0.0)) throw ArgumentError("attention: temperature must be > 0");
  if (sim_scale < 0.0) throw ArgumentError("attention: similarity scale c1 must be >= 0");
  if (mode == Mode::linear && similarity != Similarity::hsm) {
    throw ArgumentError("attention: the linear path supports the hsm similarity only");
  }
  if (mode == Mode::linear && feature_dim < 1) throw ArgumentError("attention: feature_dim must be >= 1");
}

HeadParams HeadParams::identity(std::size_t d) {
  const auto n = static_cast<Index>(d);
  const Matrix eye = Matrix::Identity(n, n);
  return {{eye, eye, eye}, {eye, eye, eye}};
}

HeadParams HeadParams::random(std::size_t d, double noise, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, noise);
  HeadParams h = identity(d);
  for (Matrix* m : {&h.user_to_item.query, &h.user_to_item.key, &h.user_to_item.value, &h.item_to_user.query,
                    &h.item_to_user.key, &h.item_to_user.value}) {
    for (Index i = 0; i < m->size(); ++i) m->data()[i] += normal(rng);
  }
  return h;
}

RandomFeatureMap RandomFeatureMap::sample(std::size_t m, std::size_t d, std::uint64_t seed) {
  if (m < 1 || d < 1) throw ArgumentError("RandomFeatureMap: m and d must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  RandomFeatureMap f;
  f.seed_ = seed;
  f.omega_.resize(static_cast<Index>(m), static_cast<Index>(d));
  for (Index i = 0; i < f.omega_.size(); ++i) f.omega_.data()[i] = normal(rng);
  return f;
}

RandomFeatureMap RandomFeatureMap::from_omega(Matrix omega, std::uint64_t seed) {
  if (omega.rows() < 1 || omega.cols() < 1) throw ArgumentError("RandomFeatureMap: omega must be nonempty");
  if (!omega.allFinite()) throw ArgumentError("RandomFeatureMap: omega must be finite");
  RandomFeatureMap f;
  f.seed_ = seed;
  f.omega_ = std::move(omega);
  return f;
}

NormParams NormParams::identity(std::size_t d) { return {Vector(d, 1.0), Vector(d, 0.0), 1e-5}; }

// ---- kernels ------------------------------------------------------------------------

double hsm(const LorentzPoint& x, const LorentzPoint& y) { return std::exp(geometry::minkowski_inner(x.coords(), y.coords())); }

Vector phi(const CurvatureSpace& space, const LorentzPoint& x, const RandomFeatureMap& features, double temperature,
           OpCounter* counter) {
  if (x.size() != space.ambient_dim() || features.dim() != space.dim()) {
    throw DimensionError("phi: feature map and point dimensions disagree");
  }
  ad::Tape tape(false);
  Matrix pt(1, x.size());
  for (std::size_t i = 0; i < x.size(); ++i) pt(0, static_cast<Index>(i)) = x[i];
  const Matrix out = random_features(space, tape.constant(pt), features, temperature, counter).value();
  return Vector(out.data(), out.data() + out.size());
}

double factorized_kernel(const CurvatureSpace& space, const LorentzPoint& x, const LorentzPoint& y,
                         double temperature) {
  double s2 = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) s2 += (x[i] + y[i]) * (x[i] + y[i]);
  return std::exp((2.0 * space.k() - x.time() * x.time() - y.time() * y.time() + s2) / (2.0 * temperature));
}

// ---- differentiable operators ----------------------------------------------------------

ad::Var hyp_matmul_rows(const CurvatureSpace& space, ad::Var points, ad::Var w, OpCounter* counter) {
  const auto d = static_cast<Index>(space.dim());
  if (w.rows() != d || w.cols() != d) throw DimensionError("hyp_matmul_rows: W must be d x d");
  if (counter) counter->projection_madds += static_cast<std::uint64_t>(points.rows() * d * d);
  return ad::lift_rows(space.k(), ad::matmul_nt(ad::unlift_rows(space.k(), points), w));
}

ad::Var random_features(const CurvatureSpace& space, ad::Var points, const RandomFeatureMap& features,
                        double temperature, OpCounter* counter, FeatureShift shift) {
  const auto d = static_cast<Index>(space.dim());
  if (points.cols() != d + 1 || static_cast<Index>(features.dim()) != d) {
    throw DimensionError("random_features: feature map and point dimensions disagree");
  }
  const auto omega = std::make_shared<const Matrix>(features.omega());
  const Index n = points.rows();
  const Index m = omega->rows();
  const double k = space.k();
  const double inv_sqrt_tau = 1.0 / std::sqrt(temperature);
  const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(m));
  const Matrix& x = points.value();

  Matrix expo = x.rightCols(d) * omega->transpose() * inv_sqrt_tau;
  for (Index r = 0; r < n; ++r) expo.row(r).array() += (k - x(r, 0) * x(r, 0)) / (2.0 * temperature);
  std::uint64_t clamps = 0;
  for (Index i = 0; i < expo.size(); ++i) {
    if (expo.data()[i] > kFeatureExponentClamp) {
      expo.data()[i] = kFeatureExponentClamp;
      ++clamps;
    }
  }
  const bool any_clamped = clamps > 0;
  Matrix mask;
  if (any_clamped) mask = (expo.array() < kFeatureExponentClamp).cast<double>().matrix();
  if (shift == FeatureShift::per_row && n > 0) {
    for (Index r = 0; r < n; ++r) expo.row(r).array() -= expo.row(r).maxCoeff();
  } else if (shift == FeatureShift::global && expo.size() > 0) {
    expo.array() -= expo.maxCoeff();
  }
  Matrix out = (expo.array().exp() * inv_sqrt_m).matrix();
  if (counter) {
    counter->core_madds += static_cast<std::uint64_t>(n * m * d);
    counter->clamp_events += clamps;
  }
  return points.tape()->record(
      std::move(out), {points},
      [points, omega, d, temperature, inv_sqrt_tau, any_clamped, mask = std::move(mask)](ad::Tape& t, std::size_t self) {
        if (!t.requires_grad(points.id())) return;
        const Matrix& g = t.grad(self);
        const Matrix& f = t.value(self);
        Matrix de = g.cwiseProduct(f);
        if (any_clamped) de = de.cwiseProduct(mask);
        Matrix& gx = t.grad(points.id());
        const Matrix& x = points.value();
        gx.rightCols(d).noalias() += de * (*omega) * inv_sqrt_tau;
        const Eigen::VectorXd row_sums = de.rowwise().sum();
        gx.col(0).array() -= row_sums.array() * x.col(0).array() / temperature;
      });
}

namespace {

void check_inputs(const CurvatureSpace& space, const AttentionConfig& cfg, std::span<const ProjectionVars> heads,
                  const ad::Var& queries, const ad::Var& keys) {
  cfg.validate();
  if (heads.size() != cfg.heads) throw ArgumentError("attention: number of head parameter sets != cfg.heads");
  if (keys.rows() < 1) throw ArgumentError("attention: at least one key is required");
  const auto amb = static_cast<Index>(space.ambient_dim());
  if (queries.cols() != amb || keys.cols() != amb) throw DimensionError("attention: point dimension mismatch");
}

}  // namespace

std::vector<ad::Var> exact_cross_attention(const CurvatureSpace& space, const AttentionConfig& cfg,
                                           std::span<const ProjectionVars> heads, ad::Var queries, ad::Var keys,
                                           OpCounter* counter) {
  check_inputs(space, cfg, heads, queries, keys);
  const double k = space.k();
  const auto nq = static_cast<std::uint64_t>(queries.rows());
  const auto nk = static_cast<std::uint64_t>(keys.rows());
  const auto amb = static_cast<std::uint64_t>(space.ambient_dim());
  std::vector<ad::Var> out;
  out.reserve(heads.size());
  for (const ProjectionVars& h : heads) {
    ad::Var q = hyp_matmul_rows(space, queries, h.query, counter);
    ad::Var kk = hyp_matmul_rows(space, keys, h.key, counter);
    ad::Var v = hyp_matmul_rows(space, keys, h.value, counter);
    ad::Var sim = ad::minkowski_scores(q, kk);
    if (cfg.similarity == Similarity::distance) {
      sim = ad::add_scalar(ad::scale(ad::distance_from_inner(k, sim), -cfg.sim_scale), cfg.sim_offset);
    }
    ad::Var w = ad::softmax_rows(ad::scale(sim, 1.0 / cfg.temperature));
    ad::Var agg = ad::matmul(w, v);
    if (counter) counter->core_madds += 2 * nq * nk * amb;
    out.push_back(ad::normalize_timelike_rows(k, agg));
  }
  return out;
}

std::vector<ad::Var> linear_cross_attention(const CurvatureSpace& space, const AttentionConfig& cfg,
                                            std::span<const ProjectionVars> heads, const RandomFeatureMap& features,
                                            ad::Var queries, ad::Var keys, OpCounter* counter) {
  check_inputs(space, cfg, heads, queries, keys);
  if (cfg.mode != Mode::linear) throw ArgumentError("linear_cross_attention: config mode is not linear");
  if (features.dim() != space.dim()) throw DimensionError("linear_cross_attention: feature map dimension mismatch");
  const double k = space.k();
  const auto nq = static_cast<std::uint64_t>(queries.rows());
  const auto nk = static_cast<std::uint64_t>(keys.rows());
  const auto amb = static_cast<std::uint64_t>(space.ambient_dim());
  const auto m = static_cast<std::uint64_t>(features.num_features());
  std::vector<ad::Var> out;
  out.reserve(heads.size());
  for (const ProjectionVars& h : heads) {
    ad::Var q = hyp_matmul_rows(space, queries, h.query, counter);
    ad::Var kk = hyp_matmul_rows(space, keys, h.key, counter);
    ad::Var v = hyp_matmul_rows(space, keys, h.value, counter);
    // per-query and per-pass factors cancel between numerator and denominator
    ad::Var fq = random_features(space, q, features, cfg.temperature, counter, FeatureShift::per_row);
    ad::Var fk = random_features(space, kk, features, cfg.temperature, counter, FeatureShift::global);
    ad::Var kv = ad::matmul_tn(fk, v);   // m x (d+1)
    ad::Var z = ad::col_sum(fk);         // 1 x m
    ad::Var num = ad::matmul(fq, kv);    // nq x (d+1)
    ad::Var den = ad::matmul_nt(fq, z);  // nq x 1
    if (counter) counter->core_madds += nk * m * amb + nk * m + nq * m * amb + nq * m;
    const Matrix& dv = den.value();
    for (Index r = 0; r < dv.rows(); ++r) {
      if (!(dv(r, 0) >= kMinDenominator)) {
        std::ostringstream msg;
        msg << "linear attention: denominator " << dv(r, 0) << " below 1e-30 for query " << r;
        throw NumericError(msg.str());
      }
    }
    out.push_back(ad::normalize_timelike_rows(k, ad::row_divide(num, den)));
  }
  return out;
}

ad::Var aggregate_heads(const CurvatureSpace& space, std::span<const ad::Var> per_head) {
  if (per_head.empty()) throw ArgumentError("aggregate_heads: no heads");
  if (per_head.size() == 1) return per_head.front();
  ad::Var s = per_head.front();
  for (std::size_t h = 1; h < per_head.size(); ++h) s = ad::add(s, per_head[h]);
  return ad::normalize_timelike_rows(space.k(), s);
}

ad::Var hyperbolic_normalize(const CurvatureSpace& space, ad::Var points, ad::Var gamma, ad::Var beta, double eps) {
  const auto d = static_cast<Index>(space.dim());
  const Index n = points.rows();
  if (n < 1) throw ArgumentError("hyperbolic_normalize: empty point set");
  if (points.cols() != d + 1 || gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d) {
    throw DimensionError("hyperbolic_normalize: parameter shapes do not match the space");
  }
  if (!(eps > 0.0)) throw ArgumentError("hyperbolic_normalize: eps must be > 0");
  const double k = space.k();
  ad::Tape& tape = *points.tape();

  Matrix origin = Matrix::Zero(n, d + 1);
  origin.col(0).setConstant(space.sqrt_k());
  ad::Var o = tape.constant(std::move(origin));

  ad::Var mu = ad::broadcast_rows(ad::normalize_timelike_rows(k, ad::col_sum(points)), n);
  ad::Var variance = ad::mean(ad::square(ad::distance_rows(k, points, mu)));
  ad::Var at_origin = ad::transport_rows(k, mu, o, ad::log_map_rows(k, mu, points));
  ad::Var scaled = ad::scalar_mul(ad::col_scale(ad::col_slice(at_origin, 1, d), gamma), ad::rsqrt_plus(variance, eps));
  ad::Var shift = ad::broadcast_rows(ad::lift_rows(k, beta), n);
  ad::Var moved = ad::transport_rows(k, o, shift, ad::prepend_zero_col(scaled));
  return ad::exp_map_rows(k, shift, moved);
}

// ---- value API --------------------------------------------------------------------------

namespace {

std::vector<ProjectionVars> head_constants(ad::Tape& tape, std::span<const HeadParams> heads, Direction dir,
                                           bool tie) {
  std::vector<ProjectionVars> out;
  for (const HeadParams& h : heads) {
    const ProjectionSet& p = (dir == Direction::user_to_item || tie) ? h.user_to_item : h.item_to_user;
    out.push_back({tape.constant(p.query), tape.constant(p.key), tape.constant(p.value)});
  }
  return out;
}

std::vector<PointMatrix> values_of(const std::vector<ad::Var>& vars) {
  std::vector<PointMatrix> out;
  out.reserve(vars.size());
  for (const auto& v : vars) out.push_back(v.value());
  return out;
}

}  // namespace

std::vector<PointMatrix> exact_cross_attention(const CurvatureSpace& space, const AttentionConfig& cfg,
                                               std::span<const HeadParams> heads, const PointMatrix& users,
                                               const PointMatrix& items, Direction direction, OpCounter* counter) {
  ad::Tape tape(false);
  const auto hv = head_constants(tape, heads, direction, cfg.tie_directions);
  const bool u2i = direction == Direction::user_to_item;
  ad::Var q = tape.constant(u2i ? users : items);
  ad::Var kv = tape.constant(u2i ? items : users);
  return values_of(exact_cross_attention(space, cfg, hv, q, kv, counter));
}

std::vector<PointMatrix> linear_cross_attention(const CurvatureSpace& space, const AttentionConfig& cfg,
                                                std::span<const HeadParams> heads, const RandomFeatureMap& features,
                                                const PointMatrix& users, const PointMatrix& items,
                                                Direction direction, OpCounter* counter) {
  const FlushDenormals ftz;
  ad::Tape tape(false);
  const auto hv = head_constants(tape, heads, direction, cfg.tie_directions);
  const bool u2i = direction == Direction::user_to_item;
  ad::Var q = tape.constant(u2i ? users : items);
  ad::Var kv = tape.constant(u2i ? items : users);
  return values_of(linear_cross_attention(space, cfg, hv, features, q, kv, counter));
}

PointMatrix aggregate_heads(const CurvatureSpace& space, std::span<const PointMatrix> per_head) {
  ad::Tape tape(false);
  std::vector<ad::Var> vars;
  for (const auto& p : per_head) vars.push_back(tape.constant(p));
  return aggregate_heads(space, vars).value();
}

PointMatrix hyperbolic_normalize(const CurvatureSpace& space, const PointMatrix& points, const NormParams& params) {
  if (params.gamma.size() != space.dim() || params.beta.size() != space.dim()) {
    throw DimensionError("hyperbolic_normalize: gamma/beta length must equal d");
  }
  ad::Tape tape(false);
  const auto d = static_cast<Index>(space.dim());
  Matrix g = Eigen::Map<const Matrix>(params.gamma.data(), 1, d);
  Matrix b = Eigen::Map<const Matrix>(params.beta.data(), 1, d);
  return hyperbolic_normalize(space, tape.constant(points), tape.constant(std::move(g)), tape.constant(std::move(b)),
                              params.eps)
      .value();
}

Matrix exact_attention_weights(const CurvatureSpace& space, const AttentionConfig& cfg, const PointMatrix& queries,
                               const PointMatrix& keys) {
  ad::Tape tape(false);
  ad::Var sim = ad::minkowski_scores(tape.constant(queries), tape.constant(keys));
  if (cfg.similarity == Similarity::distance) {
    sim = ad::add_scalar(ad::scale(ad::distance_from_inner(space.k(), sim), -cfg.sim_scale), cfg.sim_offset);
  }
  return ad::softmax_rows(ad::scale(sim, 1.0 / cfg.temperature)).value();
}

Matrix linear_attention_weights(const CurvatureSpace& space, const RandomFeatureMap& features, double temperature,
                                const PointMatrix& queries, const PointMatrix& keys) {
  const FlushDenormals ftz;
  ad::Tape tape(false);
  const Matrix fq =
      random_features(space, tape.constant(queries), features, temperature, nullptr, FeatureShift::per_row).value();
  const Matrix fk =
      random_features(space, tape.constant(keys), features, temperature, nullptr, FeatureShift::global).value();
  Matrix w = fq * fk.transpose();
  for (Index r = 0; r < w.rows(); ++r) w.row(r) /= w.row(r).sum();
  return w;
}

// ---- Monte Carlo oracles ---------------------------------------------------------------------

MonteCarloEstimate unbiased_hsm_estimate(const CurvatureSpace& space, const LorentzPoint& x, const LorentzPoint& y,
                                         std::size_t num_samples, std::uint64_t seed) {
  if (num_samples < 2) throw ArgumentError("unbiased_hsm_estimate: need at least 2 samples");
  const std::size_t d = space.dim();
  Vector z(d);
  for (std::size_t i = 0; i < d; ++i) z[i] = x[i + 1] + y[i + 1];
  const double t0 = x.time() + y.time();
  const double prefactor = std::exp((2.0 * space.k() - t0 * t0) / 2.0);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  // Welford accumulation of exp(omega . z)
  double mean = 0.0, m2 = 0.0;
  for (std::size_t s = 0; s < num_samples; ++s) {
    double dotp = 0.0;
    for (std::size_t i = 0; i < d; ++i) dotp += normal(rng) * z[i];
    const double v = std::exp(dotp);
    const double delta = v - mean;
    mean += delta / static_cast<double>(s + 1);
    m2 += delta * (v - mean);
  }
  const double var = m2 / static_cast<double>(num_samples - 1);
  return {prefactor * mean, prefactor * std::sqrt(var / static_cast<double>(num_samples)), num_samples};
}

double feature_error_bound(const CurvatureSpace& space, std::size_t m, double eps, double delta) {
  return std::sqrt(std::exp(3.0 * (delta - space.k())) / (static_cast<double>(m) * eps));
}

BoundCheck feature_error_bound_check(const CurvatureSpace& space, const LorentzPoint& x, const LorentzPoint& y,
                                     std::size_t m, double eps, double delta, std::size_t trials,
                                     std::uint64_t seed) {
  auto sq = [](const LorentzPoint& p) { return gk::dot(p.coords(), p.coords()); };
  // tolerate rounding in |x|^2 when the bound is tight (delta = K forces x = o)
  const double slack = 1e-12 * std::max(1.0, delta);
  if (sq(x) > delta + slack || sq(y) > delta + slack) {
    throw ArgumentError("feature_error_bound_check: points exceed the Euclidean norm bound delta");
  }
  if (trials < 1 || m < 1 || !(eps > 0.0)) throw ArgumentError("feature_error_bound_check: invalid arguments");
  BoundCheck out;
  out.bound = feature_error_bound(space, m, eps, delta);
  out.trials = trials;
  const double target = hsm(x, y);
  std::mt19937_64 seeds(seed);
  std::size_t violations = 0;
  double total = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto features = RandomFeatureMap::sample(m, space.dim(), seeds());
    const Vector px = phi(space, x, features);
    const Vector py = phi(space, y, features);
    const double err = std::abs(target - gk::dot(px, py));
    total += err;
    if (err > out.bound) ++violations;
  }
  out.violation_rate = static_cast<double>(violations) / static_cast<double>(trials);
  out.mean_error = total / static_cast<double>(trials);
  return out;
}

}  // namespace hgf::attention
