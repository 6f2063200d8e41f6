#include "hgformer/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hgformer/error.hpp"

namespace hgf::geometry {

namespace kernel {

double inner(In x, In y) noexcept {
  double s = -x[0] * y[0];
  for (std::size_t i = 1; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

double dot(In x, In y) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

double sinhc(double t) noexcept {
  if (t < 1e-4) {
    const double t2 = t * t;
    return 1.0 + t2 / 6.0 + t2 * t2 / 120.0;
  }
  return std::sinh(t) / t;
}

double sinhc_slope(double t) noexcept {
  if (t < 1e-3) {
    const double t2 = t * t;
    return 1.0 / 3.0 + t2 / 30.0 + t2 * t2 / 840.0;
  }
  return (t * std::cosh(t) - std::sinh(t)) / (t * t * t);
}

double arcosh_ratio(double a) noexcept {
  const double e = a - 1.0;
  if (e < 1e-6) {
    return 1.0 - e / 3.0 + 2.0 * e * e / 15.0 - 2.0 * e * e * e / 35.0;
  }
  return std::acosh(a) / std::sqrt(e * (a + 1.0));
}

double arcosh_ratio_slope(double a) noexcept {
  const double e = a - 1.0;
  if (e < 1e-4) {
    return -1.0 / 3.0 + 4.0 * e / 15.0 - 6.0 * e * e / 35.0;
  }
  return (1.0 - a * arcosh_ratio(a)) / (e * (a + 1.0));
}

namespace {

// out += c * J y
void add_scaled_j(double c, In y, Out out) noexcept {
  out[0] -= c * y[0];
  for (std::size_t i = 1; i < y.size(); ++i) out[i] += c * y[i];
}

void add_scaled(double c, In y, Out out) noexcept {
  for (std::size_t i = 0; i < y.size(); ++i) out[i] += c * y[i];
}

}  // namespace

double distance(double k, In x, In y) noexcept {
  // identical inputs give exactly 0 even when rounding in <x,x>_M lifts z past the clamp
  if (std::equal(x.begin(), x.end(), y.begin(), y.end())) return 0.0;
  const double z = -inner(x, y) / k;
  if (z <= kArcoshClamp) return 0.0;
  return std::sqrt(k) * std::acosh(z);
}

void distance_vjp(double k, In x, In y, double g, Out gx, Out gy) noexcept {
  if (std::equal(x.begin(), x.end(), y.begin(), y.end())) return;
  const double z = -inner(x, y) / k;
  if (z <= kArcoshClamp) return;
  const double c = -g * std::sqrt(k) / (k * std::sqrt((z - 1.0) * (z + 1.0)));
  add_scaled_j(c, y, gx);
  add_scaled_j(c, x, gy);
}

void exp_map(double k, In base, In v, Out out) {
  double n2 = inner(v, v);
  if (n2 < 0.0) {
    const double scale = 1.0 + dot(v, v);
    if (n2 < -1e-9 * scale) {
      throw InvalidTangentError("exp_map: tangent vector has negative Minkowski norm " +
                                std::to_string(n2));
    }
    n2 = 0.0;
  }
  const double t = std::sqrt(n2 / k);
  const double c = std::cosh(t);
  const double s = std::sqrt(n2) < kExpSmallNorm ? 1.0 : sinhc(t);
  for (std::size_t i = 0; i < base.size(); ++i) out[i] = c * base[i] + s * v[i];
}

void exp_map_vjp(double k, In base, In v, In g, Out gbase, Out gv) noexcept {
  const double n2 = std::max(0.0, inner(v, v));
  const double t = std::sqrt(n2 / k);
  const double c = std::cosh(t);
  const double s = sinhc(t);
  add_scaled(c, g, gbase);
  add_scaled(s, g, gv);
  const double coef = dot(g, base) * s + dot(g, v) * sinhc_slope(t);
  add_scaled_j(coef / k, v, gv);
}

void log_map(double k, In x, In y, Out out) noexcept {
  const double a = -inner(x, y) / k;
  const double h = arcosh_ratio(std::max(a, 1.0));
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = h * (y[i] - a * x[i]);
}

void log_map_vjp(double k, In x, In y, In g, Out gx, Out gy) noexcept {
  const double a = -inner(x, y) / k;
  const double ac = std::max(a, 1.0);
  const double h = arcosh_ratio(ac);
  // g . p with p = y - a x
  const double gp = dot(g, y) - a * dot(g, x);
  const double coef = (a > 1.0 ? arcosh_ratio_slope(ac) * gp : 0.0) - h * dot(g, x);
  add_scaled(-h * a, g, gx);
  add_scaled_j(-coef / k, y, gx);
  add_scaled(h, g, gy);
  add_scaled_j(-coef / k, x, gy);
}

void lift(double k, In e, Out out) noexcept {
  const double sk = std::sqrt(k);
  const double n = std::sqrt(dot(e, e));
  const double t = n / sk;
  out[0] = sk * std::cosh(t);
  const double s = n < kExpSmallNorm ? 1.0 : sinhc(t);
  for (std::size_t i = 0; i < e.size(); ++i) out[i + 1] = s * e[i];
}

void lift_vjp(double k, In e, In g, Out ge) noexcept {
  const double sk = std::sqrt(k);
  const double t = std::sqrt(dot(e, e)) / sk;
  const double s = sinhc(t);
  const In gs = g.subspan(1);
  add_scaled(s, gs, ge);
  const double coef = g[0] * sk * s + dot(gs, e) * sinhc_slope(t);
  add_scaled(coef / k, e, ge);
}

void unlift(double k, In x, Out out) noexcept {
  const double a = x[0] / std::sqrt(k);
  const double h = arcosh_ratio(std::max(a, 1.0));
  for (std::size_t i = 1; i < x.size(); ++i) out[i - 1] = h * x[i];
}

void unlift_vjp(double k, In x, In g, Out gx) noexcept {
  const double sk = std::sqrt(k);
  const double a = x[0] / sk;
  const double ac = std::max(a, 1.0);
  const double h = arcosh_ratio(ac);
  const In xs = x.subspan(1);
  for (std::size_t i = 0; i < g.size(); ++i) gx[i + 1] += h * g[i];
  if (a > 1.0) gx[0] += arcosh_ratio_slope(ac) / sk * dot(g, xs);
}

void normalize_timelike(double k, In s, Out out) {
  const double n2 = -inner(s, s);
  if (!(n2 > 0.0) || !(s[0] > 0.0)) {
    throw NumericError("centroid: weighted sum is not future-timelike (<s,s>_M = " +
                       std::to_string(-n2) + ")");
  }
  const double c = std::sqrt(k) / std::sqrt(n2);
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = c * s[i];
}

void normalize_timelike_vjp(double k, In s, In g, Out gs) noexcept {
  const double n2 = -inner(s, s);
  const double r = std::sqrt(n2);
  const double sk = std::sqrt(k);
  add_scaled(sk / r, g, gs);
  add_scaled_j(sk * dot(g, s) / (r * r * r), s, gs);
}

void transport(double k, In x, In y, In v, Out out) noexcept {
  const double b = inner(y, v) / (k - inner(x, y));
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] + b * (x[i] + y[i]);
}

void transport_vjp(double k, In x, In y, In v, In g, Out gx, Out gy, Out gv) noexcept {
  const double den = k - inner(x, y);
  const double nu = inner(y, v);
  const double b = nu / den;
  const double gsum = dot(g, x) + dot(g, y);
  add_scaled(1.0, g, gv);
  add_scaled_j(gsum / den, y, gv);
  add_scaled(b, g, gx);
  add_scaled_j(gsum * nu / (den * den), y, gx);
  add_scaled(b, g, gy);
  add_scaled_j(gsum / den, v, gy);
  add_scaled_j(gsum * nu / (den * den), x, gy);
}

void project_to_manifold(double k, In ambient, Out out) noexcept {
  double s = k;
  for (std::size_t i = 1; i < ambient.size(); ++i) {
    out[i] = ambient[i];
    s += ambient[i] * ambient[i];
  }
  out[0] = std::sqrt(s);
}

}  // namespace kernel

// ---- value-typed API --------------------------------------------------------

namespace {

void require_ambient(const CurvatureSpace& space, std::size_t n, const char* what) {
  if (n != space.ambient_dim()) {
    throw DimensionError(std::string(what) + ": expected ambient length " +
                         std::to_string(space.ambient_dim()) + ", got " + std::to_string(n));
  }
}

}  // namespace

CurvatureSpace::CurvatureSpace(double k, std::size_t dim) : k_(k), sqrt_k_(0.0), dim_(dim) {
  if (!(k > 0.0) || !std::isfinite(k)) throw ArgumentError("curvature parameter K must be > 0");
  if (dim < 1) throw ArgumentError("dimension d must be >= 1");
  sqrt_k_ = std::sqrt(k);
}

double CurvatureSpace::manifold_tolerance() const noexcept { return 1e-9 * std::max(1.0, k_); }

bool is_on_manifold(const CurvatureSpace& space, std::span<const double> x) {
  if (x.size() != space.ambient_dim()) return false;
  for (double v : x) {
    if (!std::isfinite(v)) return false;
  }
  return std::abs(kernel::inner(x, x) + space.k()) <= space.manifold_tolerance() &&
         x[0] >= space.sqrt_k() * (1.0 - 1e-15);
}

bool is_tangent(const TangentVector& v) {
  if (v.vec.size() != v.base.size()) return false;
  const double n = std::sqrt(kernel::dot(v.vec, v.vec));
  return std::abs(kernel::inner(v.base.coords(), v.vec)) <= 1e-8 * (1.0 + n);
}

LorentzPoint LorentzPoint::checked(const CurvatureSpace& space, Vector coords) {
  require_ambient(space, coords.size(), "LorentzPoint");
  if (!is_on_manifold(space, coords)) throw ArgumentError("LorentzPoint: coordinates are off the manifold");
  return LorentzPoint(std::move(coords));
}

LorentzPoint LorentzPoint::origin(const CurvatureSpace& space) {
  Vector o(space.ambient_dim(), 0.0);
  o[0] = space.sqrt_k();
  return LorentzPoint(std::move(o));
}

double minkowski_inner(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw DimensionError("minkowski_inner: length mismatch " + std::to_string(x.size()) + " vs " +
                         std::to_string(y.size()));
  }
  if (x.size() < 2) throw DimensionError("minkowski_inner: vectors need length >= 2");
  return kernel::inner(x, y);
}

double distance(const CurvatureSpace& space, const LorentzPoint& x, const LorentzPoint& y) {
  require_ambient(space, x.size(), "distance");
  require_ambient(space, y.size(), "distance");
  return kernel::distance(space.k(), x.coords(), y.coords());
}

LorentzPoint exp_map(const CurvatureSpace& space, const TangentVector& v) {
  require_ambient(space, v.base.size(), "exp_map");
  require_ambient(space, v.vec.size(), "exp_map");
  Vector out(space.ambient_dim());
  kernel::exp_map(space.k(), v.base.coords(), v.vec, out);
  return LorentzPoint(std::move(out));
}

TangentVector project_to_tangent(const CurvatureSpace& space, const LorentzPoint& x,
                                 std::span<const double> y) {
  require_ambient(space, x.size(), "project_to_tangent");
  require_ambient(space, y.size(), "project_to_tangent");
  const double c = kernel::inner(x.coords(), y) / space.k();
  Vector out(y.begin(), y.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c * x[i];
  return {x, std::move(out)};
}

TangentVector log_map(const CurvatureSpace& space, const LorentzPoint& x, const LorentzPoint& y) {
  require_ambient(space, x.size(), "log_map");
  require_ambient(space, y.size(), "log_map");
  Vector out(space.ambient_dim());
  kernel::log_map(space.k(), x.coords(), y.coords(), out);
  return {x, std::move(out)};
}

LorentzPoint lift(const CurvatureSpace& space, const EuclideanVec& e) {
  if (e.size() != space.dim()) throw DimensionError("lift: expected length " + std::to_string(space.dim()));
  Vector out(space.ambient_dim());
  kernel::lift(space.k(), e.coords(), out);
  return LorentzPoint(std::move(out));
}

EuclideanVec unlift(const CurvatureSpace& space, const LorentzPoint& x) {
  require_ambient(space, x.size(), "unlift");
  Vector out(space.dim());
  kernel::unlift(space.k(), x.coords(), out);
  return EuclideanVec(std::move(out));
}

LorentzPoint centroid(const CurvatureSpace& space, std::span<const LorentzPoint> points,
                      std::optional<std::span<const double>> weights) {
  if (points.empty()) throw ArgumentError("centroid: empty point set");
  if (weights && weights->size() != points.size()) {
    throw DimensionError("centroid: weights and points differ in length");
  }
  Vector s(space.ambient_dim(), 0.0);
  for (std::size_t n = 0; n < points.size(); ++n) {
    require_ambient(space, points[n].size(), "centroid");
    double w = 1.0;
    if (weights) {
      w = (*weights)[n];
      if (!(w > 0.0)) throw ArgumentError("centroid: weights must be positive");
    }
    for (std::size_t i = 0; i < s.size(); ++i) s[i] += w * points[n][i];
  }
  Vector out(space.ambient_dim());
  kernel::normalize_timelike(space.k(), s, out);
  return LorentzPoint(std::move(out));
}

TangentVector parallel_transport(const CurvatureSpace& space, const LorentzPoint& x,
                                 const LorentzPoint& y, const TangentVector& v) {
  require_ambient(space, x.size(), "parallel_transport");
  require_ambient(space, y.size(), "parallel_transport");
  require_ambient(space, v.vec.size(), "parallel_transport");
  if (x.vector() == y.vector()) return {y, v.vec};
  Vector out(space.ambient_dim());
  kernel::transport(space.k(), x.coords(), y.coords(), v.vec, out);
  return {y, std::move(out)};
}

LorentzPoint hyp_matmul(const CurvatureSpace& space, const Matrix& w, const LorentzPoint& x) {
  const auto d = static_cast<Index>(space.dim());
  if (w.rows() != d || w.cols() != d) {
    throw DimensionError("hyp_matmul: W must be " + std::to_string(d) + "x" + std::to_string(d));
  }
  require_ambient(space, x.size(), "hyp_matmul");
  Eigen::VectorXd e(d);
  kernel::unlift(space.k(), x.coords(), std::span<double>(e.data(), e.size()));
  const Eigen::VectorXd we = w * e;
  Vector out(space.ambient_dim());
  kernel::lift(space.k(), std::span<const double>(we.data(), we.size()), out);
  return LorentzPoint(std::move(out));
}

LorentzPoint project_to_manifold(const CurvatureSpace& space, std::span<const double> ambient) {
  require_ambient(space, ambient.size(), "project_to_manifold");
  Vector out(space.ambient_dim());
  kernel::project_to_manifold(space.k(), ambient, out);
  return LorentzPoint(std::move(out));
}

}  // namespace hgf::geometry
