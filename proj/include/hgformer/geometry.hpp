#pragma once

// Lorentz (hyperboloid) model of hyperbolic space.
//
// Points of H^{d,K} live in R^{d+1} with <x,x>_M = -K and x0 > 0, where
// <u,v>_M = -u0 v0 + sum_i u_i v_i. The north pole o = (sqrt K, 0, ..., 0)
// is the reference point for lifting Euclidean parameters.
//
// Two layers are exposed:
//  * value-typed functions on LorentzPoint / TangentVector / EuclideanVec,
//    which check shapes and are what client code should call;
//  * `kernel::` span routines (plus their vector-Jacobian products) that the
//    batched autodiff operators run row by row. Kernels never allocate and
//    accumulate gradients with +=.

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "hgformer/types.hpp"

namespace hgf::geometry {

class CurvatureSpace {
 public:
  /// Throws ArgumentError unless k > 0 and dim >= 1.
  CurvatureSpace(double k, std::size_t dim);

  double k() const noexcept { return k_; }
  double sqrt_k() const noexcept { return sqrt_k_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t ambient_dim() const noexcept { return dim_ + 1; }

  /// Allowed |<x,x>_M + K| for a point to count as on the manifold.
  double manifold_tolerance() const noexcept;

 private:
  double k_;
  double sqrt_k_;
  std::size_t dim_;
};

class LorentzPoint {
 public:
  LorentzPoint() = default;
  explicit LorentzPoint(Vector coords) : coords_(std::move(coords)) {}

  /// Like the constructor but throws ArgumentError when coords are off the manifold.
  static LorentzPoint checked(const CurvatureSpace& space, Vector coords);
  static LorentzPoint origin(const CurvatureSpace& space);

  std::span<const double> coords() const noexcept { return coords_; }
  std::span<const double> spatial() const noexcept { return std::span(coords_).subspan(1); }
  double time() const noexcept { return coords_.front(); }
  std::size_t size() const noexcept { return coords_.size(); }
  double operator[](std::size_t i) const noexcept { return coords_[i]; }
  const Vector& vector() const noexcept { return coords_; }

 private:
  Vector coords_;
};

/// Ambient vector `vec` in the tangent space at `base`.
struct TangentVector {
  LorentzPoint base;
  Vector vec;
};

class EuclideanVec {
 public:
  EuclideanVec() = default;
  explicit EuclideanVec(Vector coords) : coords_(std::move(coords)) {}

  std::span<const double> coords() const noexcept { return coords_; }
  std::size_t size() const noexcept { return coords_.size(); }
  double operator[](std::size_t i) const noexcept { return coords_[i]; }
  const Vector& vector() const noexcept { return coords_; }

 private:
  Vector coords_;
};

// ---- invariant checks -------------------------------------------------------

bool is_on_manifold(const CurvatureSpace& space, std::span<const double> x);
bool is_tangent(const TangentVector& v);

// ---- operations -------------------------------------------------------------

double minkowski_inner(std::span<const double> x, std::span<const double> y);

double distance(const CurvatureSpace& space, const LorentzPoint& x, const LorentzPoint& y);

/// Throws InvalidTangentError when <v,v>_M is negative beyond rounding.
LorentzPoint exp_map(const CurvatureSpace& space, const TangentVector& v);

/// Orthogonal projection of an ambient vector onto T_x: y + (<x,y>_M / K) x.
TangentVector project_to_tangent(const CurvatureSpace& space, const LorentzPoint& x,
                                 std::span<const double> y);

TangentVector log_map(const CurvatureSpace& space, const LorentzPoint& x, const LorentzPoint& y);

LorentzPoint lift(const CurvatureSpace& space, const EuclideanVec& e);
EuclideanVec unlift(const CurvatureSpace& space, const LorentzPoint& x);

/// Closed-form (weighted) hyperbolic centroid sqrt(K) s / sqrt|<s,s>_M|, s = sum w_i x_i.
LorentzPoint centroid(const CurvatureSpace& space, std::span<const LorentzPoint> points,
                      std::optional<std::span<const double>> weights = std::nullopt);

TangentVector parallel_transport(const CurvatureSpace& space, const LorentzPoint& x,
                                 const LorentzPoint& y, const TangentVector& v);

/// W (d x d) applied to the intrinsic coordinates of Log_o(x), then re-exponentiated.
LorentzPoint hyp_matmul(const CurvatureSpace& space, const Matrix& w, const LorentzPoint& x);

/// Keeps the spatial part and recomputes x0 = sqrt(K + |x~|^2).
LorentzPoint project_to_manifold(const CurvatureSpace& space, std::span<const double> ambient);

// ---- kernels ----------------------------------------------------------------

namespace kernel {

using In = std::span<const double>;
using Out = std::span<double>;

/// Arcosh arguments at or below this are treated as coincident points.
inline constexpr double kArcoshClamp = 1.0 + 1e-15;
/// Below this Minkowski norm Exp treats sinh(t)/t as its limit.
inline constexpr double kExpSmallNorm = 1e-8;

double inner(In x, In y) noexcept;
double dot(In x, In y) noexcept;

/// sinh(t)/t, series near 0.
double sinhc(double t) noexcept;
/// (t cosh t - sinh t) / t^3, series near 0. Derivative helper for sinhc.
double sinhc_slope(double t) noexcept;
/// arcosh(a) / sqrt(a^2 - 1) for a >= 1, series near 1.
double arcosh_ratio(double a) noexcept;
/// d/da arcosh_ratio(a).
double arcosh_ratio_slope(double a) noexcept;

double distance(double k, In x, In y) noexcept;
void distance_vjp(double k, In x, In y, double g, Out gx, Out gy) noexcept;

void exp_map(double k, In base, In v, Out out);
void exp_map_vjp(double k, In base, In v, In g, Out gbase, Out gv) noexcept;

void log_map(double k, In x, In y, Out out) noexcept;
void log_map_vjp(double k, In x, In y, In g, Out gx, Out gy) noexcept;

/// e has length d, out length d+1.
void lift(double k, In e, Out out) noexcept;
void lift_vjp(double k, In e, In g, Out ge) noexcept;

/// x has length d+1, out length d.
void unlift(double k, In x, Out out) noexcept;
void unlift_vjp(double k, In x, In g, Out gx) noexcept;

/// sqrt(K) s / sqrt(-<s,s>_M). Throws NumericError if s is not timelike.
void normalize_timelike(double k, In s, Out out);
void normalize_timelike_vjp(double k, In s, In g, Out gs) noexcept;

/// Transport of v from T_x to T_y along the geodesic, in the form
/// v + <y,v>_M / (K - <x,y>_M) (x + y), whose denominator is >= 2K.
void transport(double k, In x, In y, In v, Out out) noexcept;
void transport_vjp(double k, In x, In y, In v, In g, Out gx, Out gy, Out gv) noexcept;

void project_to_manifold(double k, In ambient, Out out) noexcept;

}  // namespace kernel

}  // namespace hgf::geometry
