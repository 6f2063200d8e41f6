#pragma once

// Hyperbolic user-item cross-attention.
//
// Queries, keys and values are hyperbolic matrix products of the input
// points. The exact path forms all N x M softmax weights; the linear path
// replaces exp(<q,k>_M / tau) with a positive random-feature inner product
// phi(q)^T phi(k) and reorders the sums so that cost is O((N + M) m d).
// Either way the weighted Euclidean sum of values is rescaled back onto the
// hyperboloid.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "hgformer/autodiff.hpp"
#include "hgformer/geometry.hpp"
#include "hgformer/types.hpp"

namespace hgf::attention {

using PointMatrix = Matrix;

enum class Similarity { hsm, distance };
enum class Mode { exact, linear };
enum class Direction { user_to_item, item_to_user };

struct AttentionConfig {
  std::size_t heads = 1;
  double temperature = 1.0;
  Similarity similarity = Similarity::hsm;
  /// c1 and c2 of the distance similarity -c1 d(q, k) + c2.
  double sim_scale = 1.0;
  double sim_offset = 0.0;
  Mode mode = Mode::linear;
  /// m, the number of random features.
  std::size_t feature_dim = 64;
  /// Use the user->item projections for the item->user direction too.
  bool tie_directions = false;

  /// Throws ArgumentError on invalid combinations (e.g. linear + distance).
  void validate() const;
};

struct ProjectionSet {
  Matrix query;
  Matrix key;
  Matrix value;
};

struct HeadParams {
  ProjectionSet user_to_item;
  ProjectionSet item_to_user;

  static HeadParams identity(std::size_t d);
  /// Identity plus N(0, noise^2) entries.
  static HeadParams random(std::size_t d, double noise, std::mt19937_64& rng);
};

/// m x d matrix of i.i.d. standard normal rows omega_1..omega_m.
class RandomFeatureMap {
 public:
  RandomFeatureMap() = default;
  static RandomFeatureMap sample(std::size_t m, std::size_t d, std::uint64_t seed);
  /// Wraps a given m x d matrix; `seed` is recorded only.
  static RandomFeatureMap from_omega(Matrix omega, std::uint64_t seed = 0);

  const Matrix& omega() const noexcept { return omega_; }
  std::size_t num_features() const noexcept { return static_cast<std::size_t>(omega_.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(omega_.cols()); }
  std::uint64_t seed() const noexcept { return seed_; }

 private:
  Matrix omega_;
  std::uint64_t seed_ = 0;
};

struct NormParams {
  Vector gamma;
  /// Tangent coordinates at o of the shift point beta = Exp_o((0, beta)).
  Vector beta;
  double eps = 1e-5;

  static NormParams identity(std::size_t d);
};

/// Multiply-add counts. `core` covers the similarity/aggregation work that
/// distinguishes the two paths; `projection` the W (x) x products.
struct OpCounter {
  std::uint64_t core_madds = 0;
  std::uint64_t projection_madds = 0;
  std::uint64_t clamp_events = 0;
};

/// Exponent clamp applied before exponentiation in phi.
inline constexpr double kFeatureExponentClamp = 80.0;
/// The linear path refuses (rescaled) denominators below this.
inline constexpr double kMinDenominator = 1e-30;

// ---- kernels ------------------------------------------------------------------

/// exp(<x, y>_M)
double hsm(const geometry::LorentzPoint& x, const geometry::LorentzPoint& y);

/// phi(x / sqrt(tau)): exp((K - x0^2) / (2 tau)) / sqrt(m) * [exp(omega_j . x~ / sqrt(tau))]_j
Vector phi(const geometry::CurvatureSpace& space, const geometry::LorentzPoint& x, const RandomFeatureMap& features,
           double temperature = 1.0, OpCounter* counter = nullptr);

/// Expectation of phi(x)^T phi(y) over omega ~ N(0, I), in closed form:
/// exp((2K - x0^2 - y0^2) / (2 tau)) exp(|x~ + y~|^2 / (2 tau)).
double factorized_kernel(const geometry::CurvatureSpace& space, const geometry::LorentzPoint& x,
                         const geometry::LorentzPoint& y, double temperature = 1.0);

// ---- differentiable operators --------------------------------------------------

struct ProjectionVars {
  ad::Var query;
  ad::Var key;
  ad::Var value;
};

/// Row-wise W (x) x = Exp_o(W Log_o(x)).
ad::Var hyp_matmul_rows(const geometry::CurvatureSpace& space, ad::Var points, ad::Var w, OpCounter* counter = nullptr);

/// Optional rescaling of a feature matrix by exp(-c). `per_row` takes c as the
/// largest exponent of each row, `global` as the largest exponent overall.
/// The linear path divides two sums that share these factors, so its output
/// is unchanged while the features stay clear of underflow.
enum class FeatureShift { none, per_row, global };

/// n x m matrix of phi(x_r / sqrt(tau)), optionally rescaled. The shift is
/// treated as a constant by the backward pass.
ad::Var random_features(const geometry::CurvatureSpace& space, ad::Var points, const RandomFeatureMap& features,
                        double temperature, OpCounter* counter = nullptr, FeatureShift shift = FeatureShift::none);

/// One output point set per head, for the queries in `queries`.
std::vector<ad::Var> exact_cross_attention(const geometry::CurvatureSpace& space, const AttentionConfig& cfg,
                                           std::span<const ProjectionVars> heads, ad::Var queries, ad::Var keys,
                                           OpCounter* counter = nullptr);
std::vector<ad::Var> linear_cross_attention(const geometry::CurvatureSpace& space, const AttentionConfig& cfg,
                                            std::span<const ProjectionVars> heads, const RandomFeatureMap& features,
                                            ad::Var queries, ad::Var keys, OpCounter* counter = nullptr);

/// Centroid of the per-head outputs, node by node.
ad::Var aggregate_heads(const geometry::CurvatureSpace& space, std::span<const ad::Var> per_head);

/// Hyperbolic normalization: centre on the centroid, rescale by the
/// hyperbolic variance, then shift to beta.
ad::Var hyperbolic_normalize(const geometry::CurvatureSpace& space, ad::Var points, ad::Var gamma, ad::Var beta,
                             double eps);

// ---- value API ------------------------------------------------------------------

std::vector<PointMatrix> exact_cross_attention(const geometry::CurvatureSpace& space, const AttentionConfig& cfg,
                                               std::span<const HeadParams> heads, const PointMatrix& users,
                                               const PointMatrix& items, Direction direction,
                                               OpCounter* counter = nullptr);
std::vector<PointMatrix> linear_cross_attention(const geometry::CurvatureSpace& space, const AttentionConfig& cfg,
                                                std::span<const HeadParams> heads, const RandomFeatureMap& features,
                                                const PointMatrix& users, const PointMatrix& items,
                                                Direction direction, OpCounter* counter = nullptr);
PointMatrix aggregate_heads(const geometry::CurvatureSpace& space, std::span<const PointMatrix> per_head);
PointMatrix hyperbolic_normalize(const geometry::CurvatureSpace& space, const PointMatrix& points,
                                 const NormParams& params);

/// Softmax weights of the exact path for already-projected queries and keys.
Matrix exact_attention_weights(const geometry::CurvatureSpace& space, const AttentionConfig& cfg,
                               const PointMatrix& queries, const PointMatrix& keys);
/// Weights phi(q)^T phi(k_j) / sum_n phi(q)^T phi(k_n) implied by the linear path.
Matrix linear_attention_weights(const geometry::CurvatureSpace& space, const RandomFeatureMap& features,
                                double temperature, const PointMatrix& queries, const PointMatrix& keys);

// ---- Monte Carlo oracles ------------------------------------------------------------

struct MonteCarloEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;
};

/// exp((2K - (x0 + y0)^2) / 2) * mean_s exp(omega_s . (x~ + y~)), omega_s ~ N(0, I).
/// Unbiased for hsm(x, y).
MonteCarloEstimate unbiased_hsm_estimate(const geometry::CurvatureSpace& space, const geometry::LorentzPoint& x,
                                         const geometry::LorentzPoint& y, std::size_t num_samples, std::uint64_t seed);

/// sqrt(exp(3 (delta - K)) / (m eps))
double feature_error_bound(const geometry::CurvatureSpace& space, std::size_t m, double eps, double delta);

struct BoundCheck {
  double bound = 0.0;
  double violation_rate = 0.0;
  double mean_error = 0.0;
  std::size_t trials = 0;
};

/// Draws `trials` independent feature maps of size m and reports how often
/// |hsm(x, y) - phi(x)^T phi(y)| exceeds feature_error_bound. Throws
/// ArgumentError unless |x|^2 <= delta and |y|^2 <= delta (Euclidean norms).
BoundCheck feature_error_bound_check(const geometry::CurvatureSpace& space, const geometry::LorentzPoint& x,
                                     const geometry::LorentzPoint& y, std::size_t m, double eps, double delta,
                                     std::size_t trials, std::uint64_t seed);

}  // namespace hgf::attention
