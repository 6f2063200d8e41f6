#pragma once

// Reverse-mode differentiation over matrix-valued operators.
//
// Every node on the tape holds one dense matrix. Operators compute their value
// eagerly and, when any input requires a gradient, record a closure that
// pulls the output adjoint back onto the inputs. Geometry operators work row
// by row: a point set is an (n x d+1) matrix with one point per row.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "hgformer/types.hpp"

namespace hgf::ad {

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  /// Adjoint after Tape::backward. Zero matrix if no gradient reached this node.
  const Matrix& grad() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  /// With record_gradients = false no closures are stored; used for
  /// inference-only passes.
  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var parameter(Matrix value);

  /// Appends an operator node. `fn` is kept only if some input needs a gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward fn);

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and runs all closures in reverse.
  void backward(Var root);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  /// Adjoint buffer of a node, allocated as zeros on first use.
  Matrix& grad(std::size_t id);
  const Matrix& grad_or_zero(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };
  // deque keeps node references stable while the tape grows
  std::deque<Node> nodes_;
  bool recording_;
  mutable Matrix zero_;
};

// ---- generic operators -------------------------------------------------------

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
/// a^T * b
Var matmul_tn(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var square(Var a);
Var relu(Var a);
/// 1x1 sum of all entries
Var sum(Var a);
Var mean(Var a);
/// (n x c) -> (1 x c)
Var col_sum(Var a);
/// (1 x c) -> (n x c)
Var broadcast_rows(Var a, Index n);
/// multiplies every entry by the 1x1 value s
Var scalar_mul(Var a, Var s);
/// multiplies column j by v(0, j); v is 1 x c
Var col_scale(Var a, Var v);
/// divides row i by s(i, 0); s is n x 1
Var row_divide(Var a, Var s);
/// (s + eps)^(-1/2) elementwise
Var rsqrt_plus(Var s, double eps);
Var gather_rows(Var a, std::span<const std::size_t> rows);
Var concat_rows(Var a, Var b);
Var row_slice(Var a, Index begin, Index count);
Var col_slice(Var a, Index begin, Index count);
/// prepends a zero column: intrinsic tangent coordinates at o -> ambient
Var prepend_zero_col(Var a);
Var softmax_rows(Var a);

// ---- geometry row operators (K = curvature parameter) -----------------------

/// row-wise <x_i, y_i>_M, n x 1
Var minkowski_rows(Var x, Var y);
/// n x 1 distances
Var distance_rows(double k, Var x, Var y);
Var exp_map_rows(double k, Var base, Var v);
Var log_map_rows(double k, Var x, Var y);
Var transport_rows(double k, Var x, Var y, Var v);
/// (n x d) Euclidean -> (n x d+1) points
Var lift_rows(double k, Var e);
/// (n x d+1) points -> (n x d) intrinsic coordinates of Log_o
Var unlift_rows(double k, Var x);
Var normalize_timelike_rows(double k, Var s);

/// Q J K^T : all pairwise Minkowski inner products (N x M)
Var minkowski_scores(Var q, Var k);
/// elementwise sqrt(K) arcosh(-a / K), clamped like geometry::distance
Var distance_from_inner(double k, Var inner);

/// Compressed row adjacency: row r's neighbours are indices[offsets[r] .. offsets[r+1]).
struct Adjacency {
  std::span<const std::size_t> offsets;
  std::span<const std::size_t> indices;
};

/// out_r = self_r + sum_{c in adj(r)} other_c, summed in index order
Var neighbor_sum(Var self, Var other, Adjacency adj);

}  // namespace hgf::ad
