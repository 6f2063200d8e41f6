#include "hgformer/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hgformer/error.hpp"
#include "hgformer/geometry.hpp"
#include "hgformer/parallel.hpp"

namespace hgf::ad {

// ---- Var / Tape ---------------------------------------------------------------

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad_or_zero(id_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), false, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), recording_, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward fn) {
  bool needs = false;
  if (recording_) {
    for (const Var& v : inputs) {
      if (v.tape() != this) throw ArgumentError("autodiff: operands live on different tapes");
      needs = needs || nodes_[v.id()].requires_grad;
    }
  }
  nodes_.push_back(Node{std::move(value), Matrix(), needs, needs ? std::move(fn) : nullptr});
  return Var(this, nodes_.size() - 1);
}

Matrix& Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0 && n.value.size() != 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

const Matrix& Tape::grad_or_zero(std::size_t id) const {
  const Node& n = nodes_[id];
  if (n.grad.size() != 0 || n.value.size() == 0) return n.grad;
  zero_ = Matrix::Zero(n.value.rows(), n.value.cols());
  return zero_;
}

void Tape::backward(Var root) {
  if (root.tape() != this) throw ArgumentError("backward: root is not on this tape");
  if (root.rows() != 1 || root.cols() != 1) throw DimensionError("backward: root must be 1x1");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  grad(root.id())(0, 0) = 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && n.grad.size() != 0) n.backward(*this, i);
  }
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")");
  }
}

std::span<const double> row(const Matrix& m, Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}
std::span<double> row(Matrix& m, Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

// Adjoint buffer for an input, or nullptr when the input does not need one.
Matrix* grad_of(Tape& t, const Var& v) { return t.requires_grad(v.id()) ? &t.grad(v.id()) : nullptr; }

}  // namespace

// ---- generic operators -----------------------------------------------------------

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions differ");
  Matrix out = a.value() * b.value();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (auto* ga = grad_of(t, a)) ga->noalias() += g * b.value().transpose();
    if (auto* gb = grad_of(t, b)) gb->noalias() += a.value().transpose() * g;
  });
}

Var matmul_nt(Var a, Var b) {
  if (a.cols() != b.cols()) throw DimensionError("matmul_nt: inner dimensions differ");
  Matrix out = a.value() * b.value().transpose();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (auto* ga = grad_of(t, a)) ga->noalias() += g * b.value();
    if (auto* gb = grad_of(t, b)) gb->noalias() += g.transpose() * a.value();
  });
}

Var matmul_tn(Var a, Var b) {
  if (a.rows() != b.rows()) throw DimensionError("matmul_tn: inner dimensions differ");
  Matrix out = a.value().transpose() * b.value();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (auto* ga = grad_of(t, a)) ga->noalias() += b.value() * g.transpose();
    if (auto* gb = grad_of(t, b)) gb->noalias() += a.value() * g;
  });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Matrix out = a.value() + b.value();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (auto* ga = grad_of(t, a)) *ga += g;
    if (auto* gb = grad_of(t, b)) *gb += g;
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Matrix out = a.value() - b.value();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (auto* ga = grad_of(t, a)) *ga += g;
    if (auto* gb = grad_of(t, b)) *gb -= g;
  });
}

Var hadamard(Var a, Var b) {
  require_same_shape(a, b, "hadamard");
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (auto* ga = grad_of(t, a)) *ga += g.cwiseProduct(b.value());
    if (auto* gb = grad_of(t, b)) *gb += g.cwiseProduct(a.value());
  });
}

Var scale(Var a, double c) {
  Matrix out = c * a.value();
  return a.tape()->record(std::move(out), {a}, [a, c](Tape& t, std::size_t self) {
    if (auto* ga = grad_of(t, a)) *ga += c * t.grad(self);
  });
}

Var add_scalar(Var a, double c) {
  Matrix out = a.value().array() + c;
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    if (auto* ga = grad_of(t, a)) *ga += t.grad(self);
  });
}

Var square(Var a) {
  Matrix out = a.value().cwiseAbs2();
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    if (auto* ga = grad_of(t, a)) *ga += 2.0 * t.grad(self).cwiseProduct(a.value());
  });
}

Var relu(Var a) {
  Matrix out = a.value().cwiseMax(0.0);
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    if (auto* ga = grad_of(t, a)) {
      // subgradient 0 at the kink
      *ga += (a.value().array() > 0.0).select(t.grad(self), 0.0).matrix();
    }
  });
}

Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    if (auto* ga = grad_of(t, a)) ga->array() += t.grad(self)(0, 0);
  });
}

Var mean(Var a) {
  if (a.value().size() == 0) throw ArgumentError("mean: empty matrix");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var col_sum(Var a) {
  Matrix out = a.value().colwise().sum();
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    if (auto* ga = grad_of(t, a)) ga->rowwise() += t.grad(self).row(0);
  });
}

Var broadcast_rows(Var a, Index n) {
  if (a.rows() != 1) throw DimensionError("broadcast_rows: input must have one row");
  Matrix out = a.value().replicate(n, 1);
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    if (auto* ga = grad_of(t, a)) *ga += t.grad(self).colwise().sum();
  });
}

Var scalar_mul(Var a, Var s) {
  if (s.rows() != 1 || s.cols() != 1) throw DimensionError("scalar_mul: scalar must be 1x1");
  Matrix out = s.value()(0, 0) * a.value();
  return a.tape()->record(std::move(out), {a, s}, [a, s](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (auto* ga = grad_of(t, a)) *ga += s.value()(0, 0) * g;
    if (auto* gs = grad_of(t, s)) (*gs)(0, 0) += g.cwiseProduct(a.value()).sum();
  });
}

Var col_scale(Var a, Var v) {
  if (v.rows() != 1 || v.cols() != a.cols()) throw DimensionError("col_scale: scale must be 1 x cols");
  Matrix out = a.value().array().rowwise() * v.value().row(0).array();
  return a.tape()->record(std::move(out), {a, v}, [a, v](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (auto* ga = grad_of(t, a)) ga->array() += g.array().rowwise() * v.value().row(0).array();
    if (auto* gv = grad_of(t, v)) *gv += g.cwiseProduct(a.value()).colwise().sum();
  });
}

Var row_divide(Var a, Var s) {
  if (s.cols() != 1 || s.rows() != a.rows()) throw DimensionError("row_divide: divisor must be rows x 1");
  Matrix out = a.value().array().colwise() / s.value().col(0).array();
  return a.tape()->record(std::move(out), {a, s}, [a, s](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const auto& sv = s.value();
    if (auto* ga = grad_of(t, a)) ga->array() += g.array().colwise() / sv.col(0).array();
    if (auto* gs = grad_of(t, s)) {
      const Eigen::ArrayXd dots = g.cwiseProduct(a.value()).rowwise().sum().array();
      gs->col(0).array() -= dots / sv.col(0).array().square();
    }
  });
}

Var rsqrt_plus(Var s, double eps) {
  Matrix out = (s.value().array() + eps).rsqrt().matrix();
  return s.tape()->record(std::move(out), {s}, [s, eps](Tape& t, std::size_t self) {
    if (auto* gs = grad_of(t, s)) {
      *gs += (-0.5 * t.grad(self).array() * (s.value().array() + eps).pow(-1.5)).matrix();
    }
  });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Matrix out(static_cast<Index>(idx.size()), a.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= static_cast<std::size_t>(a.rows())) throw DimensionError("gather_rows: index out of range");
    out.row(static_cast<Index>(r)) = a.value().row(static_cast<Index>(idx[r]));
  }
  return a.tape()->record(std::move(out), {a}, [a, idx = std::move(idx)](Tape& t, std::size_t self) {
    if (auto* ga = grad_of(t, a)) {
      const Matrix& g = t.grad(self);
      for (std::size_t r = 0; r < idx.size(); ++r) ga->row(static_cast<Index>(idx[r])) += g.row(static_cast<Index>(r));
    }
  });
}

Var concat_rows(Var a, Var b) {
  if (a.cols() != b.cols()) throw DimensionError("concat_rows: column counts differ");
  Matrix out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a.value();
  out.bottomRows(b.rows()) = b.value();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (auto* ga = grad_of(t, a)) *ga += g.topRows(a.rows());
    if (auto* gb = grad_of(t, b)) *gb += g.bottomRows(b.rows());
  });
}

Var row_slice(Var a, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > a.rows()) throw DimensionError("row_slice: out of range");
  Matrix out = a.value().middleRows(begin, count);
  return a.tape()->record(std::move(out), {a}, [a, begin, count](Tape& t, std::size_t self) {
    if (auto* ga = grad_of(t, a)) ga->middleRows(begin, count) += t.grad(self);
  });
}

Var col_slice(Var a, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > a.cols()) throw DimensionError("col_slice: out of range");
  Matrix out = a.value().middleCols(begin, count);
  return a.tape()->record(std::move(out), {a}, [a, begin, count](Tape& t, std::size_t self) {
    if (auto* ga = grad_of(t, a)) ga->middleCols(begin, count) += t.grad(self);
  });
}

Var prepend_zero_col(Var a) {
  Matrix out = Matrix::Zero(a.rows(), a.cols() + 1);
  out.rightCols(a.cols()) = a.value();
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    if (auto* ga = grad_of(t, a)) *ga += t.grad(self).rightCols(a.cols());
  });
}

Var softmax_rows(Var a) {
  if (a.cols() == 0) throw ArgumentError("softmax_rows: no columns");
  Matrix out = a.value();
  for (Index r = 0; r < out.rows(); ++r) {
    const double mx = out.row(r).maxCoeff();
    out.row(r) = (out.row(r).array() - mx).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    if (auto* ga = grad_of(t, a)) {
      const Matrix& g = t.grad(self);
      const Matrix& y = t.value(self);
      const Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
      *ga += (y.array() * (g.array().colwise() - dots.array())).matrix();
    }
  });
}

// ---- geometry row operators ----------------------------------------------------------

namespace gk = geometry::kernel;

Var minkowski_rows(Var x, Var y) {
  require_same_shape(x, y, "minkowski_rows");
  const Matrix& xv = x.value();
  const Matrix& yv = y.value();
  Matrix out(xv.rows(), 1);
  for (Index r = 0; r < xv.rows(); ++r) out(r, 0) = gk::inner(row(xv, r), row(yv, r));
  return x.tape()->record(std::move(out), {x, y}, [x, y](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix* gx = grad_of(t, x);
    Matrix* gy = grad_of(t, y);
    for (Index r = 0; r < g.rows(); ++r) {
      const double c = g(r, 0);
      if (gx) {
        gx->row(r) += c * y.value().row(r);
        (*gx)(r, 0) -= 2.0 * c * y.value()(r, 0);
      }
      if (gy) {
        gy->row(r) += c * x.value().row(r);
        (*gy)(r, 0) -= 2.0 * c * x.value()(r, 0);
      }
    }
  });
}

Var distance_rows(double k, Var x, Var y) {
  require_same_shape(x, y, "distance_rows");
  const Matrix& xv = x.value();
  const Matrix& yv = y.value();
  Matrix out(xv.rows(), 1);
  parallel_for(static_cast<std::size_t>(xv.rows()), [&](std::size_t b, std::size_t e) {
    for (auto r = static_cast<Index>(b); r < static_cast<Index>(e); ++r) out(r, 0) = gk::distance(k, row(xv, r), row(yv, r));
  });
  return x.tape()->record(std::move(out), {x, y}, [x, y, k](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix* gx = grad_of(t, x);
    Matrix* gy = grad_of(t, y);
    Matrix sx, sy;
    if (!gx) { sx = Matrix::Zero(x.rows(), x.cols()); gx = &sx; }
    if (!gy) { sy = Matrix::Zero(y.rows(), y.cols()); gy = &sy; }
    parallel_for(static_cast<std::size_t>(g.rows()), [&](std::size_t b, std::size_t e) {
      for (auto r = static_cast<Index>(b); r < static_cast<Index>(e); ++r) {
        gk::distance_vjp(k, row(x.value(), r), row(y.value(), r), g(r, 0), row(*gx, r), row(*gy, r));
      }
    });
  });
}

Var exp_map_rows(double k, Var base, Var v) {
  require_same_shape(base, v, "exp_map_rows");
  const Matrix& bv = base.value();
  const Matrix& vv = v.value();
  Matrix out(bv.rows(), bv.cols());
  for (Index r = 0; r < bv.rows(); ++r) gk::exp_map(k, row(bv, r), row(vv, r), row(out, r));
  return base.tape()->record(std::move(out), {base, v}, [base, v, k](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix* gb = grad_of(t, base);
    Matrix* gv = grad_of(t, v);
    Matrix sb, sv;
    if (!gb) { sb = Matrix::Zero(base.rows(), base.cols()); gb = &sb; }
    if (!gv) { sv = Matrix::Zero(v.rows(), v.cols()); gv = &sv; }
    parallel_for(static_cast<std::size_t>(g.rows()), [&](std::size_t b, std::size_t e) {
      for (auto r = static_cast<Index>(b); r < static_cast<Index>(e); ++r) {
        gk::exp_map_vjp(k, row(base.value(), r), row(v.value(), r), row(g, r), row(*gb, r), row(*gv, r));
      }
    });
  });
}

Var log_map_rows(double k, Var x, Var y) {
  require_same_shape(x, y, "log_map_rows");
  const Matrix& xv = x.value();
  const Matrix& yv = y.value();
  Matrix out(xv.rows(), xv.cols());
  parallel_for(static_cast<std::size_t>(xv.rows()), [&](std::size_t b, std::size_t e) {
    for (auto r = static_cast<Index>(b); r < static_cast<Index>(e); ++r) gk::log_map(k, row(xv, r), row(yv, r), row(out, r));
  });
  return x.tape()->record(std::move(out), {x, y}, [x, y, k](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix* gx = grad_of(t, x);
    Matrix* gy = grad_of(t, y);
    Matrix sx, sy;
    if (!gx) { sx = Matrix::Zero(x.rows(), x.cols()); gx = &sx; }
    if (!gy) { sy = Matrix::Zero(y.rows(), y.cols()); gy = &sy; }
    parallel_for(static_cast<std::size_t>(g.rows()), [&](std::size_t b, std::size_t e) {
      for (auto r = static_cast<Index>(b); r < static_cast<Index>(e); ++r) {
        gk::log_map_vjp(k, row(x.value(), r), row(y.value(), r), row(g, r), row(*gx, r), row(*gy, r));
      }
    });
  });
}

Var transport_rows(double k, Var x, Var y, Var v) {
  require_same_shape(x, y, "transport_rows");
  require_same_shape(x, v, "transport_rows");
  Matrix out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) gk::transport(k, row(x.value(), r), row(y.value(), r), row(v.value(), r), row(out, r));
  return x.tape()->record(std::move(out), {x, y, v}, [x, y, v, k](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix* gx = grad_of(t, x);
    Matrix* gy = grad_of(t, y);
    Matrix* gv = grad_of(t, v);
    Matrix sx, sy, sv;
    if (!gx) { sx = Matrix::Zero(x.rows(), x.cols()); gx = &sx; }
    if (!gy) { sy = Matrix::Zero(y.rows(), y.cols()); gy = &sy; }
    if (!gv) { sv = Matrix::Zero(v.rows(), v.cols()); gv = &sv; }
    for (Index r = 0; r < g.rows(); ++r) {
      gk::transport_vjp(k, row(x.value(), r), row(y.value(), r), row(v.value(), r), row(g, r), row(*gx, r), row(*gy, r),
                        row(*gv, r));
    }
  });
}

Var lift_rows(double k, Var e) {
  const Matrix& ev = e.value();
  Matrix out(ev.rows(), ev.cols() + 1);
  parallel_for(static_cast<std::size_t>(ev.rows()), [&](std::size_t b, std::size_t en) {
    for (auto r = static_cast<Index>(b); r < static_cast<Index>(en); ++r) gk::lift(k, row(ev, r), row(out, r));
  });
  return e.tape()->record(std::move(out), {e}, [e, k](Tape& t, std::size_t self) {
    if (auto* ge = grad_of(t, e)) {
      const Matrix& g = t.grad(self);
      parallel_for(static_cast<std::size_t>(g.rows()), [&](std::size_t b, std::size_t en) {
        for (auto r = static_cast<Index>(b); r < static_cast<Index>(en); ++r) gk::lift_vjp(k, row(e.value(), r), row(g, r), row(*ge, r));
      });
    }
  });
}

Var unlift_rows(double k, Var x) {
  const Matrix& xv = x.value();
  if (xv.cols() < 2) throw DimensionError("unlift_rows: points need ambient dimension >= 2");
  Matrix out(xv.rows(), xv.cols() - 1);
  parallel_for(static_cast<std::size_t>(xv.rows()), [&](std::size_t b, std::size_t e) {
    for (auto r = static_cast<Index>(b); r < static_cast<Index>(e); ++r) gk::unlift(k, row(xv, r), row(out, r));
  });
  return x.tape()->record(std::move(out), {x}, [x, k](Tape& t, std::size_t self) {
    if (auto* gx = grad_of(t, x)) {
      const Matrix& g = t.grad(self);
      parallel_for(static_cast<std::size_t>(g.rows()), [&](std::size_t b, std::size_t e) {
        for (auto r = static_cast<Index>(b); r < static_cast<Index>(e); ++r) gk::unlift_vjp(k, row(x.value(), r), row(g, r), row(*gx, r));
      });
    }
  });
}

Var normalize_timelike_rows(double k, Var s) {
  const Matrix& sv = s.value();
  Matrix out(sv.rows(), sv.cols());
  for (Index r = 0; r < sv.rows(); ++r) gk::normalize_timelike(k, row(sv, r), row(out, r));
  return s.tape()->record(std::move(out), {s}, [s, k](Tape& t, std::size_t self) {
    if (auto* gs = grad_of(t, s)) {
      const Matrix& g = t.grad(self);
      parallel_for(static_cast<std::size_t>(g.rows()), [&](std::size_t b, std::size_t e) {
        for (auto r = static_cast<Index>(b); r < static_cast<Index>(e); ++r) {
          gk::normalize_timelike_vjp(k, row(s.value(), r), row(g, r), row(*gs, r));
        }
      });
    }
  });
}

Var minkowski_scores(Var q, Var k) {
  if (q.cols() != k.cols()) throw DimensionError("minkowski_scores: ambient dimensions differ");
  Matrix kj = k.value();
  kj.col(0) *= -1.0;
  Matrix out = q.value() * kj.transpose();
  return q.tape()->record(std::move(out), {q, k}, [q, k](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (auto* gq = grad_of(t, q)) {
      Matrix kj2 = k.value();
      kj2.col(0) *= -1.0;
      gq->noalias() += g * kj2;
    }
    if (auto* gkv = grad_of(t, k)) {
      Matrix qj = q.value();
      qj.col(0) *= -1.0;
      gkv->noalias() += g.transpose() * qj;
    }
  });
}

Var distance_from_inner(double k, Var inner) {
  const double sk = std::sqrt(k);
  Matrix out = inner.value().unaryExpr([k, sk](double a) {
    const double z = -a / k;
    return z <= gk::kArcoshClamp ? 0.0 : sk * std::acosh(z);
  });
  return inner.tape()->record(std::move(out), {inner}, [inner, k, sk](Tape& t, std::size_t self) {
    if (auto* gi = grad_of(t, inner)) {
      const Matrix& g = t.grad(self);
      const Matrix& a = inner.value();
      for (Index i = 0; i < a.size(); ++i) {
        const double z = -a.data()[i] / k;
        if (z > gk::kArcoshClamp) gi->data()[i] -= g.data()[i] * sk / (k * std::sqrt((z - 1.0) * (z + 1.0)));
      }
    }
  });
}

Var neighbor_sum(Var self, Var other, Adjacency adj) {
  if (self.cols() != other.cols()) throw DimensionError("neighbor_sum: column counts differ");
  if (adj.offsets.size() != static_cast<std::size_t>(self.rows()) + 1) {
    throw DimensionError("neighbor_sum: adjacency row count does not match");
  }
  Matrix out = self.value();
  const Matrix& ov = other.value();
  for (Index r = 0; r < out.rows(); ++r) {
    for (std::size_t p = adj.offsets[r]; p < adj.offsets[r + 1]; ++p) {
      out.row(r) += ov.row(static_cast<Index>(adj.indices[p]));
    }
  }
  return self.tape()->record(std::move(out), {self, other}, [self, other, adj](Tape& t, std::size_t me) {
    const Matrix& g = t.grad(me);
    if (auto* gs = grad_of(t, self)) *gs += g;
    if (auto* go = grad_of(t, other)) {
      for (Index r = 0; r < g.rows(); ++r) {
        for (std::size_t p = adj.offsets[r]; p < adj.offsets[r + 1]; ++p) go->row(static_cast<Index>(adj.indices[p])) += g.row(r);
      }
    }
  });
}

}  // namespace hgf::ad
