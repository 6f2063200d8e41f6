#include <gtest/gtest.h>

#include <vector>

#include "fd.hpp"
#include "generators.hpp"
#include "hgformer/autodiff.hpp"
#include "hgformer/error.hpp"

namespace hgf {
namespace {

using testing::Gen;
using Builder = testing::ScalarBuilder;

void expect_fd(const Builder& b, std::vector<Matrix> in) {
  const auto r = testing::fd_check(b, std::move(in));
  EXPECT_LE(r.max_rel_error, 1e-6);
}

TEST(Autodiff, ConstantsReceiveNoGradientClosures) {
  ad::Tape tape;
  auto a = tape.constant(Matrix::Ones(2, 2));
  auto b = tape.parameter(Matrix::Ones(2, 2));
  auto c = ad::add(a, a);
  EXPECT_FALSE(tape.requires_grad(c.id()));
  auto d = ad::hadamard(c, b);
  EXPECT_TRUE(tape.requires_grad(d.id()));
  tape.backward(ad::sum(d));
  EXPECT_EQ(b.grad(), Matrix::Constant(2, 2, 2.0));
  EXPECT_EQ(a.grad(), Matrix::Zero(2, 2));
}

TEST(Autodiff, GradientsAccumulateOverReuse) {
  ad::Tape tape;
  auto x = tape.parameter(Matrix::Constant(1, 1, 3.0));
  tape.backward(ad::add(ad::square(x), ad::scale(x, 2.0)));
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 8.0);
}

TEST(Autodiff, LinearAlgebraGradients) {
  Gen gen(1);
  expect_fd([](ad::Tape& t, const std::vector<ad::Var>& v) { return testing::project_scalar(t, ad::matmul(v[0], v[1])); },
            {gen.matrix(3, 4), gen.matrix(4, 2)});
  expect_fd([](ad::Tape& t, const std::vector<ad::Var>& v) { return testing::project_scalar(t, ad::matmul_nt(v[0], v[1])); },
            {gen.matrix(3, 4), gen.matrix(2, 4)});
  expect_fd([](ad::Tape& t, const std::vector<ad::Var>& v) { return testing::project_scalar(t, ad::matmul_tn(v[0], v[1])); },
            {gen.matrix(4, 3), gen.matrix(4, 2)});
}

TEST(Autodiff, ElementwiseGradients) {
  Gen gen(2);
  expect_fd([](ad::Tape& t, const std::vector<ad::Var>& v) {
    return testing::project_scalar(t, ad::sub(ad::add(v[0], v[1]), ad::hadamard(v[0], v[1])));
  }, {gen.matrix(3, 3), gen.matrix(3, 3)});
  expect_fd([](ad::Tape& t, const std::vector<ad::Var>& v) {
    return testing::project_scalar(t, ad::add_scalar(ad::scale(ad::square(v[0]), -0.5), 3.0));
  }, {gen.matrix(3, 3)});
  Matrix positive = gen.matrix(3, 2).cwiseAbs();
  positive.array() += 0.5;
  expect_fd([](ad::Tape& t, const std::vector<ad::Var>& v) { return testing::project_scalar(t, ad::rsqrt_plus(v[0], 1e-5)); },
            {positive});
  expect_fd([](ad::Tape& t, const std::vector<ad::Var>& v) { return testing::project_scalar(t, ad::row_divide(v[0], v[1])); },
            {gen.matrix(3, 4), Matrix(positive.col(0))});
}

TEST(Autodiff, ReluSubgradientIsZeroAtKink) {
  ad::Tape tape;
  Matrix m(1, 3);
  m << -1.0, 0.0, 2.0;
  auto x = tape.parameter(m);
  tape.backward(ad::sum(ad::relu(x)));
  EXPECT_EQ(x.grad()(0, 0), 0.0);
  EXPECT_EQ(x.grad()(0, 1), 0.0);
  EXPECT_EQ(x.grad()(0, 2), 1.0);
}

TEST(Autodiff, ReductionAndShapeGradients) {
  Gen gen(3);
  expect_fd([](ad::Tape&, const std::vector<ad::Var>& v) { return ad::mean(ad::square(v[0])); }, {gen.matrix(3, 4)});
  expect_fd([](ad::Tape& t, const std::vector<ad::Var>& v) {
    return testing::project_scalar(t, ad::broadcast_rows(ad::col_sum(v[0]), 5));
  }, {gen.matrix(3, 4)});
  expect_fd([](ad::Tape& t, const std::vector<ad::Var>& v) {
    return testing::project_scalar(t, ad::col_scale(ad::scalar_mul(v[0], v[1]), v[2]));
  }, {gen.matrix(3, 4), gen.matrix(1, 1), gen.matrix(1, 4)});
  const std::vector<std::size_t> rows = {2, 0, 2, 1};
  expect_fd([rows](ad::Tape& t, const std::vector<ad::Var>& v) {
    return testing::project_scalar(t, ad::gather_rows(v[0], rows));
  }, {gen.matrix(3, 2)});
  expect_fd([](ad::Tape& t, const std::vector<ad::Var>& v) {
    const auto c = ad::concat_rows(v[0], v[1]);
    return testing::project_scalar(t, ad::prepend_zero_col(ad::col_slice(ad::row_slice(c, 1, 3), 1, 2)));
  }, {gen.matrix(2, 3), gen.matrix(3, 3)});
  expect_fd([](ad::Tape& t, const std::vector<ad::Var>& v) { return testing::project_scalar(t, ad::softmax_rows(v[0])); },
            {gen.matrix(3, 5)});
}

TEST(Autodiff, SoftmaxRowsSumToOne) {
  Gen gen(4);
  ad::Tape tape(false);
  const Matrix s = ad::softmax_rows(tape.constant(gen.matrix(6, 9, 30.0))).value();
  for (Index r = 0; r < s.rows(); ++r) {
    EXPECT_NEAR(s.row(r).sum(), 1.0, 1e-12);
    EXPECT_GE(s.row(r).minCoeff(), 0.0);
  }
}

TEST(Autodiff, ShapeMismatchThrows) {
  ad::Tape tape;
  auto a = tape.parameter(Matrix::Ones(2, 3));
  auto b = tape.parameter(Matrix::Ones(2, 2));
  EXPECT_THROW(ad::add(a, b), DimensionError);
  EXPECT_THROW(ad::matmul(a, a), DimensionError);
}

TEST(Autodiff, GeometryScoreGradients) {
  Gen gen(5);
  expect_fd([](ad::Tape& t, const std::vector<ad::Var>& v) {
    return testing::project_scalar(t, ad::minkowski_scores(v[0], v[1]));
  }, {gen.matrix(3, 4), gen.matrix(2, 4)});
  const geometry::CurvatureSpace sp(1.0, 3);
  // keep the arcosh arguments strictly above 1
  const Matrix q = gen.points(sp, 3, 1.0), k = gen.points(sp, 2, 1.0);
  ad::Tape tape(false);
  const Matrix inner = ad::minkowski_scores(tape.constant(q), tape.constant(k)).value();
  Matrix shifted = inner;
  shifted.array() -= 0.5;
  expect_fd([](ad::Tape& t, const std::vector<ad::Var>& v) {
    return testing::project_scalar(t, ad::distance_from_inner(1.0, v[0]));
  }, {shifted});
}

TEST(Autodiff, NeighborSumMatchesDenseReference) {
  Gen gen(6);
  const std::vector<std::size_t> offsets = {0, 2, 2, 3};
  const std::vector<std::size_t> indices = {1, 3, 0};
  const ad::Adjacency adj{offsets, indices};
  const Matrix self = gen.matrix(3, 2), other = gen.matrix(4, 2);
  ad::Tape tape(false);
  const Matrix out = ad::neighbor_sum(tape.constant(self), tape.constant(other), adj).value();
  Matrix ref = self;
  ref.row(0) += other.row(1) + other.row(3);
  ref.row(2) += other.row(0);
  EXPECT_LE((out - ref).cwiseAbs().maxCoeff(), 1e-15);
  expect_fd([adj](ad::Tape& t, const std::vector<ad::Var>& v) {
    return testing::project_scalar(t, ad::neighbor_sum(v[0], v[1], adj));
  }, {self, other});
}

}  // namespace
}  // namespace hgf
