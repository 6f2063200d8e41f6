// Python bindings: geometry, kernels, synthetic data and the command-line entry point.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "hgformer/attention.hpp"
#include "hgformer/error.hpp"
#include "hgformer/geometry.hpp"
#include "hgformer/graph.hpp"

namespace py = pybind11;
using namespace hgf;
using geometry::CurvatureSpace;
using geometry::LorentzPoint;
using geometry::TangentVector;

namespace {

using PyVec = Eigen::VectorXd;

Vector to_vector(const PyVec& v) { return Vector(v.data(), v.data() + v.size()); }

PyVec to_py(std::span<const double> v) {
  PyVec out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i];
  return out;
}

CurvatureSpace space_for(double k, std::size_t ambient) {
  if (ambient < 2) throw DimensionError("ambient dimension must be at least 2");
  return CurvatureSpace(k, ambient - 1);
}

void same_size(const PyVec& a, const PyVec& b) {
  if (a.size() != b.size()) throw DimensionError("vectors have different lengths");
}

LorentzPoint point(const CurvatureSpace& sp, const PyVec& x) {
  if (static_cast<std::size_t>(x.size()) != sp.ambient_dim()) throw DimensionError("point has the wrong length");
  return LorentzPoint::checked(sp, to_vector(x));
}

TangentVector tangent(const CurvatureSpace& sp, const PyVec& base, const PyVec& v) {
  same_size(base, v);
  return TangentVector{point(sp, base), to_vector(v)};
}

}  // namespace

PYBIND11_MODULE(_hgformer, m) {
  m.doc() = "Hyperbolic graph transformer for collaborative filtering";

  // Later registrations are tried first, so subclasses map to their own Python types.
  const auto& base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<ArgumentError>(m, "ArgumentError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<InvalidTangentError>(m, "InvalidTangentError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  // ---- geometry ----
  m.def("minkowski_inner", [](const PyVec& x, const PyVec& y) {
    same_size(x, y);
    return geometry::minkowski_inner(to_vector(x), to_vector(y));
  }, py::arg("x"), py::arg("y"));
  m.def("is_on_manifold", [](double k, const PyVec& x) {
    return geometry::is_on_manifold(space_for(k, x.size()), to_vector(x));
  }, py::arg("k"), py::arg("x"));
  m.def("origin", [](double k, std::size_t d) {
    return to_py(LorentzPoint::origin(CurvatureSpace(k, d)).coords());
  }, py::arg("k"), py::arg("d"));
  m.def("distance", [](double k, const PyVec& x, const PyVec& y) {
    same_size(x, y);
    const auto sp = space_for(k, x.size());
    return geometry::distance(sp, point(sp, x), point(sp, y));
  }, py::arg("k"), py::arg("x"), py::arg("y"));
  m.def("exp_map", [](double k, const PyVec& base, const PyVec& v) {
    const auto sp = space_for(k, base.size());
    return to_py(geometry::exp_map(sp, tangent(sp, base, v)).coords());
  }, py::arg("k"), py::arg("base"), py::arg("v"));
  m.def("log_map", [](double k, const PyVec& x, const PyVec& y) {
    same_size(x, y);
    const auto sp = space_for(k, x.size());
    return to_py(geometry::log_map(sp, point(sp, x), point(sp, y)).vec);
  }, py::arg("k"), py::arg("x"), py::arg("y"));
  m.def("lift", [](double k, const PyVec& e) {
    const CurvatureSpace sp(k, static_cast<std::size_t>(e.size()));
    return to_py(geometry::lift(sp, geometry::EuclideanVec(to_vector(e))).coords());
  }, py::arg("k"), py::arg("e"));
  m.def("unlift", [](double k, const PyVec& x) {
    const auto sp = space_for(k, x.size());
    return to_py(geometry::unlift(sp, point(sp, x)).coords());
  }, py::arg("k"), py::arg("x"));
  m.def("parallel_transport", [](double k, const PyVec& x, const PyVec& y, const PyVec& v) {
    same_size(x, y);
    const auto sp = space_for(k, x.size());
    return to_py(geometry::parallel_transport(sp, point(sp, x), point(sp, y), tangent(sp, x, v)).vec);
  }, py::arg("k"), py::arg("x"), py::arg("y"), py::arg("v"));
  m.def("centroid", [](double k, const Matrix& points, std::optional<std::vector<double>> weights) {
    if (points.rows() == 0) throw ArgumentError("centroid of an empty point set");
    const auto sp = space_for(k, static_cast<std::size_t>(points.cols()));
    std::vector<LorentzPoint> pts;
    for (Index r = 0; r < points.rows(); ++r) {
      pts.push_back(LorentzPoint::checked(sp, Vector(points.row(r).data(), points.row(r).data() + points.cols())));
    }
    if (!weights) return to_py(geometry::centroid(sp, pts).coords());
    return to_py(geometry::centroid(sp, pts, std::span<const double>(*weights)).coords());
  }, py::arg("k"), py::arg("points"), py::arg("weights") = py::none());

  // ---- kernels ----
  m.def("hsm", [](const PyVec& x, const PyVec& y) {
    same_size(x, y);
    return attention::hsm(LorentzPoint(to_vector(x)), LorentzPoint(to_vector(y)));
  }, py::arg("x"), py::arg("y"));
  m.def("factorized_kernel", [](double k, const PyVec& x, const PyVec& y, double temperature) {
    same_size(x, y);
    const auto sp = space_for(k, x.size());
    return attention::factorized_kernel(sp, point(sp, x), point(sp, y), temperature);
  }, py::arg("k"), py::arg("x"), py::arg("y"), py::arg("temperature") = 1.0);
  m.def("sample_omega", [](std::size_t features, std::size_t d, std::uint64_t seed) {
    return attention::RandomFeatureMap::sample(features, d, seed).omega();
  }, py::arg("features"), py::arg("d"), py::arg("seed"));
  m.def("phi", [](double k, const PyVec& x, const Matrix& omega, double temperature) {
    const auto sp = space_for(k, x.size());
    if (static_cast<std::size_t>(omega.cols()) != sp.dim()) throw DimensionError("omega has the wrong width");
    const auto f = attention::RandomFeatureMap::from_omega(omega);
    return to_py(attention::phi(sp, point(sp, x), f, temperature));
  }, py::arg("k"), py::arg("x"), py::arg("omega"), py::arg("temperature") = 1.0);

  // ---- data ----
  m.def("synthetic", [](std::size_t num_users, std::size_t num_items, std::uint64_t seed) {
    graph::SyntheticConfig c;
    c.num_users = num_users;
    c.num_items = num_items;
    c.seed = seed;
    const auto s = graph::make_synthetic_hierarchical(c);
    return py::make_tuple(s.graph.edges(), s.user_cluster, s.item_cluster);
  }, py::arg("num_users") = 500, py::arg("num_items") = 300, py::arg("seed") = 7,
        "Hierarchical synthetic graph: (edges, user_cluster, item_cluster).");

  // ---- command line ----
  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::vector<std::string> full = {"hgformer"};
    full.insert(full.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : full) argv.push_back(a.c_str());
    std::ostringstream out, err;
    int code = 0;
    {
      py::gil_scoped_release release;
      code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
  }, py::arg("args"), "Runs a hgformer subcommand in process: (exit_code, stdout, stderr).");
}
