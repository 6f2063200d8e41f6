#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <vector>

namespace hgf {

using Vector = std::vector<double>;

/// Dense row-major matrix. Point sets are stored one point per row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Index = Eigen::Index;

}  // namespace hgf
