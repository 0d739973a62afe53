#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace fednids {

// Flow matrices are row-major: one flow per row, contiguous features.
template <typename Scalar>
using RowMatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Matrix = RowMatrixX<double>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

using Labels = std::vector<std::uint8_t>;
using Index = Eigen::Index;

}  // namespace fednids
