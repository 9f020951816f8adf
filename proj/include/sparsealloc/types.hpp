#pragma once

#include <Eigen/Dense>
#include <cstdint>

namespace sparsealloc {

// Row-major so that a row is one token (or one dictionary feature) in memory.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using MaskMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace sparsealloc
