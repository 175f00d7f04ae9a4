#pragma once

#include <Eigen/Dense>

namespace purple {

/// Dense row-major matrix used for embeddings, parameters and gradients.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

}  // namespace purple
