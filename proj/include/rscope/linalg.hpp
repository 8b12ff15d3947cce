#pragma once

#include <Eigen/Dense>

namespace rscope {

// Row-major so that a matrix maps directly onto a tensor-store buffer.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

}  // namespace rscope
