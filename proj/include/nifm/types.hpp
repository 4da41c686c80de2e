#pragma once

#include <Eigen/Core>

namespace nifm {

/// Row-major dense matrix; datasets are stored one time point per row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

}  // namespace nifm
