#pragma once

#include <Eigen/Core>

namespace parscale::detail {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const Mat<T>>;
template <typename T>
using ConstRowMap = Eigen::Map<const RowVec<T>>;

// Adds the column sums of m into dst (length m.cols()) in plain row order.
// Eigen's vectorized colwise().sum() picks its summation order from the
// destination's address, which varies between heap allocations.
template <typename T>
void add_column_sums(const Mat<T>& m, T* dst) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const T* row = m.data() + r * m.cols();
    for (Eigen::Index c = 0; c < m.cols(); ++c) dst[c] += row[c];
  }
}

}  // namespace parscale::detail
