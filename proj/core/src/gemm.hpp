#pragma once

#include <Eigen/Core>
#include <cstdint>

namespace nightrack::detail {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline ConstMatMap cmat(const float* p, int64_t rows, int64_t cols) {
  return ConstMatMap(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline MatMap mat(float* p, int64_t rows, int64_t cols) {
  return MatMap(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

}  // namespace nightrack::detail
