#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>

namespace trialsum {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Index = Eigen::Index;
using TokenId = std::int32_t;

// Numerically stable log(sum(exp(x))).
template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::DenseBase<Derived>& x) {
  using S = typename Derived::Scalar;
  const S hi = x.maxCoeff();
  if (!std::isfinite(hi)) return hi;
  return hi + std::log((x.derived().array() - hi).exp().sum());
}

// Softmax of a vector (row or column), returned as a column vector.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> softmax(
    const Eigen::MatrixBase<Derived>& x) {
  using S = typename Derived::Scalar;
  Eigen::Matrix<S, Eigen::Dynamic, 1> out = x.derived().reshaped();
  const S hi = out.maxCoeff();
  out = (out.array() - hi).exp();
  out /= out.sum();
  return out;
}

// Index of the largest entry; ties go to the lowest index.
template <typename Derived>
Index argmax(const Eigen::DenseBase<Derived>& x) {
  Index best = 0;
  for (Index i = 1; i < x.size(); ++i) {
    if (x.derived().coeff(i) > x.derived().coeff(best)) best = i;
  }
  return best;
}

}  // namespace trialsum
