#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace deptharb {

/// Dense H x W grid, row-major so that linear index = y * W + x.
template <typename Scalar>
using Grid = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using GridXd = Grid<double>;

/// Binary mask; entries are exactly 0 or 1.
using MaskGrid = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per-pixel winner index; -1 marks "none".
using LabelGrid = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Malformed input: bad files, invalid fields, shape mismatches.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A loss or gradient became non-finite during optimization.
class NumericalAbort : public std::runtime_error {
 public:
  NumericalAbort(std::size_t step, const std::string& what)
      : std::runtime_error("non-finite value at step " + std::to_string(step) + ": " + what),
        step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Row-major sum. Kept as an explicit loop so the accumulation order is fixed.
template <typename Derived>
typename Derived::Scalar ordered_sum(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  Scalar acc(0);
  for (Eigen::Index y = 0; y < m.rows(); ++y)
    for (Eigen::Index x = 0; x < m.cols(); ++x) acc += m(y, x);
  return acc;
}

inline bool same_shape(Eigen::Index h0, Eigen::Index w0, Eigen::Index h1, Eigen::Index w1) {
  return h0 == h1 && w0 == w1;
}

}  // namespace deptharb
