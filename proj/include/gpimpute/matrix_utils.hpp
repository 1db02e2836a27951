#ifndef GPIMPUTE_MATRIX_UTILS_HPP
#define GPIMPUTE_MATRIX_UTILS_HPP

#include <Eigen/Dense>

#include <random>
#include <vector>

namespace gpimpute {

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> gather_rows(
    const Eigen::DenseBase<Derived>& x, const std::vector<Eigen::Index>& rows) {
  Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> out(
      static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
  return out;
}

// K copies of x stacked vertically; copy k occupies rows [k*n, (k+1)*n).
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> tile_rows(
    const Eigen::DenseBase<Derived>& x, int copies) {
  return x.replicate(copies, 1);
}

template <typename Rng>
Eigen::MatrixXd standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd out(rows, cols);
  // Row-major fill so the stream order does not depend on storage order.
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = normal(rng);
  }
  return out;
}

}  // namespace gpimpute

#endif  // GPIMPUTE_MATRIX_UTILS_HPP
