#ifndef GPIMPUTE_KERNELS_HPP
#define GPIMPUTE_KERNELS_HPP

#include <Eigen/Dense>

#include <cmath>

#include "gpimpute/tensorgrad.hpp"

namespace gpimpute {

// Squared-exponential kernel with one lengthscale per input dimension.
//   k(a, b) = amp * exp(-0.5 * sum_d (a_d - b_d)^2 / l_d^2)
// Both hyperparameters live in the log domain so Adam can move them freely.
struct RbfArdKernel {
  Vector log_lengthscales;
  double log_amplitude = 0.0;

  // lengthscales sqrt(d), unit amplitude: unit-scale inputs after z-scoring.
  static RbfArdKernel with_defaults(Eigen::Index input_dim) {
    RbfArdKernel k;
    k.log_lengthscales = Vector::Constant(input_dim, 0.5 * std::log(static_cast<double>(std::max<Eigen::Index>(input_dim, 1))));
    k.log_amplitude = 0.0;
    return k;
  }

  Eigen::Index input_dim() const { return log_lengthscales.size(); }
  double amplitude() const { return std::exp(log_amplitude); }
};

// Tape handles for the hyperparameters of one kernel.
struct KernelVars {
  ad::Var log_lengthscales;  // 1 x D
  ad::Var log_amplitude;     // 1 x 1
};

// Registers the hyperparameters as leaves (trainable) or constants.
KernelVars bind(ad::Tape& tape, const RbfArdKernel& kernel, bool trainable = true);

// n x m covariance between the rows of a and b. When a and b are the same
// node the result is exactly symmetric with exact amplitude on the diagonal.
ad::Var kernel_matrix(const KernelVars& kernel, ad::Var a, ad::Var b);

// n x 1 vector of k(a_i, a_i).
ad::Var kernel_diag(const KernelVars& kernel, Eigen::Index n);

// Plain-matrix evaluation.
template <typename DerivedA, typename DerivedB>
Matrix kernel_matrix(const RbfArdKernel& kernel, const Eigen::MatrixBase<DerivedA>& a,
                     const Eigen::MatrixBase<DerivedB>& b) {
  if (a.cols() != b.cols() || a.cols() != kernel.input_dim()) {
    throw ShapeError("kernel_matrix: inputs " + shape_string(a.rows(), a.cols()) + " and " +
                     shape_string(b.rows(), b.cols()) + " for a kernel over " +
                     std::to_string(kernel.input_dim()) + " dimensions");
  }
  const RowVector inv_ls = (-kernel.log_lengthscales.array()).exp().matrix().transpose();
  const Matrix as = a.derived() * inv_ls.asDiagonal();
  const Matrix bs = b.derived() * inv_ls.asDiagonal();
  Matrix sq = (-2.0 * as * bs.transpose()).colwise() + as.rowwise().squaredNorm();
  sq.rowwise() += bs.rowwise().squaredNorm().transpose();
  return kernel.amplitude() * (-0.5 * sq.array().max(0.0)).exp().matrix();
}

template <typename Derived>
Vector kernel_diag(const RbfArdKernel& kernel, const Eigen::MatrixBase<Derived>& a) {
  return Vector::Constant(a.rows(), kernel.amplitude());
}

}  // namespace gpimpute

#endif  // GPIMPUTE_KERNELS_HPP
