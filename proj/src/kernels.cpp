#include "gpimpute/kernels.hpp"

namespace gpimpute {

KernelVars bind(ad::Tape& tape, const RbfArdKernel& kernel, bool trainable) {
  Matrix ls = kernel.log_lengthscales.transpose();
  Matrix amp = Matrix::Constant(1, 1, kernel.log_amplitude);
  if (trainable) return {tape.leaf(std::move(ls)), tape.leaf(std::move(amp))};
  return {tape.constant(std::move(ls)), tape.constant(std::move(amp))};
}

ad::Var kernel_matrix(const KernelVars& kernel, ad::Var a, ad::Var b) {
  ad::Tape& tape = *a.tape();
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const Matrix& log_ls = kernel.log_lengthscales.value();
  if (av.cols() != bv.cols() || av.cols() != log_ls.cols()) {
    throw ShapeError("kernel_matrix: inputs " + shape_string(av.rows(), av.cols()) + " and " +
                     shape_string(bv.rows(), bv.cols()) + " for a kernel over " +
                     std::to_string(log_ls.cols()) + " dimensions");
  }
  const bool same = a.id() == b.id();
  const double amp = std::exp(kernel.log_amplitude.scalar());
  const RowVector inv_ls = (-log_ls.array()).exp().matrix();
  const Matrix as = av * inv_ls.asDiagonal();
  const Matrix bs = same ? as : Matrix(bv * inv_ls.asDiagonal());
  Matrix sq = (-2.0 * as * bs.transpose()).colwise() + as.rowwise().squaredNorm();
  sq.rowwise() += bs.rowwise().squaredNorm().transpose();
  sq = sq.array().max(0.0);
  if (same) {
    sq = 0.5 * (sq + sq.transpose());
    sq.diagonal().setZero();
  }
  Matrix k = amp * (-0.5 * sq.array()).exp().matrix();

  const int ia = a.id(), ib = b.id();
  const int ils = kernel.log_lengthscales.id(), iamp = kernel.log_amplitude.id();
  return tape.record(
      ad::Op::Custom, {ia, ib, ils, iamp}, std::move(k),
      [ia, ib, ils, iamp](ad::Tape& tp, int self) {
        const Matrix& kv = tp.node(self).value;
        const Matrix g = tp.upstream(self).cwiseProduct(kv);  // dK scaled by K
        const Matrix& x = tp.node(ia).value;
        const Matrix& y = tp.node(ib).value;
        const RowVector inv_ls2 = (-2.0 * tp.node(ils).value.array()).exp().matrix();
        const Vector rs = g.rowwise().sum();
        const RowVector cs = g.colwise().sum();
        const Matrix gy = g * y;                // n x D
        if (tp.node(iamp).requires_grad) {
          tp.accumulate(iamp, Matrix::Constant(1, 1, g.sum()));
        }
        if (tp.node(ils).requires_grad) {
          // sum_ij G_ij (x_id - y_jd)^2 / l_d^2
          RowVector t = rs.transpose() * x.array().square().matrix() +
                        cs * y.array().square().matrix() -
                        2.0 * (x.array() * gy.array()).colwise().sum().matrix();
          tp.accumulate(ils, t.cwiseProduct(inv_ls2));
        }
        if (tp.node(ia).requires_grad) {
          Matrix gx = (gy - rs.asDiagonal() * x) * inv_ls2.asDiagonal();
          tp.accumulate(ia, gx);
        }
        if (tp.node(ib).requires_grad) {
          Matrix gyy = (g.transpose() * x - cs.transpose().asDiagonal() * y) * inv_ls2.asDiagonal();
          tp.accumulate(ib, gyy);
        }
      });
}

ad::Var kernel_diag(const KernelVars& kernel, Eigen::Index n) {
  return ad::broadcast(ad::exp(kernel.log_amplitude), n, 1);
}

}  // namespace gpimpute
