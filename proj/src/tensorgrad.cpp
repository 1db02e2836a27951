#include "gpimpute/tensorgrad.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

namespace gpimpute::ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Constant: return "constant";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Neg: return "neg";
    case Op::Scale: return "scale";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sqrt: return "sqrt";
    case Op::Square: return "square";
    case Op::ClampMin: return "clamp_min";
    case Op::MatMul: return "matmul";
    case Op::Transpose: return "transpose";
    case Op::Sum: return "sum";
    case Op::RowSum: return "row_sum";
    case Op::ColSum: return "col_sum";
    case Op::ColSquaredNorm: return "col_squared_norm";
    case Op::Broadcast: return "broadcast";
    case Op::Cholesky: return "cholesky";
    case Op::TriangularSolve: return "triangular_solve";
    case Op::Diagonal: return "diagonal";
    case Op::LowerTriangle: return "lower_triangle";
    case Op::SelectColumns: return "select_columns";
    case Op::ScatterColumn: return "scatter_column";
    case Op::ConcatColumns: return "concat_columns";
    case Op::Custom: return "custom";
  }
  return "?";
}

const Matrix& Var::value() const { return tape_->value(*this); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) {
    throw ShapeError("expected a 1x1 value, got " + shape_string(v.rows(), v.cols()));
  }
  return v(0, 0);
}

// ---- Tape ------------------------------------------------------------------

Var Tape::leaf(Matrix value) {
  Node n;
  n.op = Op::Leaf;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(Matrix value) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::scalar_constant(double value) {
  return constant(Matrix::Constant(1, 1, value));
}

Var Tape::record(Op op, std::vector<int> inputs, Matrix value, Backward backward) {
  Node n;
  n.op = op;
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                [this](int i) { return nodes_[static_cast<std::size_t>(i)].requires_grad; });
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Matrix Tape::grad(Var v) const {
  check_owner(v);
  const Node& n = node(v.id());
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(int id, const Matrix& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.requires_grad) return;
  if (g.rows() != n.value.rows() || g.cols() != n.value.cols()) {
    throw ShapeError("adjoint shape " + shape_string(g.rows(), g.cols()) +
                     " does not match value shape " +
                     shape_string(n.value.rows(), n.value.cols()) + " at " + op_name(n.op));
  }
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var root) {
  check_owner(root);
  const Node& r = node(root.id());
  if (r.value.rows() != 1 || r.value.cols() != 1) {
    throw ContractError("backward() needs a scalar root, got " +
                        shape_string(r.value.rows(), r.value.cols()));
  }
  for (Node& n : nodes_) n.grad.resize(0, 0);
  if (!r.requires_grad) return;
  nodes_[static_cast<std::size_t>(root.id())].grad = Matrix::Ones(1, 1);
  for (int i = root.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this, i);
  }
}

void Tape::check_owner(Var v) const {
  if (v.tape() != this || v.id() < 0 || static_cast<std::size_t>(v.id()) >= nodes_.size()) {
    throw ContractError("variable does not belong to this tape");
  }
}

const Matrix& evaluate(Var root) { return root.value(); }

std::vector<Matrix> gradient(Var root, const std::vector<Var>& leaves) {
  Tape& tape = *root.tape();
  tape.backward(root);
  std::vector<Matrix> out;
  out.reserve(leaves.size());
  for (const Var& leaf : leaves) out.push_back(tape.grad(leaf));
  return out;
}

// ---- broadcasting helpers --------------------------------------------------

namespace {

Tape& same_tape(Var a, Var b) {
  if (a.tape() != b.tape() || a.tape() == nullptr) {
    throw ContractError("operands live on different tapes");
  }
  return *a.tape();
}

Eigen::Index broadcast_dim(Eigen::Index x, Eigen::Index y, bool& ok) {
  if (x == y) return x;
  if (x == 1) return y;
  if (y == 1) return x;
  ok = false;
  return 0;
}

std::pair<Eigen::Index, Eigen::Index> broadcast_shape(const Matrix& a, const Matrix& b,
                                                      const char* what) {
  bool ok = true;
  Eigen::Index r = broadcast_dim(a.rows(), b.rows(), ok);
  Eigen::Index c = broadcast_dim(a.cols(), b.cols(), ok);
  if (!ok) {
    throw ShapeError(std::string(what) + ": incompatible shapes " +
                     shape_string(a.rows(), a.cols()) + " and " +
                     shape_string(b.rows(), b.cols()));
  }
  return {r, c};
}

Matrix expand(const Matrix& m, Eigen::Index rows, Eigen::Index cols) {
  if (m.rows() == rows && m.cols() == cols) return m;
  if (m.rows() == 1 && m.cols() == 1) return Matrix::Constant(rows, cols, m(0, 0));
  if (m.rows() == 1) return m.replicate(rows, 1);
  return m.replicate(1, cols);
}

// Sums g over the dimensions that were broadcast to reach its shape.
Matrix reduce_to(const Matrix& g, Eigen::Index rows, Eigen::Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return Matrix::Constant(1, 1, g.sum());
  if (rows == 1) return g.colwise().sum();
  return g.rowwise().sum();
}

template <class F>
Matrix binary_value(const Matrix& a, const Matrix& b, Eigen::Index r, Eigen::Index c, F f) {
  if (a.rows() == r && a.cols() == c && b.rows() == r && b.cols() == c) {
    return f(a.array(), b.array()).matrix();
  }
  Matrix ea = expand(a, r, c);
  Matrix eb = expand(b, r, c);
  return f(ea.array(), eb.array()).matrix();
}

}  // namespace

// ---- elementwise -----------------------------------------------------------

Var operator+(Var a, Var b) {
  Tape& t = same_tape(a, b);
  auto [r, c] = broadcast_shape(a.value(), b.value(), "add");
  Matrix v = binary_value(a.value(), b.value(), r, c, [](auto x, auto y) { return x + y; });
  int ia = a.id(), ib = b.id();
  return t.record(Op::Add, {ia, ib}, std::move(v), [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.upstream(self);
    const Matrix& av = tp.node(ia).value;
    const Matrix& bv = tp.node(ib).value;
    tp.accumulate(ia, reduce_to(g, av.rows(), av.cols()));
    tp.accumulate(ib, reduce_to(g, bv.rows(), bv.cols()));
  });
}

Var operator-(Var a, Var b) {
  Tape& t = same_tape(a, b);
  auto [r, c] = broadcast_shape(a.value(), b.value(), "sub");
  Matrix v = binary_value(a.value(), b.value(), r, c, [](auto x, auto y) { return x - y; });
  int ia = a.id(), ib = b.id();
  return t.record(Op::Sub, {ia, ib}, std::move(v), [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.upstream(self);
    const Matrix& av = tp.node(ia).value;
    const Matrix& bv = tp.node(ib).value;
    tp.accumulate(ia, reduce_to(g, av.rows(), av.cols()));
    tp.accumulate(ib, reduce_to(-g, bv.rows(), bv.cols()));
  });
}

Var operator*(Var a, Var b) {
  Tape& t = same_tape(a, b);
  auto [r, c] = broadcast_shape(a.value(), b.value(), "mul");
  Matrix v = binary_value(a.value(), b.value(), r, c, [](auto x, auto y) { return x * y; });
  int ia = a.id(), ib = b.id();
  return t.record(Op::Mul, {ia, ib}, std::move(v), [ia, ib, r = r, c = c](Tape& tp, int self) {
    const Matrix& g = tp.upstream(self);
    const Matrix& av = tp.node(ia).value;
    const Matrix& bv = tp.node(ib).value;
    if (tp.node(ia).requires_grad) {
      Matrix ga = (g.array() * expand(bv, r, c).array()).matrix();
      tp.accumulate(ia, reduce_to(ga, av.rows(), av.cols()));
    }
    if (tp.node(ib).requires_grad) {
      Matrix gb = (g.array() * expand(av, r, c).array()).matrix();
      tp.accumulate(ib, reduce_to(gb, bv.rows(), bv.cols()));
    }
  });
}

Var operator/(Var a, Var b) {
  Tape& t = same_tape(a, b);
  auto [r, c] = broadcast_shape(a.value(), b.value(), "div");
  Matrix v = binary_value(a.value(), b.value(), r, c, [](auto x, auto y) { return x / y; });
  int ia = a.id(), ib = b.id();
  return t.record(Op::Div, {ia, ib}, std::move(v), [ia, ib, r = r, c = c](Tape& tp, int self) {
    const Matrix& g = tp.upstream(self);
    const Matrix& av = tp.node(ia).value;
    const Matrix& bv = tp.node(ib).value;
    Matrix eb = expand(bv, r, c);
    if (tp.node(ia).requires_grad) {
      Matrix ga = (g.array() / eb.array()).matrix();
      tp.accumulate(ia, reduce_to(ga, av.rows(), av.cols()));
    }
    if (tp.node(ib).requires_grad) {
      const Matrix& out = tp.node(self).value;
      Matrix gb = (-g.array() * out.array() / eb.array()).matrix();
      tp.accumulate(ib, reduce_to(gb, bv.rows(), bv.cols()));
    }
  });
}

Var operator-(Var a) {
  Tape& t = *a.tape();
  int ia = a.id();
  return t.record(Op::Neg, {ia}, -a.value(), [ia](Tape& tp, int self) {
    tp.accumulate(ia, -tp.upstream(self));
  });
}

Var operator*(double s, Var a) {
  Tape& t = *a.tape();
  int ia = a.id();
  return t.record(Op::Scale, {ia}, s * a.value(), [ia, s](Tape& tp, int self) {
    tp.accumulate(ia, s * tp.upstream(self));
  });
}

Var operator*(Var a, double s) { return s * a; }
Var operator+(Var a, double s) { return a + a.tape()->scalar_constant(s); }
Var operator-(Var a, double s) { return a - a.tape()->scalar_constant(s); }
Var operator-(double s, Var a) { return a.tape()->scalar_constant(s) - a; }

Var exp(Var a) {
  Tape& t = *a.tape();
  int ia = a.id();
  Matrix v = a.value().array().exp().matrix();
  return t.record(Op::Exp, {ia}, std::move(v), [ia](Tape& tp, int self) {
    tp.accumulate(ia, (tp.upstream(self).array() * tp.node(self).value.array()).matrix());
  });
}

Var log(Var a) {
  Tape& t = *a.tape();
  int ia = a.id();
  Matrix v = a.value().array().log().matrix();
  return t.record(Op::Log, {ia}, std::move(v), [ia](Tape& tp, int self) {
    tp.accumulate(ia, (tp.upstream(self).array() / tp.node(ia).value.array()).matrix());
  });
}

Var sqrt(Var a) {
  Tape& t = *a.tape();
  int ia = a.id();
  Matrix v = a.value().array().sqrt().matrix();
  return t.record(Op::Sqrt, {ia}, std::move(v), [ia](Tape& tp, int self) {
    tp.accumulate(ia, (0.5 * tp.upstream(self).array() / tp.node(self).value.array()).matrix());
  });
}

Var square(Var a) {
  Tape& t = *a.tape();
  int ia = a.id();
  Matrix v = a.value().array().square().matrix();
  return t.record(Op::Square, {ia}, std::move(v), [ia](Tape& tp, int self) {
    tp.accumulate(ia, (2.0 * tp.upstream(self).array() * tp.node(ia).value.array()).matrix());
  });
}

Var clamp_min(Var a, double floor) {
  Tape& t = *a.tape();
  int ia = a.id();
  Matrix v = a.value().array().max(floor).matrix();
  return t.record(Op::ClampMin, {ia}, std::move(v), [ia, floor](Tape& tp, int self) {
    const Matrix& x = tp.node(ia).value;
    tp.accumulate(ia, (x.array() > floor).select(tp.upstream(self), 0.0).matrix());
  });
}

Var broadcast(Var a, Eigen::Index rows, Eigen::Index cols) {
  Tape& t = *a.tape();
  const Matrix& av = a.value();
  bool ok = (av.rows() == rows || av.rows() == 1) && (av.cols() == cols || av.cols() == 1);
  if (!ok) {
    throw ShapeError("broadcast: cannot stretch " + shape_string(av.rows(), av.cols()) +
                     " to " + shape_string(rows, cols));
  }
  int ia = a.id();
  return t.record(Op::Broadcast, {ia}, expand(av, rows, cols), [ia](Tape& tp, int self) {
    const Matrix& x = tp.node(ia).value;
    tp.accumulate(ia, reduce_to(tp.upstream(self), x.rows(), x.cols()));
  });
}

// ---- linear algebra --------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_string(av.rows(), av.cols()) +
                     " and " + shape_string(bv.rows(), bv.cols()));
  }
  int ia = a.id(), ib = b.id();
  Matrix v = av * bv;
  return t.record(Op::MatMul, {ia, ib}, std::move(v), [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.upstream(self);
    if (tp.node(ia).requires_grad) tp.accumulate(ia, g * tp.node(ib).value.transpose());
    if (tp.node(ib).requires_grad) tp.accumulate(ib, tp.node(ia).value.transpose() * g);
  });
}

Var transpose(Var a) {
  Tape& t = *a.tape();
  int ia = a.id();
  return t.record(Op::Transpose, {ia}, a.value().transpose(), [ia](Tape& tp, int self) {
    tp.accumulate(ia, tp.upstream(self).transpose());
  });
}

namespace {

void require_square(const Matrix& a, const char* what) {
  if (a.rows() != a.cols()) {
    throw ShapeError(std::string(what) + ": expected a square matrix, got " +
                     shape_string(a.rows(), a.cols()));
  }
}

// Lower factor of a + jitter*I, or false if not positive definite.
bool try_cholesky(const Matrix& a, double jitter, Matrix& lower) {
  Matrix shifted = a;
  if (jitter != 0.0) shifted.diagonal().array() += jitter;
  Eigen::LLT<Matrix> llt(shifted);
  if (llt.info() != Eigen::Success) return false;
  lower = llt.matrixL();
  return (lower.diagonal().array() > 0.0).all() && lower.allFinite();
}

}  // namespace

Var cholesky(Var a, double jitter) {
  Tape& t = *a.tape();
  const Matrix& av = a.value();
  require_square(av, "cholesky");
  Matrix lower;
  if (!try_cholesky(av, jitter, lower)) {
    throw DecompositionError("cholesky: matrix of size " + std::to_string(av.rows()) +
                             " is not positive definite at jitter " + std::to_string(jitter));
  }
  int ia = a.id();
  return t.record(Op::Cholesky, {ia}, std::move(lower), [ia](Tape& tp, int self) {
    // Blocked-free form of the standard backward recurrence:
    //   P = Phi(L^T Lbar), Abar = L^{-T} P L^{-1}, symmetrized.
    const Matrix& l = tp.node(self).value;
    Matrix lbar = tp.upstream(self).triangularView<Eigen::Lower>();
    Matrix p = l.transpose() * lbar;
    p.triangularView<Eigen::StrictlyUpper>().setZero();
    p.diagonal() *= 0.5;
    auto ut = l.transpose().triangularView<Eigen::Upper>();
    // L^{-T} P
    Matrix x = ut.solve(p);
    // (L^{-T} P) L^{-1} = (L^{-T} (L^{-T} P)^T)^T
    Matrix abar = ut.solve(x.transpose()).transpose();
    Matrix sym = 0.5 * (abar + abar.transpose());
    tp.accumulate(ia, sym);
  });
}

Var triangular_solve(Var lower, Var b, bool transpose_lower) {
  Tape& t = same_tape(lower, b);
  const Matrix& lv = lower.value();
  const Matrix& bv = b.value();
  require_square(lv, "triangular_solve");
  if (lv.rows() != bv.rows()) {
    throw ShapeError("triangular_solve: factor " + shape_string(lv.rows(), lv.cols()) +
                     " incompatible with right-hand side " + shape_string(bv.rows(), bv.cols()));
  }
  Matrix x = transpose_lower ? Matrix(lv.transpose().triangularView<Eigen::Upper>().solve(bv))
                             : Matrix(lv.triangularView<Eigen::Lower>().solve(bv));
  int il = lower.id(), ib = b.id();
  return t.record(Op::TriangularSolve, {il, ib}, std::move(x),
                  [il, ib, transpose_lower](Tape& tp, int self) {
                    const Matrix& l = tp.node(il).value;
                    const Matrix& xv = tp.node(self).value;
                    const Matrix& g = tp.upstream(self);

                    // X = L^{-1} B : Bbar = L^{-T} Xbar, Lbar = -tril(Bbar X^T)
                    // X = L^{-T} B : Bbar = L^{-1} Xbar, Lbar = -tril(X Bbar^T)
                    Matrix bbar = transpose_lower
                                      ? Matrix(l.triangularView<Eigen::Lower>().solve(g))
                                      : Matrix(l.transpose().triangularView<Eigen::Upper>().solve(g));
                    if (tp.node(il).requires_grad) {
                      Matrix lbar = transpose_lower ? Matrix(-(xv * bbar.transpose()))
                                                    : Matrix(-(bbar * xv.transpose()));
                      lbar.triangularView<Eigen::StrictlyUpper>().setZero();
                      tp.accumulate(il, lbar);
                    }
                    if (tp.node(ib).requires_grad) tp.accumulate(ib, bbar);
                  });
}

Var diagonal(Var a) {
  Tape& t = *a.tape();
  require_square(a.value(), "diagonal");
  int ia = a.id();
  Matrix v = a.value().diagonal();
  return t.record(Op::Diagonal, {ia}, std::move(v), [ia](Tape& tp, int self) {
    Eigen::Index n = tp.node(ia).value.rows();
    Matrix g = Matrix::Zero(n, n);
    g.diagonal() = tp.upstream(self).col(0);
    tp.accumulate(ia, g);
  });
}

Var lower_triangle(Var a) {
  Tape& t = *a.tape();
  require_square(a.value(), "lower_triangle");
  int ia = a.id();
  Matrix v = a.value().triangularView<Eigen::Lower>();
  return t.record(Op::LowerTriangle, {ia}, std::move(v), [ia](Tape& tp, int self) {
    Matrix g = tp.upstream(self).triangularView<Eigen::Lower>();
    tp.accumulate(ia, g);
  });
}

// ---- reductions ------------------------------------------------------------

Var sum(Var a) {
  Tape& t = *a.tape();
  int ia = a.id();
  return t.record(Op::Sum, {ia}, Matrix::Constant(1, 1, a.value().sum()), [ia](Tape& tp, int self) {
    const Matrix& x = tp.node(ia).value;
    tp.accumulate(ia, Matrix::Constant(x.rows(), x.cols(), tp.upstream(self)(0, 0)));
  });
}

Var row_sum(Var a) {
  Tape& t = *a.tape();
  int ia = a.id();
  Matrix v = a.value().rowwise().sum();
  return t.record(Op::RowSum, {ia}, std::move(v), [ia](Tape& tp, int self) {
    const Matrix& x = tp.node(ia).value;
    tp.accumulate(ia, tp.upstream(self).replicate(1, x.cols()));
  });
}

Var col_sum(Var a) {
  Tape& t = *a.tape();
  int ia = a.id();
  Matrix v = a.value().colwise().sum();
  return t.record(Op::ColSum, {ia}, std::move(v), [ia](Tape& tp, int self) {
    const Matrix& x = tp.node(ia).value;
    tp.accumulate(ia, tp.upstream(self).replicate(x.rows(), 1));
  });
}

Var col_squared_norm(Var a) {
  Tape& t = *a.tape();
  int ia = a.id();
  Matrix v = a.value().colwise().squaredNorm();
  return t.record(Op::ColSquaredNorm, {ia}, std::move(v), [ia](Tape& tp, int self) {
    const Matrix& x = tp.node(ia).value;
    const Matrix& g = tp.upstream(self);
    tp.accumulate(ia, 2.0 * x * g.row(0).asDiagonal());
  });
}

// ---- indexing --------------------------------------------------------------

Var select_columns(Var a, const std::vector<int>& columns) {
  Tape& t = *a.tape();
  const Matrix& av = a.value();
  Matrix v(av.rows(), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (columns[j] < 0 || columns[j] >= av.cols()) {
      throw ShapeError("select_columns: column " + std::to_string(columns[j]) +
                       " out of range for " + shape_string(av.rows(), av.cols()));
    }
    v.col(static_cast<Eigen::Index>(j)) = av.col(columns[j]);
  }
  int ia = a.id();
  return t.record(Op::SelectColumns, {ia}, std::move(v), [ia, columns](Tape& tp, int self) {
    const Matrix& x = tp.node(ia).value;
    const Matrix& g = tp.upstream(self);
    Matrix ga = Matrix::Zero(x.rows(), x.cols());
    for (std::size_t j = 0; j < columns.size(); ++j) {
      ga.col(columns[j]) += g.col(static_cast<Eigen::Index>(j));
    }
    tp.accumulate(ia, ga);
  });
}

Var scatter_column(Var a, int column, Var values, const std::vector<bool>& rows) {
  Tape& t = same_tape(a, values);
  const Matrix& av = a.value();
  const Matrix& vv = values.value();
  if (column < 0 || column >= av.cols()) {
    throw ShapeError("scatter_column: column " + std::to_string(column) + " out of range for " +
                     shape_string(av.rows(), av.cols()));
  }
  if (vv.rows() != av.rows() || vv.cols() != 1 ||
      static_cast<Eigen::Index>(rows.size()) != av.rows()) {
    throw ShapeError("scatter_column: values " + shape_string(vv.rows(), vv.cols()) +
                     " do not match target " + shape_string(av.rows(), av.cols()));
  }
  Matrix out = av;
  for (Eigen::Index i = 0; i < av.rows(); ++i) {
    if (rows[static_cast<std::size_t>(i)]) out(i, column) = vv(i, 0);
  }
  int ia = a.id(), iv = values.id();
  return t.record(Op::ScatterColumn, {ia, iv}, std::move(out),
                  [ia, iv, column, rows](Tape& tp, int self) {
                    const Matrix& g = tp.upstream(self);
                    Matrix ga = g;
                    Matrix gv = Matrix::Zero(g.rows(), 1);
                    for (Eigen::Index i = 0; i < g.rows(); ++i) {
                      if (rows[static_cast<std::size_t>(i)]) {
                        gv(i, 0) = g(i, column);
                        ga(i, column) = 0.0;
                      }
                    }
                    tp.accumulate(ia, ga);
                    tp.accumulate(iv, gv);
                  });
}

Var concat_columns(const std::vector<Var>& blocks) {
  if (blocks.empty()) throw ContractError("concat_columns: no blocks");
  Tape& t = *blocks.front().tape();
  const Eigen::Index rows = blocks.front().rows();
  Eigen::Index cols = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> widths;
  for (const Var& b : blocks) {
    if (b.tape() != &t) throw ContractError("operands live on different tapes");
    if (b.rows() != rows) {
      throw ShapeError("concat_columns: block " + shape_string(b.rows(), b.cols()) +
                       " does not match height " + std::to_string(rows));
    }
    ids.push_back(b.id());
    widths.push_back(b.cols());
    cols += b.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& b : blocks) {
    out.middleCols(at, b.cols()) = b.value();
    at += b.cols();
  }
  return t.record(Op::ConcatColumns, ids, std::move(out), [ids, widths](Tape& tp, int self) {
    const Matrix& g = tp.upstream(self);
    Eigen::Index offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.node(ids[k]).requires_grad) tp.accumulate(ids[k], g.middleCols(offset, widths[k]));
      offset += widths[k];
    }
  });
}

// ---- PSD helpers -----------------------------------------------------------

namespace {

void require_symmetric(const Matrix& a) {
  require_square(a, "safe_cholesky");
  double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw ContractError("safe_cholesky: input is not symmetric within 1e-10");
  }
}

double pick_jitter(const Matrix& a, Matrix& lower) {
  if (try_cholesky(a, 0.0, lower)) return 0.0;
  double mean_diag = a.rows() > 0 ? std::abs(a.diagonal().mean()) : 1.0;
  if (mean_diag == 0.0) mean_diag = 1.0;
  for (double step : kJitterLadder) {
    double jitter = step * mean_diag;
    if (try_cholesky(a, jitter, lower)) return jitter;
  }
  std::ostringstream msg;
  msg << "safe_cholesky: factorization failed at maximum jitter " << kJitterLadder[2] * mean_diag
      << " (size " << a.rows() << ", mean diagonal " << mean_diag;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(a, Eigen::EigenvaluesOnly);
  if (eig.info() == Eigen::Success && a.rows() > 0) {
    msg << ", eigenvalue range [" << eig.eigenvalues().minCoeff() << ", "
        << eig.eigenvalues().maxCoeff() << "]";
  }
  msg << ")";
  throw DecompositionError(msg.str());
}

}  // namespace

PsdFactor safe_cholesky(const Matrix& a) {
  require_symmetric(a);
  PsdFactor f;
  f.jitter_used = pick_jitter(a, f.lower);
  return f;
}

CholeskyVar safe_cholesky(Var a) {
  require_symmetric(a.value());
  Matrix unused;
  double jitter = pick_jitter(a.value(), unused);
  return {cholesky(a, jitter), jitter};
}

Var logdet(Var a) {
  Var l = safe_cholesky(a).lower;
  return 2.0 * sum(log(diagonal(l)));
}

Var gaussian_kl_factored(Var mean_diff, Var ls, Var lk) {
  const Eigen::Index m = lk.rows();
  if (ls.rows() != m || ls.cols() != m || lk.cols() != m || mean_diff.rows() != m ||
      mean_diff.cols() != 1) {
    throw ShapeError("gaussian_kl: mean " + shape_string(mean_diff.rows(), mean_diff.cols()) +
                     ", q factor " + shape_string(ls.rows(), ls.cols()) + ", p factor " +
                     shape_string(lk.rows(), lk.cols()) + " disagree");
  }
  Var ls_lower = lower_triangle(ls);
  Var trace_term = sum(square(triangular_solve(lk, ls_lower)));
  Var mahalanobis = sum(square(triangular_solve(lk, mean_diff)));
  Var logdet_k = 2.0 * sum(log(diagonal(lk)));
  Var logdet_s = sum(log(square(diagonal(ls_lower))));
  return 0.5 * (trace_term + mahalanobis - static_cast<double>(m) + logdet_k - logdet_s);
}

Var gaussian_kl(Var r, Var s, Var m, Var k) {
  if (r.rows() != m.rows() || r.cols() != 1 || m.cols() != 1 || s.rows() != r.rows() ||
      k.rows() != r.rows()) {
    throw ShapeError("gaussian_kl: means " + shape_string(r.rows(), r.cols()) + " and " +
                     shape_string(m.rows(), m.cols()) + ", covariances " +
                     shape_string(s.rows(), s.cols()) + " and " + shape_string(k.rows(), k.cols()) +
                     " disagree");
  }
  Var ls = safe_cholesky(s).lower;
  Var lk = safe_cholesky(k).lower;
  return gaussian_kl_factored(r - m, ls, lk);
}

}  // namespace gpimpute::ad
