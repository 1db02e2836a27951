#ifndef GPIMPUTE_TENSORGRAD_HPP
#define GPIMPUTE_TENSORGRAD_HPP

/**
 *  Reverse-mode differentiation over dense double matrices.
 *
 *  A Tape records every operation eagerly: the value of a node is computed
 *  when the node is created, and a backward closure is stored alongside it.
 *  Calling backward() on a 1x1 root walks the tape in reverse and accumulates
 *  adjoints into every node that depends on a leaf.
 *
 *  Binary elementwise operations broadcast NumPy-style over the two matrix
 *  dimensions: a dimension of size 1 stretches to match the other operand.
 *
 *  Only the primitives needed by the sparse GP objectives are provided.
 *  Callers with a fused primitive of their own can use Tape::record().
 */

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

#include "gpimpute/errors.hpp"

namespace gpimpute {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

namespace ad {

enum class Op {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Scale,
  Exp,
  Log,
  Sqrt,
  Square,
  ClampMin,
  MatMul,
  Transpose,
  Sum,
  RowSum,
  ColSum,
  ColSquaredNorm,
  Broadcast,
  Cholesky,
  TriangularSolve,
  Diagonal,
  LowerTriangle,
  SelectColumns,
  ScatterColumn,
  ConcatColumns,
  Custom,
};

const char* op_name(Op op);

class Tape;

// Lightweight handle to a node on a tape. Copyable; does not own anything.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  // 1x1 value as a scalar.
  double scalar() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  // Accumulates the adjoint of the given inputs. `self` is the node being
  // back-propagated.
  using Backward = std::function<void(Tape& tape, int self)>;

  struct Node {
    Op op = Op::Leaf;
    std::vector<int> inputs;
    Matrix value;
    Matrix grad;  // empty until an adjoint reaches the node
    bool requires_grad = false;
    Backward backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Matrix value);
  Var constant(Matrix value);
  Var scalar_constant(double value);

  // Appends a node. `backward` is only invoked when some input requires grad.
  Var record(Op op, std::vector<int> inputs, Matrix value, Backward backward);

  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  const Matrix& value(Var v) const { return node(v.id()).value; }
  bool requires_grad(Var v) const { return node(v.id()).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Adjoint of v after backward(); zeros of v's shape when no adjoint reached it.
  Matrix grad(Var v) const;
  // Adjoint of `self`, valid inside a backward closure.
  const Matrix& upstream(int self) const { return nodes_[static_cast<std::size_t>(self)].grad; }
  void accumulate(int id, const Matrix& g);

  // Root must be 1x1. Clears previous adjoints first.
  void backward(Var root);

 private:
  void check_owner(Var v) const;

  std::vector<Node> nodes_;
};

// ---- graph-level entry points ----------------------------------------------

// Value of the root. Values are computed eagerly, so this is a lookup.
const Matrix& evaluate(Var root);

// d root / d leaf for every requested leaf. Root must be 1x1.
std::vector<Matrix> gradient(Var root, const std::vector<Var>& leaves);

// ---- elementwise (broadcasting) --------------------------------------------

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);  // elementwise
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator*(double s, Var a);
Var operator*(Var a, double s);
Var operator+(Var a, double s);
Var operator-(Var a, double s);
Var operator-(double s, Var a);

Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var square(Var a);
Var clamp_min(Var a, double floor);

// Explicit broadcast to rows x cols.
Var broadcast(Var a, Eigen::Index rows, Eigen::Index cols);

// ---- linear algebra --------------------------------------------------------

Var matmul(Var a, Var b);
Var transpose(Var a);

// Lower Cholesky factor of (a + jitter * I). a must be symmetric.
// Throws DecompositionError if the factorization fails.
Var cholesky(Var a, double jitter = 0.0);

// Solves L X = B (transpose_lower = false) or L^T X = B (true) for
// lower-triangular L.
Var triangular_solve(Var lower, Var b, bool transpose_lower = false);

Var diagonal(Var a);        // n x n -> n x 1
Var lower_triangle(Var a);  // zero strictly-upper part

// ---- reductions ------------------------------------------------------------

Var sum(Var a);                 // -> 1 x 1
Var row_sum(Var a);             // r x c -> r x 1
Var col_sum(Var a);             // r x c -> 1 x c
Var col_squared_norm(Var a);    // r x c -> 1 x c, sum of squares per column

// ---- indexing --------------------------------------------------------------

Var select_columns(Var a, const std::vector<int>& columns);

// Copy of `a` with a(i, column) = values(i) wherever rows(i) is true.
// `values` is n x 1.
Var scatter_column(Var a, int column, Var values,
                   const std::vector<bool>& rows);

// Side-by-side concatenation of equal-height blocks.
Var concat_columns(const std::vector<Var>& blocks);

// ---- PSD helpers -----------------------------------------------------------

struct PsdFactor {
  Matrix lower;
  double jitter_used = 0.0;
};

// Jitter ladder used by safe_cholesky, as multiples of the mean diagonal.
inline constexpr double kJitterLadder[] = {1e-8, 1e-6, 1e-4};

// Plain-matrix factorization with the escalating jitter ladder.
PsdFactor safe_cholesky(const Matrix& a);

struct CholeskyVar {
  Var lower;
  double jitter_used = 0.0;
};

// Differentiable counterpart: the jitter is chosen on the value and then
// treated as a constant shift.
CholeskyVar safe_cholesky(Var a);

// log det of a PSD matrix via its Cholesky factor.
Var logdet(Var a);

// KL[N(r, S) || N(m, K)] for M x 1 means and M x M covariances.
Var gaussian_kl(Var r, Var s, Var m, Var k);

// Same divergence given lower factors S = Ls Ls^T and K = Lk Lk^T.
// `mean_diff` is (r - m). Only the lower triangle of `ls` is read.
Var gaussian_kl_factored(Var mean_diff, Var ls, Var lk);

}  // namespace ad
}  // namespace gpimpute

#endif  // GPIMPUTE_TENSORGRAD_HPP
