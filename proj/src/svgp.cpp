#include "gpimpute/svgp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "gpimpute/matrix_utils.hpp"
#include "gpimpute/optim.hpp"

namespace gpimpute {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

void copy_block(const Matrix& m, Vector& out, Eigen::Index& offset) {
  out.segment(offset, m.size()) = Eigen::Map<const Vector>(m.data(), m.size());
  offset += m.size();
}

void read_block(Matrix& m, const Vector& in, Eigen::Index& offset) {
  Eigen::Map<Vector>(m.data(), m.size()) = in.segment(offset, m.size());
  offset += m.size();
}

}  // namespace

// ---- SparseGPLayer ---------------------------------------------------------

SparseGPLayer SparseGPLayer::create(Matrix inducing, Eigen::Index outputs, double initial_variance,
                                    double initial_noise) {
  SparseGPLayer layer;
  const Eigen::Index m = inducing.rows();
  layer.kernel = RbfArdKernel::with_defaults(inducing.cols());
  layer.inducing = std::move(inducing);
  layer.q_mean = Matrix::Zero(m, outputs);
  layer.q_scale.assign(static_cast<std::size_t>(outputs),
                       std::sqrt(initial_variance) * Matrix::Identity(m, m));
  layer.log_noise = RowVector::Constant(outputs, std::log(initial_noise));
  return layer;
}

Eigen::Index SparseGPLayer::parameter_count() const {
  Eigen::Index n = inducing.size() + q_mean.size();
  for (const Matrix& s : q_scale) n += s.size();
  return n + kernel.log_lengthscales.size() + 1 + log_noise.size();
}

void SparseGPLayer::pack(Vector& out, Eigen::Index& offset) const {
  copy_block(inducing, out, offset);
  copy_block(q_mean, out, offset);
  for (const Matrix& s : q_scale) copy_block(s, out, offset);
  out.segment(offset, kernel.log_lengthscales.size()) = kernel.log_lengthscales;
  offset += kernel.log_lengthscales.size();
  out(offset++) = kernel.log_amplitude;
  out.segment(offset, log_noise.size()) = log_noise.transpose();
  offset += log_noise.size();
}

void SparseGPLayer::unpack(const Vector& in, Eigen::Index& offset) {
  read_block(inducing, in, offset);
  read_block(q_mean, in, offset);
  for (Matrix& s : q_scale) read_block(s, in, offset);
  kernel.log_lengthscales = in.segment(offset, kernel.log_lengthscales.size());
  offset += kernel.log_lengthscales.size();
  kernel.log_amplitude = in(offset++);
  log_noise = in.segment(offset, log_noise.size()).transpose();
  offset += log_noise.size();
}

Matrix initial_inducing(const Matrix& x, Eigen::Index m, Rng& rng) {
  if (x.rows() == 0 || m <= 0) throw ContractError("initial_inducing: empty input");
  std::map<std::vector<double>, Eigen::Index> seen;
  std::vector<Eigen::Index> distinct;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    std::vector<double> key(static_cast<std::size_t>(x.cols()));
    for (Eigen::Index j = 0; j < x.cols(); ++j) key[static_cast<std::size_t>(j)] = x(i, j);
    if (seen.emplace(std::move(key), i).second) distinct.push_back(i);
  }
  if (static_cast<Eigen::Index>(distinct.size()) <= m) return gather_rows(x, distinct);

  std::shuffle(distinct.begin(), distinct.end(), rng);
  distinct.resize(static_cast<std::size_t>(m));
  std::sort(distinct.begin(), distinct.end());
  Matrix centres = gather_rows(x, distinct);

  const Vector x_norms = x.rowwise().squaredNorm();
  for (int iter = 0; iter < 10; ++iter) {
    Matrix dist = (-2.0 * x * centres.transpose()).colwise() + x_norms;
    dist.rowwise() += centres.rowwise().squaredNorm().transpose();
    Matrix sums = Matrix::Zero(m, x.cols());
    Vector counts = Vector::Zero(m);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      Eigen::Index best = 0;
      dist.row(i).minCoeff(&best);
      sums.row(best) += x.row(i);
      counts(best) += 1.0;
    }
    for (Eigen::Index c = 0; c < m; ++c) {
      if (counts(c) > 0) centres.row(c) = sums.row(c) / counts(c);
    }
  }
  return centres;
}

// ---- graph construction ----------------------------------------------------

LayerGraph bind(ad::Tape& tape, const SparseGPLayer& layer, bool trainable) {
  auto param = [&](const Matrix& m) { return trainable ? tape.leaf(m) : tape.constant(m); };
  LayerGraph g;
  g.inducing = param(layer.inducing);
  g.q_mean = param(layer.q_mean);
  for (const Matrix& s : layer.q_scale) g.q_scale.push_back(param(s));
  g.kernel = bind(tape, layer.kernel, trainable);
  g.log_noise = param(layer.log_noise);
  if (layer.has_mean_function()) g.mean_weights = tape.constant(layer.mean_weights);

  ad::Var kzz = kernel_matrix(g.kernel, g.inducing, g.inducing);
  ad::CholeskyVar chol = ad::safe_cholesky(kzz);
  g.kzz_lower = chol.lower;
  g.jitter_used = chol.jitter_used;

  ad::Var centred = g.q_mean;
  if (g.mean_weights.valid()) centred = g.q_mean - ad::matmul(g.inducing, g.mean_weights);
  g.projected_mean = ad::triangular_solve(g.kzz_lower, centred);
  for (const ad::Var& s : g.q_scale) {
    g.projected_scale.push_back(ad::triangular_solve(g.kzz_lower, ad::lower_triangle(s)));
  }
  return g;
}

void LayerGraph::gather_gradients(const ad::Tape& tape, Vector& out, Eigen::Index& offset) const {
  copy_block(tape.grad(inducing), out, offset);
  copy_block(tape.grad(q_mean), out, offset);
  for (const ad::Var& s : q_scale) copy_block(tape.grad(s), out, offset);
  copy_block(tape.grad(kernel.log_lengthscales), out, offset);
  copy_block(tape.grad(kernel.log_amplitude), out, offset);
  copy_block(tape.grad(log_noise), out, offset);
}

MarginalVars predictive_marginals(const LayerGraph& layer, ad::Var x) {
  const Eigen::Index n = x.rows();
  if (x.cols() != layer.inducing.cols()) {
    throw ShapeError("predictive_marginals: inputs " + shape_string(x.rows(), x.cols()) +
                     " for a layer over " + std::to_string(layer.inducing.cols()) + " dimensions");
  }
  ad::Var kzx = kernel_matrix(layer.kernel, layer.inducing, x);
  ad::Var a = ad::triangular_solve(layer.kzz_lower, kzx);  // M x n
  ad::Var mean = ad::transpose(ad::matmul(ad::transpose(layer.projected_mean), a));
  if (layer.mean_weights.valid()) mean = mean + ad::matmul(x, layer.mean_weights);

  ad::Var base = kernel_diag(layer.kernel, n) - ad::transpose(ad::col_squared_norm(a));
  std::vector<ad::Var> columns;
  columns.reserve(layer.projected_scale.size());
  for (const ad::Var& c : layer.projected_scale) {
    ad::Var b = ad::matmul(ad::transpose(c), a);
    columns.push_back(base + ad::transpose(ad::col_squared_norm(b)));
  }
  ad::Var variance = ad::clamp_min(ad::concat_columns(columns), kMinVariance);
  return {mean, variance};
}

MarginalGaussians predictive_marginals(const SparseGPLayer& layer, const Matrix& x) {
  ad::Tape tape;
  LayerGraph g = bind(tape, layer, false);
  MarginalVars mv = predictive_marginals(g, tape.constant(x));
  return {mv.mean.value(), mv.variance.value()};
}

ad::Var kl_divergence(const LayerGraph& layer) {
  const double m = static_cast<double>(layer.kzz_lower.rows());
  const double h = static_cast<double>(layer.output_dim());
  ad::Var logdet_k = 2.0 * ad::sum(ad::log(ad::diagonal(layer.kzz_lower)));
  ad::Var total = ad::sum(ad::square(layer.projected_mean)) + h * logdet_k - h * m;
  for (std::size_t i = 0; i < layer.q_scale.size(); ++i) {
    ad::Var trace = ad::sum(ad::square(layer.projected_scale[i]));
    ad::Var logdet_s = ad::sum(ad::log(ad::square(ad::diagonal(layer.q_scale[i]))));
    total = total + trace - logdet_s;
  }
  return 0.5 * total;
}

double kl_divergence(const SparseGPLayer& layer) {
  ad::Tape tape;
  return kl_divergence(bind(tape, layer, false)).scalar();
}

ad::Var expected_log_likelihood(const MarginalVars& marginals, const Matrix& targets,
                                const Matrix& weights, ad::Var log_noise) {
  ad::Tape& tape = *marginals.mean.tape();
  const Matrix& mu = marginals.mean.value();
  if (targets.rows() != mu.rows() || targets.cols() != mu.cols() || weights.rows() != mu.rows() ||
      weights.cols() != mu.cols()) {
    throw ShapeError("expected_log_likelihood: predictions " + shape_string(mu.rows(), mu.cols()) +
                     ", targets " + shape_string(targets.rows(), targets.cols()) + ", weights " +
                     shape_string(weights.rows(), weights.cols()));
  }
  ad::Var y = tape.constant(targets);
  ad::Var noise = ad::exp(log_noise);
  ad::Var err = ad::square(y - marginals.mean) + marginals.variance;
  ad::Var per_cell = (-0.5 * kLog2Pi) - 0.5 * log_noise - 0.5 * (err / noise);
  return ad::sum(tape.constant(weights) * per_cell);
}

ad::Var svgp_elbo(const LayerGraph& layer, ad::Var x_batch, const Matrix& y_batch,
                  const BoolMatrix& observed, Eigen::Index n_total) {
  const Eigen::Index n = x_batch.rows();
  if (n_total < n) {
    throw ContractError("svgp_elbo: N_total (" + std::to_string(n_total) +
                        ") is smaller than the batch (" + std::to_string(n) + ")");
  }
  MarginalVars mv = predictive_marginals(layer, x_batch);
  ad::Var ell = expected_log_likelihood(mv, y_batch, observed.cast<double>(), layer.log_noise);
  const double scale = static_cast<double>(n_total) / static_cast<double>(n);
  return scale * ell - kl_divergence(layer);
}

// ---- exact GP ---------------------------------------------------------------

MarginalGaussians exact_gp_oracle(const Matrix& x, const Vector& y, const RbfArdKernel& kernel,
                                  double noise, const Matrix& x_star) {
  Matrix k = kernel_matrix(kernel, x, x);
  k.diagonal().array() += noise;
  Eigen::LLT<Matrix> llt(k);
  if (llt.info() != Eigen::Success) {
    throw DecompositionError("exact_gp_oracle: K + noise*I is not positive definite");
  }
  Matrix ks = kernel_matrix(kernel, x, x_star);
  Vector alpha = llt.solve(y);
  Matrix v = llt.matrixL().solve(ks);
  MarginalGaussians out;
  out.mean = ks.transpose() * alpha;
  out.variance = (kernel_diag(kernel, x_star).transpose() - v.colwise().squaredNorm()).transpose();
  return out;
}

double exact_log_marginal_likelihood(const Matrix& x, const Vector& y, const RbfArdKernel& kernel,
                                     double noise) {
  Matrix k = kernel_matrix(kernel, x, x);
  k.diagonal().array() += noise;
  Eigen::LLT<Matrix> llt(k);
  if (llt.info() != Eigen::Success) {
    throw DecompositionError("exact_log_marginal_likelihood: K + noise*I is not positive definite");
  }
  Vector w = llt.matrixL().solve(y);
  Matrix l = llt.matrixL();
  return -0.5 * w.squaredNorm() - l.diagonal().array().log().sum() -
         0.5 * static_cast<double>(y.size()) * kLog2Pi;
}

// ---- training ---------------------------------------------------------------

std::vector<Eigen::Index> sample_batch(Eigen::Index n_total, Eigen::Index batch, Rng& rng) {
  const Eigen::Index n = std::min(batch, n_total);
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(n_total));
  std::iota(rows.begin(), rows.end(), Eigen::Index{0});
  if (n == n_total) return rows;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::uniform_int_distribution<Eigen::Index> pick(i, n_total - 1);
    std::swap(rows[static_cast<std::size_t>(i)], rows[static_cast<std::size_t>(pick(rng))]);
  }
  rows.resize(static_cast<std::size_t>(n));
  return rows;
}

TrainingCurve maximize(Vector& params, const ObjectiveFn& objective, const GpTrainConfig& config) {
  Adam adam(config.learning_rate);
  TrainingCurve curve;
  Vector grad(params.size());
  double last_finite = std::numeric_limits<double>::quiet_NaN();
  for (long it = 0; it < config.iterations; ++it) {
    grad.setZero();
    const double value = objective(params, grad, it);
    if (!std::isfinite(value) || !grad.allFinite()) {
      std::ostringstream msg;
      msg << "training diverged at iteration " << it << ": objective " << value
          << ", last finite objective " << last_finite << ", parameter norm " << params.norm()
          << ", non-finite gradient entries " << (!grad.array().isFinite()).count();
      throw DivergenceError(msg.str());
    }
    last_finite = value;
    if (config.log_every > 0 && (it % config.log_every == 0 || it + 1 == config.iterations)) {
      curve.push_back({it, value});
    }
    adam.step(params, -grad);
  }
  return curve;
}

SvgpModel fit_svgp(const Matrix& x_hat, const BoolMatrix& missing, const GpTrainConfig& config) {
  const Eigen::Index n_total = x_hat.rows();
  const Eigen::Index d = x_hat.cols();
  if (n_total == 0 || d == 0) throw ContractError("fit_svgp: empty dataset");
  if (missing.rows() != n_total || missing.cols() != d) {
    throw ShapeError("fit_svgp: mask " + shape_string(missing.rows(), missing.cols()) +
                     " does not match data " + shape_string(n_total, d));
  }
  Rng rng(config.seed);
  SvgpModel model;
  model.layer = SparseGPLayer::create(initial_inducing(x_hat, config.inducing, rng), d);
  const BoolMatrix observed = missing.unaryExpr([](bool b) { return !b; });

  Vector params(model.layer.parameter_count());
  Eigen::Index offset = 0;
  model.layer.pack(params, offset);

  SparseGPLayer work = model.layer;
  auto objective = [&](const Vector& p, Vector& grad, long) {
    Eigen::Index off = 0;
    work.unpack(p, off);
    std::vector<Eigen::Index> rows = sample_batch(n_total, config.batch, rng);
    Matrix xb = gather_rows(x_hat, rows);
    BoolMatrix ob = gather_rows(observed, rows);
    ad::Tape tape;
    LayerGraph g = bind(tape, work, true);
    ad::Var elbo = svgp_elbo(g, tape.constant(xb), xb, ob, n_total);
    tape.backward(elbo);
    off = 0;
    g.gather_gradients(tape, grad, off);
    return elbo.scalar();
  };
  model.curve = maximize(params, objective, config);
  offset = 0;
  model.layer.unpack(params, offset);
  return model;
}

Matrix svgp_impute(const SparseGPLayer& layer, const Matrix& x_hat, const BoolMatrix& missing) {
  if (x_hat.cols() != layer.input_dim() || missing.rows() != x_hat.rows() ||
      missing.cols() != x_hat.cols()) {
    throw ShapeError("svgp_impute: data " + shape_string(x_hat.rows(), x_hat.cols()) + ", mask " +
                     shape_string(missing.rows(), missing.cols()) + ", layer input width " +
                     std::to_string(layer.input_dim()));
  }
  Matrix out = x_hat;
  constexpr Eigen::Index kChunk = 1024;
  for (Eigen::Index start = 0; start < x_hat.rows(); start += kChunk) {
    const Eigen::Index len = std::min(kChunk, x_hat.rows() - start);
    MarginalGaussians mg = predictive_marginals(layer, x_hat.middleRows(start, len));
    for (Eigen::Index i = 0; i < len; ++i) {
      for (Eigen::Index j = 0; j < x_hat.cols(); ++j) {
        if (missing(start + i, j)) out(start + i, j) = mg.mean(i, j);
      }
    }
  }
  return out;
}

}  // namespace gpimpute
