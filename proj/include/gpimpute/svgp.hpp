#ifndef GPIMPUTE_SVGP_HPP
#define GPIMPUTE_SVGP_HPP

/**
 *  Sparse variational GP layer with shared inducing inputs.
 *
 *  The variational posterior over inducing values is kept in its natural
 *  (unwhitened) form: one mean column r_h and one lower factor L_h with
 *  S_h = L_h L_h^T per output h. For inputs x the marginals are
 *
 *    mu(x)      = m(x) + k_Zx^T Kzz^{-1} (r - m(Z))
 *    sigma^2(x) = k(x,x) - k_Zx^T Kzz^{-1} (Kzz - S) Kzz^{-1} k_Zx
 *
 *  evaluated through the Cholesky factor of Kzz so no inverse is formed.
 */

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <utility>
#include <vector>

#include "gpimpute/kernels.hpp"
#include "gpimpute/tensorgrad.hpp"

namespace gpimpute {

using Rng = std::mt19937_64;

struct MarginalGaussians {
  Matrix mean;      // n x H
  Matrix variance;  // n x H, strictly positive
};

// Floor applied to predictive variances.
inline constexpr double kMinVariance = 1e-12;

struct SparseGPLayer {
  Matrix inducing;              // M x D_in
  Matrix q_mean;                // M x H
  std::vector<Matrix> q_scale;  // H lower-triangular M x M factors
  RbfArdKernel kernel;
  Matrix mean_weights;          // D_in x H fixed linear prior mean; empty for zero mean
  RowVector log_noise;          // 1 x H likelihood variances (log)

  Eigen::Index input_dim() const { return inducing.cols(); }
  Eigen::Index output_dim() const { return q_mean.cols(); }
  Eigen::Index num_inducing() const { return inducing.rows(); }
  bool has_mean_function() const { return mean_weights.size() > 0; }

  // Z given, r = 0, S = initial_variance * I, default kernel,
  // likelihood variance `initial_noise` for every output.
  static SparseGPLayer create(Matrix inducing, Eigen::Index outputs,
                              double initial_variance = 1e-2, double initial_noise = 1e-2);

  // Trainable parameters, flattened in a fixed order:
  // Z, q_mean, q_scale[0..H), log_lengthscales, log_amplitude, log_noise.
  Eigen::Index parameter_count() const;
  void pack(Vector& out, Eigen::Index& offset) const;
  void unpack(const Vector& in, Eigen::Index& offset);
};

// Inducing inputs: the distinct rows of x when there are at most m of them,
// otherwise m centres from a few Lloyd iterations seeded by distinct rows.
Matrix initial_inducing(const Matrix& x, Eigen::Index m, Rng& rng);

// A layer bound to a tape, with the quantities every prediction reuses.
struct LayerGraph {
  ad::Var inducing;
  ad::Var q_mean;
  std::vector<ad::Var> q_scale;
  KernelVars kernel;
  ad::Var mean_weights;  // invalid when the layer has zero prior mean
  ad::Var log_noise;

  ad::Var kzz_lower;                 // chol(Kzz + jitter I)
  ad::Var projected_mean;            // Lk^{-1} (r - m(Z)), M x H
  std::vector<ad::Var> projected_scale;  // Lk^{-1} L_h
  double jitter_used = 0.0;

  Eigen::Index output_dim() const { return static_cast<Eigen::Index>(q_scale.size()); }
  // Adjoints in SparseGPLayer::pack order.
  void gather_gradients(const ad::Tape& tape, Vector& out, Eigen::Index& offset) const;
};

LayerGraph bind(ad::Tape& tape, const SparseGPLayer& layer, bool trainable = true);

struct MarginalVars {
  ad::Var mean;      // n x H
  ad::Var variance;  // n x H
};

MarginalVars predictive_marginals(const LayerGraph& layer, ad::Var x);
MarginalGaussians predictive_marginals(const SparseGPLayer& layer, const Matrix& x);

// Sum over outputs of KL[q(u_h) || p(u_h)].
ad::Var kl_divergence(const LayerGraph& layer);
double kl_divergence(const SparseGPLayer& layer);

// sum over cells with weight w_ih of E_{N(f|mu,v)}[log N(y | f, noise_h)]
//   = log N(y | mu, noise) - v / (2 noise)
// `weights` is an n x H constant (0/1 observation indicators, possibly scaled).
ad::Var expected_log_likelihood(const MarginalVars& marginals, const Matrix& targets,
                                const Matrix& weights, ad::Var log_noise);

// (N_total / n) * expected log-likelihood over observed cells - KL.
// `observed` is true where the target cell contributes.
ad::Var svgp_elbo(const LayerGraph& layer, ad::Var x_batch, const Matrix& y_batch,
                  const BoolMatrix& observed, Eigen::Index n_total);

// ---- exact GP reference ----------------------------------------------------

// Full-GP posterior marginals of the latent function at x_star.
MarginalGaussians exact_gp_oracle(const Matrix& x, const Vector& y, const RbfArdKernel& kernel,
                                  double noise, const Matrix& x_star);

// log N(y | 0, K + noise I).
double exact_log_marginal_likelihood(const Matrix& x, const Vector& y,
                                     const RbfArdKernel& kernel, double noise);

// ---- training --------------------------------------------------------------

struct GpTrainConfig {
  Eigen::Index inducing = 100;
  Eigen::Index batch = 100;
  double learning_rate = 0.01;
  long iterations = 10000;
  int samples = 20;  // Monte Carlo draws for training and prediction
  std::uint64_t seed = 1;
  long log_every = 100;
};

struct TrainingPoint {
  long iteration;
  double elbo;
};
using TrainingCurve = std::vector<TrainingPoint>;

// Objective evaluation for the optimizer: returns the ELBO estimate and
// writes its gradient w.r.t. the flat parameters into `grad`.
using ObjectiveFn = std::function<double(const Vector& params, Vector& grad, long iteration)>;

// Adam ascent on the objective. Throws DivergenceError on a non-finite
// estimate, with the last finite value and parameter norm in the message.
TrainingCurve maximize(Vector& params, const ObjectiveFn& objective, const GpTrainConfig& config);

// Rows of a mini-batch drawn without replacement.
std::vector<Eigen::Index> sample_batch(Eigen::Index n_total, Eigen::Index batch, Rng& rng);

struct SvgpModel {
  SparseGPLayer layer;
  TrainingCurve curve;
};

// Multi-output layer mapping every attribute to itself. `x_hat` is the
// mean-imputed standardized matrix and `missing` marks cells excluded from the
// likelihood.
SvgpModel fit_svgp(const Matrix& x_hat, const BoolMatrix& missing, const GpTrainConfig& config);

// Predictive mean at missing cells; observed cells pass through.
Matrix svgp_impute(const SparseGPLayer& layer, const Matrix& x_hat, const BoolMatrix& missing);

}  // namespace gpimpute

#endif  // GPIMPUTE_SVGP_HPP
