#ifndef GPIMPUTE_DGP_HPP
#define GPIMPUTE_DGP_HPP

/**
 *  Doubly-stochastic deep GP: a stack of sparse GP layers where each layer
 *  consumes reparameterized draws from the previous one,
 *
 *    f^(l) = mu^(l)(f^(l-1)) + eps * sqrt(sigma2^(l)(f^(l-1))),  f^(0) = x.
 *
 *  Hidden layers carry a fixed identity-like linear prior mean; the output
 *  layer has zero prior mean. Only the output layer has a likelihood.
 */

#include <vector>

#include "gpimpute/svgp.hpp"

namespace gpimpute {

struct DgpConfig : GpTrainConfig {
  int layers = 5;
  Eigen::Index hidden_width = 0;  // 0 selects min(D, 30)
  // When false the output layer's Gaussian expectation is taken in closed
  // form given the propagated sample; when true it is sampled as well.
  bool sample_final_layer = false;
};

struct DgpNetwork {
  std::vector<SparseGPLayer> layers;
  int samples_train = 20;
  int samples_test = 20;

  Eigen::Index input_dim() const { return layers.front().input_dim(); }
  Eigen::Index output_dim() const { return layers.back().output_dim(); }

  Eigen::Index parameter_count() const;
  void pack(Vector& out) const;
  void unpack(const Vector& in);
};

// Identity-like D_in x D_out prior-mean weights.
Matrix identity_mean_weights(Eigen::Index in, Eigen::Index out);

// Layer 1 inducing inputs come from `x`; deeper layers take the previous
// inducing inputs pushed through the identity-like mean.
DgpNetwork create_dgp(const Matrix& x, Eigen::Index outputs, const DgpConfig& config, Rng& rng);

// Draws and the standard-normal noise that produced them, per layer.
struct SamplePath {
  std::vector<Matrix> draws;  // n x H per layer
  std::vector<Matrix> noise;
};

struct DgpGraph {
  std::vector<LayerGraph> layers;
  void gather_gradients(const ad::Tape& tape, Vector& out) const;
};

DgpGraph bind(ad::Tape& tape, const DgpNetwork& network, bool trainable = true);

struct PropagationVars {
  std::vector<ad::Var> draws;     // one per sampled layer
  MarginalVars final_marginals;   // output-layer marginals given the last draw
};

// Reparameterized pass. When `sample_final` the output layer is drawn too and
// appears last in `draws`. Noise is recorded into `path` when non-null.
PropagationVars propagate(const DgpGraph& graph, ad::Var x, Rng& rng, bool sample_final,
                          SamplePath* path = nullptr);

SamplePath propagate_sample(const DgpNetwork& network, const Matrix& x, Rng& rng);

// Monte Carlo ELBO with K stacked samples of the batch:
//   (N/n) * (1/K) sum_k sum_observed log-lik - sum_l KL_l
ad::Var dgp_elbo(const DgpGraph& graph, const Matrix& x_batch, const Matrix& y_batch,
                 const BoolMatrix& observed, Eigen::Index n_total, int samples, Rng& rng,
                 bool sample_final = false);

// Equally weighted mixture of K Gaussians per output.
struct GaussianMixture {
  std::vector<Matrix> means;      // K entries of n x H
  std::vector<Matrix> variances;  // K entries of n x H

  Matrix mean() const;
  // Law of total variance over the components.
  Matrix variance() const;
};

// Predictive mixture of the latent outputs. With `add_noise` each component
// variance includes the likelihood variance of its output.
GaussianMixture dgp_predict(const DgpNetwork& network, const Matrix& x, int samples, Rng& rng,
                            bool add_noise = false);

struct DgpModel {
  DgpNetwork network;
  TrainingCurve curve;
};

DgpModel fit_dgp(const Matrix& x_hat, const BoolMatrix& missing, const DgpConfig& config);

Matrix dgp_impute(const DgpNetwork& network, const Matrix& x_hat, const BoolMatrix& missing,
                  int samples, Rng& rng);

}  // namespace gpimpute

#endif  // GPIMPUTE_DGP_HPP
