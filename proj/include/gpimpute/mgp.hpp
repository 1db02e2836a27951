#ifndef GPIMPUTE_MGP_HPP
#define GPIMPUTE_MGP_HPP

/**
 *  Chained sparse-GP imputation network.
 *
 *  One single-output sparse GP per attribute that has missing values. The
 *  attributes are visited in order of their raw standard deviation; layer l
 *  predicts attribute perm[l] from every other attribute of X~^(l-1), where
 *  X~^(l-1) is the mean-imputed matrix with the missing cells of perm[0..l-1]
 *  replaced by reparameterized draws from their layers. Each layer is scored
 *  on the cells observed for its attribute. An optional final layer predicts
 *  a target column from X~^(D_m).
 *
 *  All layers are trained jointly on the Monte Carlo ELBO
 *
 *    (N/n) (1/K) sum_k [ sum_i log p(y_i | ...) + sum_i sum_{l obs} log p(x_il | f_il) ]
 *      - sum_l KL[q(u_l) || p(u_l)]
 *
 *  with K stacked copies of the mini-batch.
 */

#include <optional>
#include <vector>

#include "gpimpute/svgp.hpp"

namespace gpimpute {

enum class OrderDirection { Ascending, Descending };

struct AttributeOrdering {
  std::vector<int> permutation;  // attribute indices in imputation order
  Vector stds;                   // raw (pre-standardization) std of every column
};

// Sorts the attributes flagged in `has_missing` by std; ties keep ascending
// column index.
AttributeOrdering order_missing_attributes(const Vector& stds, const std::vector<bool>& has_missing,
                                           OrderDirection direction = OrderDirection::Ascending);

// Population std of the observed cells of `raw`, then the ordering above over
// the columns with at least one missing cell.
AttributeOrdering order_missing_attributes(const Matrix& raw, const BoolMatrix& missing,
                                           OrderDirection direction = OrderDirection::Ascending);

// Mean over the observed cells of each column. Throws ContractError naming a
// column with no observed cell.
Vector observed_column_means(const Matrix& data, const BoolMatrix& missing);

// Missing cells <- `fill`; observed cells copied unchanged.
Matrix fill_missing(const Matrix& data, const BoolMatrix& missing, const Vector& fill);

// Missing cells <- observed column mean.
Matrix initial_impute(const Matrix& data, const BoolMatrix& missing);

struct MgpConfig : GpTrainConfig {
  OrderDirection direction = OrderDirection::Ascending;
  int target_column = -1;  // < 0: imputation-only
  double initial_noise = 1e-2;
  double initial_variance = 1e-2;
};

struct MgpNetwork {
  AttributeOrdering ordering;
  std::vector<SparseGPLayer> impute_layers;  // single-output, one per ordered attribute
  std::optional<SparseGPLayer> target_layer;
  int target_column = -1;
  Vector initial_values;  // column means used for pre-imputation
  Eigen::Index num_columns = 0;

  // Columns feeding layer l (all but its attribute and the target).
  std::vector<int> input_columns(std::size_t layer) const;
  // Columns feeding the target layer.
  std::vector<int> target_inputs() const;
  // Layer index of an attribute, or -1.
  int layer_of(int column) const;

  Eigen::Index parameter_count() const;
  void pack(Vector& out) const;
  void unpack(const Vector& in);
};

MgpNetwork create_mgp(const Matrix& x_hat, const AttributeOrdering& ordering,
                      const Vector& initial_values, const MgpConfig& config, Rng& rng);

struct MgpGraph {
  std::vector<LayerGraph> impute_layers;
  std::optional<LayerGraph> target_layer;
  void gather_gradients(const ad::Tape& tape, Vector& out) const;
};

MgpGraph bind(ad::Tape& tape, const MgpNetwork& network, bool trainable = true);

struct ChainVars {
  std::vector<ad::Var> x_tilde;             // X~^(0) .. X~^(D_m), each nK x D
  std::vector<MarginalVars> marginals;      // per imputation layer, nK x 1
  std::vector<ad::Var> draws;               // per imputation layer, nK x 1
  std::optional<MarginalVars> target;       // target-layer marginals
};

// K stacked passes over the batch. Row k*n + i of every output belongs to
// sample k of batch row i.
ChainVars chain_forward(const MgpGraph& graph, const MgpNetwork& network, const Matrix& x_hat_batch,
                        const BoolMatrix& missing_batch, Rng& rng, int samples);

struct ChainSamples {
  std::vector<Matrix> x_tilde;
  std::vector<Matrix> means;
  std::vector<Matrix> variances;
};

ChainSamples chain_forward(const MgpNetwork& network, const Matrix& x_hat_batch,
                           const BoolMatrix& missing_batch, Rng& rng, int samples);

// `x_hat_batch` holds the pre-imputed values of the batch. Likelihood terms
// are (N/n)-scaled and averaged over the K samples.
ad::Var mgp_elbo(const MgpGraph& graph, const MgpNetwork& network, const Matrix& x_hat_batch,
                 const BoolMatrix& missing_batch, Eigen::Index n_total, int samples, Rng& rng);

struct MgpModel {
  MgpNetwork network;
  TrainingCurve curve;
};

// `data` is the (standardized) training matrix; its missing cells may hold
// anything. The ordering lists the attributes that get a layer.
MgpModel train_mgp(const Matrix& data, const BoolMatrix& missing, const AttributeOrdering& ordering,
                   const MgpConfig& config);

struct ImputedCell {
  Eigen::Index row = 0;
  int column = 0;
  Vector component_means;      // K entries
  Vector component_variances;  // K entries, likelihood variance included
  double mean = 0.0;           // mixture mean, the point estimate
  double variance = 0.0;       // mixture variance
};

struct ImputationResult {
  Matrix completed;
  std::vector<ImputedCell> cells;  // row-major order
};

// Pre-imputes `data` with the network's stored column means, runs K chained
// passes and summarizes each missing cell by its K-component mixture.
ImputationResult impute(const MgpNetwork& network, const Matrix& data, const BoolMatrix& missing,
                        int samples, Rng& rng);

}  // namespace gpimpute

#endif  // GPIMPUTE_MGP_HPP
