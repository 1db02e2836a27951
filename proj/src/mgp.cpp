#include "gpimpute/mgp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gpimpute/matrix_utils.hpp"

namespace gpimpute {

// ---- ordering and pre-imputation -------------------------------------------

AttributeOrdering order_missing_attributes(const Vector& stds, const std::vector<bool>& has_missing,
                                           OrderDirection direction) {
  if (static_cast<Eigen::Index>(has_missing.size()) != stds.size()) {
    throw ShapeError("order_missing_attributes: " + std::to_string(has_missing.size()) +
                     " missing flags for " + std::to_string(stds.size()) + " columns");
  }
  AttributeOrdering ord;
  ord.stds = stds;
  for (std::size_t c = 0; c < has_missing.size(); ++c) {
    if (has_missing[c]) ord.permutation.push_back(static_cast<int>(c));
  }
  std::stable_sort(ord.permutation.begin(), ord.permutation.end(), [&](int a, int b) {
    return direction == OrderDirection::Ascending ? stds(a) < stds(b) : stds(a) > stds(b);
  });
  return ord;
}

AttributeOrdering order_missing_attributes(const Matrix& raw, const BoolMatrix& missing,
                                           OrderDirection direction) {
  if (missing.rows() != raw.rows() || missing.cols() != raw.cols()) {
    throw ShapeError("order_missing_attributes: mask " + shape_string(missing.rows(), missing.cols()) +
                     " does not match data " + shape_string(raw.rows(), raw.cols()));
  }
  const Vector means = observed_column_means(raw, missing);
  Vector stds(raw.cols());
  std::vector<bool> has_missing(static_cast<std::size_t>(raw.cols()), false);
  for (Eigen::Index c = 0; c < raw.cols(); ++c) {
    double ss = 0.0;
    Eigen::Index count = 0;
    for (Eigen::Index i = 0; i < raw.rows(); ++i) {
      if (missing(i, c)) {
        has_missing[static_cast<std::size_t>(c)] = true;
      } else {
        ss += (raw(i, c) - means(c)) * (raw(i, c) - means(c));
        ++count;
      }
    }
    stds(c) = std::sqrt(ss / static_cast<double>(count));
  }
  return order_missing_attributes(stds, has_missing, direction);
}

Vector observed_column_means(const Matrix& data, const BoolMatrix& missing) {
  if (missing.rows() != data.rows() || missing.cols() != data.cols()) {
    throw ShapeError("observed_column_means: mask " + shape_string(missing.rows(), missing.cols()) +
                     " does not match data " + shape_string(data.rows(), data.cols()));
  }
  Vector means(data.cols());
  for (Eigen::Index c = 0; c < data.cols(); ++c) {
    double total = 0.0;
    Eigen::Index count = 0;
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
      if (!missing(i, c)) {
        total += data(i, c);
        ++count;
      }
    }
    if (count == 0) {
      throw ContractError("column " + std::to_string(c) + " has no observed values");
    }
    means(c) = total / static_cast<double>(count);
  }
  return means;
}

Matrix fill_missing(const Matrix& data, const BoolMatrix& missing, const Vector& fill) {
  if (missing.rows() != data.rows() || missing.cols() != data.cols() || fill.size() != data.cols()) {
    throw ShapeError("fill_missing: data " + shape_string(data.rows(), data.cols()) + ", mask " +
                     shape_string(missing.rows(), missing.cols()) + ", fill of length " +
                     std::to_string(fill.size()));
  }
  Matrix out = data;
  for (Eigen::Index c = 0; c < data.cols(); ++c) {
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
      if (missing(i, c)) out(i, c) = fill(c);
    }
  }
  return out;
}

Matrix initial_impute(const Matrix& data, const BoolMatrix& missing) {
  return fill_missing(data, missing, observed_column_means(data, missing));
}

// ---- network ---------------------------------------------------------------

std::vector<int> MgpNetwork::input_columns(std::size_t layer) const {
  const int own = ordering.permutation.at(layer);
  std::vector<int> cols;
  for (int c = 0; c < static_cast<int>(num_columns); ++c) {
    if (c != own && c != target_column) cols.push_back(c);
  }
  return cols;
}

std::vector<int> MgpNetwork::target_inputs() const {
  std::vector<int> cols;
  for (int c = 0; c < static_cast<int>(num_columns); ++c) {
    if (c != target_column) cols.push_back(c);
  }
  return cols;
}

int MgpNetwork::layer_of(int column) const {
  auto it = std::find(ordering.permutation.begin(), ordering.permutation.end(), column);
  return it == ordering.permutation.end() ? -1
                                          : static_cast<int>(it - ordering.permutation.begin());
}

Eigen::Index MgpNetwork::parameter_count() const {
  Eigen::Index n = 0;
  for (const SparseGPLayer& l : impute_layers) n += l.parameter_count();
  if (target_layer) n += target_layer->parameter_count();
  return n;
}

void MgpNetwork::pack(Vector& out) const {
  out.resize(parameter_count());
  Eigen::Index offset = 0;
  for (const SparseGPLayer& l : impute_layers) l.pack(out, offset);
  if (target_layer) target_layer->pack(out, offset);
}

void MgpNetwork::unpack(const Vector& in) {
  Eigen::Index offset = 0;
  for (SparseGPLayer& l : impute_layers) l.unpack(in, offset);
  if (target_layer) target_layer->unpack(in, offset);
}

void MgpGraph::gather_gradients(const ad::Tape& tape, Vector& out) const {
  Eigen::Index offset = 0;
  for (const LayerGraph& l : impute_layers) l.gather_gradients(tape, out, offset);
  if (target_layer) target_layer->gather_gradients(tape, out, offset);
}

MgpNetwork create_mgp(const Matrix& x_hat, const AttributeOrdering& ordering,
                      const Vector& initial_values, const MgpConfig& config, Rng& rng) {
  if (x_hat.rows() == 0) throw ContractError("create_mgp: empty dataset");
  if (initial_values.size() != x_hat.cols()) {
    throw ShapeError("create_mgp: " + std::to_string(initial_values.size()) +
                     " initial values for " + std::to_string(x_hat.cols()) + " columns");
  }
  MgpNetwork net;
  net.ordering = ordering;
  net.num_columns = x_hat.cols();
  net.initial_values = initial_values;
  net.target_column = config.target_column;
  if (net.target_column >= x_hat.cols()) {
    throw ContractError("create_mgp: target column " + std::to_string(net.target_column) +
                        " out of range");
  }
  for (int c : ordering.permutation) {
    if (c < 0 || c >= x_hat.cols()) {
      throw ShapeError("create_mgp: ordered attribute " + std::to_string(c) + " out of range");
    }
    if (c == net.target_column) {
      throw ContractError("create_mgp: the target column cannot also be an imputed attribute");
    }
  }
  auto make_layer = [&](const std::vector<int>& cols) {
    Matrix inputs(x_hat.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) inputs.col(static_cast<Eigen::Index>(j)) = x_hat.col(cols[j]);
    return SparseGPLayer::create(initial_inducing(inputs, config.inducing, rng), 1,
                                 config.initial_variance, config.initial_noise);
  };
  for (std::size_t l = 0; l < ordering.permutation.size(); ++l) {
    net.impute_layers.push_back(make_layer(net.input_columns(l)));
  }
  if (net.target_column >= 0) net.target_layer = make_layer(net.target_inputs());
  return net;
}

MgpGraph bind(ad::Tape& tape, const MgpNetwork& network, bool trainable) {
  MgpGraph g;
  for (const SparseGPLayer& l : network.impute_layers) g.impute_layers.push_back(bind(tape, l, trainable));
  if (network.target_layer) g.target_layer = bind(tape, *network.target_layer, trainable);
  return g;
}

// ---- forward pass ------------------------------------------------------------

namespace {

std::vector<bool> column_flags(const BoolMatrix& m, Eigen::Index column) {
  std::vector<bool> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) out[static_cast<std::size_t>(i)] = m(i, column);
  return out;
}

void check_batch(const MgpNetwork& network, const Matrix& x, const BoolMatrix& missing) {
  if (x.cols() != network.num_columns || missing.rows() != x.rows() || missing.cols() != x.cols()) {
    throw ShapeError("MGP batch " + shape_string(x.rows(), x.cols()) + " with mask " +
                     shape_string(missing.rows(), missing.cols()) + " for a network over " +
                     std::to_string(network.num_columns) + " attributes");
  }
}

}  // namespace

ChainVars chain_forward(const MgpGraph& graph, const MgpNetwork& network, const Matrix& x_hat_batch,
                        const BoolMatrix& missing_batch, Rng& rng, int samples) {
  check_batch(network, x_hat_batch, missing_batch);
  if (samples < 1) throw ContractError("chain_forward: need at least one sample");
  if (graph.impute_layers.empty() && !graph.target_layer) {
    throw ContractError("chain_forward: network has no layers");
  }
  ad::Tape& tape = graph.impute_layers.empty() ? *graph.target_layer->inducing.tape()
                                               : *graph.impute_layers.front().inducing.tape();
  const BoolMatrix missing = tile_rows(missing_batch, samples);
  ChainVars out;
  out.x_tilde.push_back(tape.constant(tile_rows(x_hat_batch, samples)));
  for (std::size_t l = 0; l < graph.impute_layers.size(); ++l) {
    const int column = network.ordering.permutation[l];
    ad::Var inputs = ad::select_columns(out.x_tilde.back(), network.input_columns(l));
    MarginalVars mv = predictive_marginals(graph.impute_layers[l], inputs);
    Matrix eps = standard_normal(mv.mean.rows(), 1, rng);
    ad::Var draw = mv.mean + tape.constant(std::move(eps)) * ad::sqrt(mv.variance);
    out.x_tilde.push_back(ad::scatter_column(out.x_tilde.back(), column, draw,
                                             column_flags(missing, column)));
    out.marginals.push_back(mv);
    out.draws.push_back(draw);
  }
  if (graph.target_layer) {
    ad::Var inputs = ad::select_columns(out.x_tilde.back(), network.target_inputs());
    out.target = predictive_marginals(*graph.target_layer, inputs);
  }
  return out;
}

ChainSamples chain_forward(const MgpNetwork& network, const Matrix& x_hat_batch,
                           const BoolMatrix& missing_batch, Rng& rng, int samples) {
  ad::Tape tape;
  MgpGraph g = bind(tape, network, false);
  ChainVars cv = chain_forward(g, network, x_hat_batch, missing_batch, rng, samples);
  ChainSamples out;
  for (const ad::Var& x : cv.x_tilde) out.x_tilde.push_back(x.value());
  for (const MarginalVars& mv : cv.marginals) {
    out.means.push_back(mv.mean.value());
    out.variances.push_back(mv.variance.value());
  }
  if (cv.target) {
    out.means.push_back(cv.target->mean.value());
    out.variances.push_back(cv.target->variance.value());
  }
  return out;
}

ad::Var mgp_elbo(const MgpGraph& graph, const MgpNetwork& network, const Matrix& x_hat_batch,
                 const BoolMatrix& missing_batch, Eigen::Index n_total, int samples, Rng& rng) {
  if (samples < 1) throw ContractError("mgp_elbo: need at least one sample (K >= 1)");
  const Eigen::Index n = x_hat_batch.rows();
  if (n_total < n) {
    throw ContractError("mgp_elbo: N_total (" + std::to_string(n_total) +
                        ") is smaller than the batch (" + std::to_string(n) + ")");
  }
  ChainVars cv = chain_forward(graph, network, x_hat_batch, missing_batch, rng, samples);
  const BoolMatrix missing = tile_rows(missing_batch, samples);
  const Matrix x = tile_rows(x_hat_batch, samples);

  std::vector<ad::Var> terms;
  auto score_column = [&](const MarginalVars& mv, int column, ad::Var log_noise) {
    Matrix weights = (!missing.col(column).array()).cast<double>().matrix();
    terms.push_back(expected_log_likelihood(mv, x.col(column), weights, log_noise));
  };
  for (std::size_t l = 0; l < graph.impute_layers.size(); ++l) {
    score_column(cv.marginals[l], network.ordering.permutation[l], graph.impute_layers[l].log_noise);
  }
  if (cv.target) score_column(*cv.target, network.target_column, graph.target_layer->log_noise);

  ad::Var ell = terms.front();
  for (std::size_t t = 1; t < terms.size(); ++t) ell = ell + terms[t];
  ad::Var kl = graph.impute_layers.empty() ? kl_divergence(*graph.target_layer)
                                           : kl_divergence(graph.impute_layers.front());
  for (std::size_t l = 1; l < graph.impute_layers.size(); ++l) kl = kl + kl_divergence(graph.impute_layers[l]);
  if (graph.target_layer && !graph.impute_layers.empty()) kl = kl + kl_divergence(*graph.target_layer);

  const double scale =
      static_cast<double>(n_total) / (static_cast<double>(n) * static_cast<double>(samples));
  return scale * ell - kl;
}

// ---- training and imputation ------------------------------------------------

MgpModel train_mgp(const Matrix& data, const BoolMatrix& missing, const AttributeOrdering& ordering,
                   const MgpConfig& config) {
  if (data.rows() == 0 || data.cols() == 0) throw ContractError("train_mgp: empty dataset");
  const Vector means = observed_column_means(data, missing);
  const Matrix x_hat = fill_missing(data, missing, means);
  Rng rng(config.seed);
  MgpModel model;
  model.network = create_mgp(x_hat, ordering, means, config, rng);
  if (model.network.impute_layers.empty() && !model.network.target_layer) return model;

  const Eigen::Index n_total = x_hat.rows();
  Vector params;
  model.network.pack(params);
  MgpNetwork work = model.network;
  auto objective = [&](const Vector& p, Vector& grad, long) {
    work.unpack(p);
    std::vector<Eigen::Index> rows = sample_batch(n_total, config.batch, rng);
    Matrix xb = gather_rows(x_hat, rows);
    BoolMatrix mb = gather_rows(missing, rows);
    ad::Tape tape;
    MgpGraph g = bind(tape, work, true);
    ad::Var elbo = mgp_elbo(g, work, xb, mb, n_total, config.samples, rng);
    tape.backward(elbo);
    g.gather_gradients(tape, grad);
    return elbo.scalar();
  };
  model.curve = maximize(params, objective, config);
  model.network.unpack(params);
  return model;
}

ImputationResult impute(const MgpNetwork& network, const Matrix& data, const BoolMatrix& missing,
                        int samples, Rng& rng) {
  check_batch(network, data, missing);
  if (samples < 1) throw ContractError("impute: need at least one sample");
  // Where each column's predictions live in ChainSamples::means.
  std::vector<int> slot(static_cast<std::size_t>(network.num_columns), -1);
  std::vector<double> noise(static_cast<std::size_t>(network.num_columns), 0.0);
  for (std::size_t l = 0; l < network.impute_layers.size(); ++l) {
    const int c = network.ordering.permutation[l];
    slot[static_cast<std::size_t>(c)] = static_cast<int>(l);
    noise[static_cast<std::size_t>(c)] = std::exp(network.impute_layers[l].log_noise(0));
  }
  if (network.target_layer) {
    slot[static_cast<std::size_t>(network.target_column)] = static_cast<int>(network.impute_layers.size());
    noise[static_cast<std::size_t>(network.target_column)] = std::exp(network.target_layer->log_noise(0));
  }
  for (Eigen::Index c = 0; c < missing.cols(); ++c) {
    if (slot[static_cast<std::size_t>(c)] < 0 && missing.col(c).any()) {
      throw ContractError("impute: column " + std::to_string(c) +
                          " has missing cells but no imputation layer");
    }
  }

  ImputationResult result;
  const Matrix x_hat = fill_missing(data, missing, network.initial_values);
  result.completed = x_hat;
  const Eigen::Index chunk = std::max<Eigen::Index>(1, 4096 / samples);
  for (Eigen::Index start = 0; start < data.rows(); start += chunk) {
    const Eigen::Index len = std::min(chunk, data.rows() - start);
    const BoolMatrix mb = missing.middleRows(start, len);
    if (!mb.any()) continue;
    ChainSamples cs = chain_forward(network, x_hat.middleRows(start, len), mb, rng, samples);
    for (Eigen::Index i = 0; i < len; ++i) {
      for (Eigen::Index c = 0; c < data.cols(); ++c) {
        if (!mb(i, c)) continue;
        const auto s = static_cast<std::size_t>(slot[static_cast<std::size_t>(c)]);
        ImputedCell cell;
        cell.row = start + i;
        cell.column = static_cast<int>(c);
        cell.component_means.resize(samples);
        cell.component_variances.resize(samples);
        for (int k = 0; k < samples; ++k) {
          cell.component_means(k) = cs.means[s](k * len + i, 0);
          cell.component_variances(k) = cs.variances[s](k * len + i, 0) + noise[static_cast<std::size_t>(c)];
        }
        cell.mean = cell.component_means.mean();
        cell.variance = std::max(
            0.0, (cell.component_variances.array() + cell.component_means.array().square()).mean() -
                     cell.mean * cell.mean);
        result.completed(cell.row, c) = cell.mean;
        result.cells.push_back(std::move(cell));
      }
    }
  }
  return result;
}

}  // namespace gpimpute
