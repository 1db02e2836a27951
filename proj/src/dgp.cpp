#include "gpimpute/dgp.hpp"

#include <algorithm>
#include <cmath>

#include "gpimpute/matrix_utils.hpp"

namespace gpimpute {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;
}

Eigen::Index DgpNetwork::parameter_count() const {
  Eigen::Index n = 0;
  for (const SparseGPLayer& l : layers) n += l.parameter_count();
  return n;
}

void DgpNetwork::pack(Vector& out) const {
  out.resize(parameter_count());
  Eigen::Index offset = 0;
  for (const SparseGPLayer& l : layers) l.pack(out, offset);
}

void DgpNetwork::unpack(const Vector& in) {
  Eigen::Index offset = 0;
  for (SparseGPLayer& l : layers) l.unpack(in, offset);
}

void DgpGraph::gather_gradients(const ad::Tape& tape, Vector& out) const {
  Eigen::Index offset = 0;
  for (const LayerGraph& l : layers) l.gather_gradients(tape, out, offset);
}

Matrix identity_mean_weights(Eigen::Index in, Eigen::Index out) {
  Matrix w = Matrix::Zero(in, out);
  for (Eigen::Index i = 0; i < std::min(in, out); ++i) w(i, i) = 1.0;
  return w;
}

DgpNetwork create_dgp(const Matrix& x, Eigen::Index outputs, const DgpConfig& config, Rng& rng) {
  if (config.layers < 1) throw ContractError("create_dgp: need at least one layer");
  if (x.rows() == 0) throw ContractError("create_dgp: empty input");
  const Eigen::Index width =
      config.hidden_width > 0 ? config.hidden_width : std::min<Eigen::Index>(x.cols(), 30);
  DgpNetwork net;
  net.samples_train = config.samples;
  net.samples_test = config.samples;
  Matrix z = initial_inducing(x, config.inducing, rng);
  for (int l = 0; l < config.layers; ++l) {
    const bool last = l + 1 == config.layers;
    const Eigen::Index out = last ? outputs : width;
    SparseGPLayer layer = SparseGPLayer::create(z, out);
    if (!last) {
      layer.mean_weights = identity_mean_weights(z.cols(), out);
      z = z * layer.mean_weights;
    }
    net.layers.push_back(std::move(layer));
  }
  return net;
}

DgpGraph bind(ad::Tape& tape, const DgpNetwork& network, bool trainable) {
  DgpGraph g;
  for (const SparseGPLayer& l : network.layers) g.layers.push_back(bind(tape, l, trainable));
  return g;
}

PropagationVars propagate(const DgpGraph& graph, ad::Var x, Rng& rng, bool sample_final,
                          SamplePath* path) {
  ad::Tape& tape = *x.tape();
  PropagationVars out;
  ad::Var f = x;
  const std::size_t n_layers = graph.layers.size();
  for (std::size_t l = 0; l < n_layers; ++l) {
    MarginalVars mv = predictive_marginals(graph.layers[l], f);
    if (l + 1 == n_layers) {
      out.final_marginals = mv;
      if (!sample_final) break;
    }
    Matrix eps = standard_normal(mv.mean.rows(), mv.mean.cols(), rng);
    f = mv.mean + tape.constant(eps) * ad::sqrt(mv.variance);
    out.draws.push_back(f);
    if (path) {
      path->draws.push_back(f.value());
      path->noise.push_back(std::move(eps));
    }
  }
  return out;
}

SamplePath propagate_sample(const DgpNetwork& network, const Matrix& x, Rng& rng) {
  if (x.cols() != network.input_dim()) {
    throw ShapeError("propagate_sample: inputs " + shape_string(x.rows(), x.cols()) +
                     " for a network over " + std::to_string(network.input_dim()) + " dimensions");
  }
  ad::Tape tape;
  DgpGraph g = bind(tape, network, false);
  SamplePath path;
  propagate(g, tape.constant(x), rng, true, &path);
  return path;
}

ad::Var dgp_elbo(const DgpGraph& graph, const Matrix& x_batch, const Matrix& y_batch,
                 const BoolMatrix& observed, Eigen::Index n_total, int samples, Rng& rng,
                 bool sample_final) {
  if (samples < 1) throw ContractError("dgp_elbo: need at least one sample (K >= 1)");
  const Eigen::Index n = x_batch.rows();
  if (n_total < n) {
    throw ContractError("dgp_elbo: N_total (" + std::to_string(n_total) +
                        ") is smaller than the batch (" + std::to_string(n) + ")");
  }
  ad::Tape& tape = *graph.layers.front().inducing.tape();
  ad::Var x = tape.constant(tile_rows(x_batch, samples));
  const Matrix y = tile_rows(y_batch, samples);
  const Matrix w = tile_rows(observed.cast<double>(), samples);
  PropagationVars pv = propagate(graph, x, rng, sample_final);
  const LayerGraph& out = graph.layers.back();

  ad::Var ell;
  if (sample_final) {
    ad::Var f = pv.draws.back();
    ad::Var per_cell = (-0.5 * kLog2Pi) - 0.5 * out.log_noise -
                       0.5 * (ad::square(tape.constant(y) - f) / ad::exp(out.log_noise));
    ell = ad::sum(tape.constant(w) * per_cell);
  } else {
    ell = expected_log_likelihood(pv.final_marginals, y, w, out.log_noise);
  }
  const double scale =
      static_cast<double>(n_total) / (static_cast<double>(n) * static_cast<double>(samples));
  ad::Var kl = kl_divergence(graph.layers.front());
  for (std::size_t l = 1; l < graph.layers.size(); ++l) kl = kl + kl_divergence(graph.layers[l]);
  return scale * ell - kl;
}

Matrix GaussianMixture::mean() const {
  Matrix m = Matrix::Zero(means.front().rows(), means.front().cols());
  for (const Matrix& c : means) m += c;
  return m / static_cast<double>(means.size());
}

Matrix GaussianMixture::variance() const {
  const Matrix mu = mean();
  Matrix second = Matrix::Zero(mu.rows(), mu.cols());
  for (std::size_t k = 0; k < means.size(); ++k) {
    second += variances[k] + means[k].cwiseAbs2();
  }
  second /= static_cast<double>(means.size());
  return (second - mu.cwiseAbs2()).cwiseMax(0.0);
}

GaussianMixture dgp_predict(const DgpNetwork& network, const Matrix& x, int samples, Rng& rng,
                            bool add_noise) {
  if (samples < 1) throw ContractError("dgp_predict: need at least one sample");
  if (x.cols() != network.input_dim()) {
    throw ShapeError("dgp_predict: inputs " + shape_string(x.rows(), x.cols()) +
                     " for a network over " + std::to_string(network.input_dim()) + " dimensions");
  }
  ad::Tape tape;
  DgpGraph g = bind(tape, network, false);
  PropagationVars pv = propagate(g, tape.constant(tile_rows(x, samples)), rng, false);
  const Matrix& mu = pv.final_marginals.mean.value();
  Matrix var = pv.final_marginals.variance.value();
  if (add_noise) var.rowwise() += network.layers.back().log_noise.array().exp().matrix();
  GaussianMixture mix;
  const Eigen::Index n = x.rows();
  for (int k = 0; k < samples; ++k) {
    mix.means.push_back(mu.middleRows(k * n, n));
    mix.variances.push_back(var.middleRows(k * n, n));
  }
  return mix;
}

DgpModel fit_dgp(const Matrix& x_hat, const BoolMatrix& missing, const DgpConfig& config) {
  const Eigen::Index n_total = x_hat.rows();
  const Eigen::Index d = x_hat.cols();
  if (n_total == 0 || d == 0) throw ContractError("fit_dgp: empty dataset");
  if (missing.rows() != n_total || missing.cols() != d) {
    throw ShapeError("fit_dgp: mask " + shape_string(missing.rows(), missing.cols()) +
                     " does not match data " + shape_string(n_total, d));
  }
  Rng rng(config.seed);
  DgpModel model;
  model.network = create_dgp(x_hat, d, config, rng);
  const BoolMatrix observed = missing.unaryExpr([](bool b) { return !b; });

  Vector params;
  model.network.pack(params);
  DgpNetwork work = model.network;
  auto objective = [&](const Vector& p, Vector& grad, long) {
    work.unpack(p);
    std::vector<Eigen::Index> rows = sample_batch(n_total, config.batch, rng);
    Matrix xb = gather_rows(x_hat, rows);
    BoolMatrix ob = gather_rows(observed, rows);
    ad::Tape tape;
    DgpGraph g = bind(tape, work, true);
    ad::Var elbo = dgp_elbo(g, xb, xb, ob, n_total, config.samples, rng, config.sample_final_layer);
    tape.backward(elbo);
    g.gather_gradients(tape, grad);
    return elbo.scalar();
  };
  model.curve = maximize(params, objective, config);
  model.network.unpack(params);
  return model;
}

Matrix dgp_impute(const DgpNetwork& network, const Matrix& x_hat, const BoolMatrix& missing,
                  int samples, Rng& rng) {
  if (missing.rows() != x_hat.rows() || missing.cols() != x_hat.cols()) {
    throw ShapeError("dgp_impute: mask " + shape_string(missing.rows(), missing.cols()) +
                     " does not match data " + shape_string(x_hat.rows(), x_hat.cols()));
  }
  Matrix out = x_hat;
  const Eigen::Index chunk = std::max<Eigen::Index>(1, 4096 / std::max(samples, 1));
  for (Eigen::Index start = 0; start < x_hat.rows(); start += chunk) {
    const Eigen::Index len = std::min(chunk, x_hat.rows() - start);
    Matrix mu = dgp_predict(network, x_hat.middleRows(start, len), samples, rng).mean();
    for (Eigen::Index i = 0; i < len; ++i) {
      for (Eigen::Index j = 0; j < x_hat.cols(); ++j) {
        if (missing(start + i, j)) out(start + i, j) = mu(i, j);
      }
    }
  }
  return out;
}

}  // namespace gpimpute
