#include <doctest.h>

#include "gpimpute/checkpoint.hpp"
#include "gpimpute/dgp.hpp"
#include "oracles.hpp"

using namespace gpimpute;
namespace ad = gpimpute::ad;

namespace {

// Small random network; q moved away from the prior so gradients are not trivial.
DgpNetwork random_network(const Matrix& x, Eigen::Index outputs, int layers, std::mt19937_64& rng) {
  DgpConfig cfg;
  cfg.layers = layers;
  cfg.inducing = 5;
  cfg.hidden_width = 2;
  Rng r(rng());
  DgpNetwork net = create_dgp(x, outputs, cfg, r);
  for (auto& l : net.layers) {
    l.q_mean = oracle::random_matrix(l.q_mean.rows(), l.q_mean.cols(), rng, 0.5);
    for (auto& s : l.q_scale) {
      s = oracle::random_matrix(s.rows(), s.cols(), rng, 0.1).triangularView<Eigen::Lower>();
      s.diagonal() = s.diagonal().cwiseAbs().array() + 0.2;
    }
    l.kernel.log_amplitude = 0.1;
  }
  return net;
}

double elbo_at(DgpNetwork net, const Vector& p, const Matrix& x, const BoolMatrix& obs, int samples,
               std::uint64_t noise_seed, Vector* grad, bool sample_final = false) {
  net.unpack(p);
  ad::Tape t;
  DgpGraph g = bind(t, net, true);
  Rng r(noise_seed);  // same noise for every evaluation
  ad::Var e = dgp_elbo(g, x, x, obs, x.rows() * 2, samples, r, sample_final);
  if (grad) {
    t.backward(e);
    grad->resize(p.size());
    g.gather_gradients(t, *grad);
  }
  return e.scalar();
}

}  // namespace

TEST_CASE("identity mean weights") {
  const Matrix w = identity_mean_weights(3, 2);
  CHECK(w.rows() == 3);
  CHECK(w.cols() == 2);
  CHECK(w(0, 0) == 1.0);
  CHECK(w(1, 1) == 1.0);
  CHECK(w(2, 0) == 0.0);
  CHECK(identity_mean_weights(2, 2).isIdentity());
}

TEST_CASE("dgp_elbo gradient matches finite differences under fixed noise") {
  std::mt19937_64 rng(31);
  const Matrix x = oracle::random_matrix(20, 3, rng);
  const BoolMatrix missing = oracle::random_mask(20, 3, 0.2, rng);
  const BoolMatrix obs = missing.unaryExpr([](bool b) { return !b; });
  for (bool sample_final : {false, true}) {
    DgpNetwork net = random_network(x, 3, 3, rng);
    Vector p;
    net.pack(p);
    Vector analytic;
    elbo_at(net, p, x, obs, 2, 99, &analytic, sample_final);
    const Vector numeric = oracle::finite_difference(
        [&](const Vector& q) { return elbo_at(net, q, x, obs, 2, 99, nullptr, sample_final); }, p);
    CHECK(oracle::relative_error(analytic, numeric) < 1e-5);
  }
}

TEST_CASE("a one-layer DGP is an SVGP") {
  std::mt19937_64 rng(32);
  const Matrix x = oracle::random_matrix(25, 3, rng);
  const BoolMatrix obs = BoolMatrix::Constant(25, 3, true);
  DgpNetwork net = random_network(x, 3, 1, rng);
  Vector p;
  net.pack(p);
  const double deep = elbo_at(net, p, x, obs, 4, 5, nullptr);
  ad::Tape t;
  const double flat = svgp_elbo(bind(t, net.layers.front(), false), t.constant(x), x, obs, 50).scalar();
  CHECK(std::abs(deep - flat) < 2.0);
  CHECK(deep == doctest::Approx(flat).epsilon(1e-10));
}

TEST_CASE("first-layer draws average to the layer mean") {
  std::mt19937_64 rng(33);
  const Matrix x = oracle::random_matrix(6, 2, rng);
  DgpNetwork net = random_network(x, 2, 2, rng);
  const MarginalGaussians mg = predictive_marginals(net.layers.front(), x);
  Rng r(7);
  const int k = 4000;
  Matrix sum = Matrix::Zero(mg.mean.rows(), mg.mean.cols());
  for (int i = 0; i < k; ++i) sum += propagate_sample(net, x, r).draws.front();
  const Matrix avg = sum / k;
  // Four standard errors.
  const Matrix tol = 4.0 * (mg.variance.array() / k).sqrt();
  CHECK(((avg - mg.mean).array().abs() <= tol.array()).all());
}

TEST_CASE("mixture moments") {
  GaussianMixture m;
  m.means = {Matrix::Constant(1, 1, 0.0), Matrix::Constant(1, 1, 2.0)};
  m.variances = {Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 1.0)};
  CHECK(m.mean()(0, 0) == doctest::Approx(1.0));
  CHECK(m.variance()(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("prediction with noise is wider and observed cells pass through") {
  std::mt19937_64 rng(34);
  const Matrix x = oracle::random_matrix(8, 3, rng);
  DgpNetwork net = random_network(x, 3, 2, rng);
  Rng a(3), b(3);
  const GaussianMixture plain = dgp_predict(net, x, 5, a, false);
  const GaussianMixture noisy = dgp_predict(net, x, 5, b, true);
  CHECK((noisy.variance().array() > plain.variance().array()).all());
  CHECK(noisy.mean().isApprox(plain.mean(), 1e-12));
  BoolMatrix missing = BoolMatrix::Constant(8, 3, false);
  missing(2, 1) = true;
  Rng c(4);
  const Matrix out = dgp_impute(net, x, missing, 5, c);
  missing(2, 1) = false;
  for (Eigen::Index i = 0; i < 8; ++i)
    for (Eigen::Index j = 0; j < 3; ++j)
      if (!(i == 2 && j == 1)) CHECK(out(i, j) == x(i, j));
}

TEST_CASE("dgp checkpoints round-trip bit for bit") {
  std::mt19937_64 rng(35);
  const Matrix x = oracle::random_matrix(10, 3, rng);
  DgpNetwork net = random_network(x, 3, 3, rng);
  const DgpNetwork back = dgp_from_json(Json::parse(to_json(net).dump()));
  Vector a, b;
  net.pack(a);
  back.pack(b);
  CHECK((a.array() == b.array()).all());
  REQUIRE(back.layers.size() == 3);
  CHECK((back.layers[0].mean_weights.array() == net.layers[0].mean_weights.array()).all());
  CHECK(back.samples_test == net.samples_test);
}

TEST_CASE("short training run raises the ELBO") {
  std::mt19937_64 rng(36);
  const Eigen::Index n = 80;
  Matrix x(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = -2.0 + 4.0 * static_cast<double>(i) / static_cast<double>(n);
    x(i, 0) = t;
    x(i, 1) = t * t - 1.0;
  }
  DgpConfig cfg;
  cfg.layers = 2;
  cfg.inducing = 10;
  cfg.iterations = 300;
  cfg.samples = 3;
  cfg.batch = 40;
  cfg.learning_rate = 0.02;
  cfg.log_every = 50;
  const DgpModel m = fit_dgp(x, BoolMatrix::Constant(n, 2, false), cfg);
  REQUIRE(m.curve.size() >= 2);
  CHECK(m.curve.back().elbo > m.curve.front().elbo);
}

TEST_CASE("trained one-layer DGP and SVGP end within 2 nats") {
  std::mt19937_64 rng(37);
  const Matrix x = oracle::random_matrix(60, 3, rng);
  const BoolMatrix missing = oracle::random_mask(60, 3, 0.1, rng);
  DgpConfig cfg;
  cfg.layers = 1;
  cfg.inducing = 10;
  cfg.iterations = 300;
  cfg.batch = 30;
  cfg.samples = 2;
  cfg.log_every = 100;
  const DgpModel deep = fit_dgp(x, missing, cfg);
  const SvgpModel flat = fit_svgp(x, missing, cfg);
  REQUIRE(!deep.curve.empty());
  CHECK(std::abs(deep.curve.back().elbo - flat.curve.back().elbo) < 2.0);
}

TEST_CASE("averaged stochastic gradients agree in sign with a many-sample reference") {
  std::mt19937_64 rng(38);
  const Matrix x = oracle::random_matrix(5, 2, rng);
  const BoolMatrix obs = BoolMatrix::Constant(5, 2, true);
  DgpConfig cfg;
  cfg.layers = 2;
  cfg.inducing = 3;
  Rng r(rng());
  DgpNetwork net = create_dgp(x, 2, cfg, r);
  for (auto& l : net.layers) {
    l.q_mean = oracle::random_matrix(l.q_mean.rows(), l.q_mean.cols(), rng, 0.5);
    l.kernel.log_amplitude = 0.3;
  }
  Vector p;
  net.pack(p);
  Vector reference;
  elbo_at(net, p, x, obs, 10000, 1, &reference, true);
  Vector avg = Vector::Zero(p.size());
  Vector g;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    elbo_at(net, p, x, obs, 1, 1000 + seed, &g, true);
    avg += g / 1000.0;
  }
  const Eigen::Index agree = (avg.array() * reference.array() > 0.0).count() +
                             (avg.array() == 0.0 && reference.array() == 0.0).count();
  MESSAGE("sign agreement " << agree << " of " << p.size());
  CHECK(static_cast<double>(agree) >= 0.95 * static_cast<double>(p.size()));
}

TEST_CASE("mixture variance dominates the average component variance") {
  std::mt19937_64 rng(39);
  GaussianMixture m;
  for (int k = 0; k < 6; ++k) {
    m.means.push_back(oracle::random_matrix(4, 3, rng));
    m.variances.push_back(oracle::random_matrix(4, 3, rng).array().square() + 0.1);
  }
  Matrix avg = Matrix::Zero(4, 3);
  for (const auto& v : m.variances) avg += v / 6.0;
  CHECK((m.variance().array() >= avg.array() - 1e-12).all());
  GaussianMixture same;
  same.means.assign(3, Matrix::Constant(2, 2, 0.4));
  same.variances = {Matrix::Constant(2, 2, 1.0), Matrix::Constant(2, 2, 2.0), Matrix::Constant(2, 2, 3.0)};
  CHECK(same.variance().isApprox(Matrix::Constant(2, 2, 2.0)));
}
