#include <doctest.h>

#include "gpimpute/checkpoint.hpp"
#include "gpimpute/data.hpp"
#include "gpimpute/eval.hpp"
#include "gpimpute/mgp.hpp"
#include "oracles.hpp"

using namespace gpimpute;
namespace ad = gpimpute::ad;

namespace {

MgpNetwork random_network(const Matrix& x_hat, const AttributeOrdering& ord, std::mt19937_64& rng,
                          int target = -1) {
  MgpConfig cfg;
  cfg.inducing = 5;
  cfg.target_column = target;
  Rng r(rng());
  MgpNetwork net = create_mgp(x_hat, ord, Vector::Zero(x_hat.cols()), cfg, r);
  auto shake = [&](SparseGPLayer& l) {
    l.q_mean = oracle::random_matrix(l.q_mean.rows(), 1, rng, 0.5);
    l.q_scale[0] = oracle::random_matrix(l.q_scale[0].rows(), l.q_scale[0].cols(), rng, 0.1)
                       .triangularView<Eigen::Lower>();
    l.q_scale[0].diagonal() = l.q_scale[0].diagonal().cwiseAbs().array() + 0.2;
    l.log_noise(0) = -1.0;
  };
  for (auto& l : net.impute_layers) shake(l);
  if (net.target_layer) shake(*net.target_layer);
  return net;
}

double elbo_at(MgpNetwork net, const Vector& p, const Matrix& x, const BoolMatrix& missing, int samples,
               std::uint64_t noise_seed, Vector* grad) {
  net.unpack(p);
  ad::Tape t;
  MgpGraph g = bind(t, net, true);
  Rng r(noise_seed);
  ad::Var e = mgp_elbo(g, net, x, missing, x.rows() * 3, samples, r);
  if (grad) {
    t.backward(e);
    grad->resize(p.size());
    g.gather_gradients(t, *grad);
  }
  return e.scalar();
}

Matrix columns_of(const Matrix& x, const std::vector<int>& cols) {
  Matrix out(x.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = x.col(cols[j]);
  return out;
}

}  // namespace

TEST_CASE("attributes are ordered by standard deviation") {
  Vector stds(4);
  stds << 3.0, 1.0, 2.0, 0.5;
  const AttributeOrdering a = order_missing_attributes(stds, {true, true, true, false});
  CHECK(a.permutation == std::vector<int>{1, 2, 0});
  const AttributeOrdering d = order_missing_attributes(stds, {true, true, true, false}, OrderDirection::Descending);
  CHECK(d.permutation == std::vector<int>{0, 2, 1});
  Vector tied = Vector::Constant(3, 1.0);
  CHECK(order_missing_attributes(tied, {true, true, true}).permutation == std::vector<int>{0, 1, 2});
  CHECK_THROWS_AS(order_missing_attributes(stds, {true}), ShapeError);
}

TEST_CASE("ordering from raw data ignores missing cells and row order") {
  std::mt19937_64 rng(41);
  Matrix raw = oracle::random_matrix(50, 4, rng);
  raw.col(0) *= 5.0;
  raw.col(2) *= 0.1;
  BoolMatrix missing = oracle::random_mask(50, 4, 0.2, rng);
  for (Eigen::Index i = 0; i < 50; ++i)
    if (missing(i, 1)) raw(i, 1) = 1e9;  // must not matter
  const AttributeOrdering a = order_missing_attributes(raw, missing);
  CHECK(a.permutation.front() == 2);
  CHECK(a.permutation.back() == 0);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(50);
  perm.setIdentity();
  std::shuffle(perm.indices().data(), perm.indices().data() + 50, rng);
  const Matrix shuffled = perm * raw;
  const BoolMatrix shuffled_missing = (perm * missing.cast<double>()).cast<bool>();
  CHECK(order_missing_attributes(shuffled, shuffled_missing).permutation == a.permutation);
}

TEST_CASE("initial imputation uses observed column means") {
  Matrix x(3, 2);
  x << 1, 5, 3, 0, 100, 7;
  BoolMatrix m(3, 2);
  m << false, false, false, true, true, false;
  const Matrix out = initial_impute(x, m);
  CHECK(out(2, 0) == 2.0);
  CHECK(out(1, 1) == 6.0);
  CHECK(out(0, 0) == 1.0);
  m(0, 1) = true;
  m(2, 1) = true;
  CHECK_THROWS_AS(initial_impute(x, m), ContractError);
}

TEST_CASE("mgp_elbo gradient matches finite differences under fixed noise") {
  std::mt19937_64 rng(42);
  const Matrix x = oracle::random_matrix(20, 3, rng);
  const BoolMatrix missing = oracle::random_mask(20, 3, 0.2, rng);
  const Matrix x_hat = initial_impute(x, missing);
  for (int target : {-1, 2}) {
    const AttributeOrdering ord = order_missing_attributes(
        Vector(Vector::LinSpaced(3, 1.0, 2.0)), {true, true, target < 0});
    MgpNetwork net = random_network(x_hat, ord, rng, target);
    Vector p;
    net.pack(p);
    Vector analytic;
    elbo_at(net, p, x_hat, missing, 2, 77, &analytic);
    const Vector numeric = oracle::finite_difference(
        [&](const Vector& q) { return elbo_at(net, q, x_hat, missing, 2, 77, nullptr); }, p);
    CHECK(oracle::relative_error(analytic, numeric) < 1e-5);
  }
}

TEST_CASE("a fully observed chain is a sum of independent sparse GPs") {
  std::mt19937_64 rng(43);
  const Matrix x = oracle::random_matrix(15, 3, rng);
  const BoolMatrix none = BoolMatrix::Constant(15, 3, false);
  const AttributeOrdering ord = order_missing_attributes(Vector(Vector::LinSpaced(3, 1.0, 3.0)), {true, true, true});
  MgpNetwork net = random_network(x, ord, rng);
  Vector p;
  net.pack(p);
  const double chained = elbo_at(net, p, x, none, 3, 1, nullptr);
  double separate = 0.0;
  for (std::size_t l = 0; l < net.impute_layers.size(); ++l) {
    ad::Tape t;
    const int c = ord.permutation[l];
    separate += svgp_elbo(bind(t, net.impute_layers[l], false), t.constant(columns_of(x, net.input_columns(l))),
                          x.col(c), BoolMatrix::Constant(15, 1, true), 45)
                    .scalar();
  }
  CHECK(chained == doctest::Approx(separate).epsilon(1e-10));
}

TEST_CASE("chain only overwrites missing cells of the imputed attribute") {
  std::mt19937_64 rng(44);
  const Matrix x = oracle::random_matrix(12, 3, rng);
  const BoolMatrix missing = oracle::random_mask(12, 3, 0.3, rng);
  const Matrix x_hat = initial_impute(x, missing);
  const AttributeOrdering ord = order_missing_attributes(x, missing);
  MgpNetwork net = random_network(x_hat, ord, rng);
  Rng r(5);
  const ChainSamples cs = chain_forward(net, x_hat, missing, r, 2);
  REQUIRE(cs.x_tilde.size() == ord.permutation.size() + 1);
  for (std::size_t l = 1; l < cs.x_tilde.size(); ++l) {
    const int col = ord.permutation[l - 1];
    for (Eigen::Index i = 0; i < 24; ++i)
      for (Eigen::Index j = 0; j < 3; ++j) {
        const bool touched = j == col && missing(i % 12, j);
        if (!touched) CHECK(cs.x_tilde[l](i, j) == cs.x_tilde[l - 1](i, j));
      }
  }
}

TEST_CASE("impute keeps observed cells bit for bit and refuses unmodelled columns") {
  std::mt19937_64 rng(45);
  const Matrix x = oracle::random_matrix(10, 3, rng);
  BoolMatrix missing = oracle::random_mask(10, 3, 0.3, rng);
  missing.col(2).setConstant(false);
  const AttributeOrdering ord = order_missing_attributes(x, missing);
  MgpNetwork net = random_network(initial_impute(x, missing), ord, rng);
  Rng r(6);
  const ImputationResult res = impute(net, x, missing, 4, r);
  for (Eigen::Index i = 0; i < 10; ++i)
    for (Eigen::Index j = 0; j < 3; ++j)
      if (!missing(i, j)) CHECK(res.completed(i, j) == x(i, j));
  CHECK(static_cast<Eigen::Index>(res.cells.size()) == missing.count());
  for (const auto& c : res.cells) {
    CHECK(c.component_means.size() == 4);
    CHECK(c.variance > 0.0);
    CHECK(c.mean == doctest::Approx(c.component_means.mean()));
  }
  missing(4, 2) = true;
  CHECK_THROWS_AS(impute(net, x, missing, 4, r), ContractError);
}

TEST_CASE("mgp checkpoints round-trip bit for bit") {
  std::mt19937_64 rng(46);
  const Matrix x = oracle::random_matrix(10, 4, rng);
  const BoolMatrix missing = oracle::random_mask(10, 4, 0.3, rng);
  const AttributeOrdering ord = order_missing_attributes(Vector(Vector::LinSpaced(4, 1.0, 4.0)),
                                                         {true, true, true, false});
  MgpNetwork net = random_network(initial_impute(x, missing), ord, rng, 3);
  net.initial_values = oracle::random_matrix(4, 1, rng);
  const MgpNetwork back = mgp_from_json(Json::parse(to_json(net).dump()));
  Vector a, b;
  net.pack(a);
  back.pack(b);
  CHECK((a.array() == b.array()).all());
  CHECK(back.ordering.permutation == net.ordering.permutation);
  CHECK((back.ordering.stds.array() == net.ordering.stds.array()).all());
  CHECK((back.initial_values.array() == net.initial_values.array()).all());
  CHECK(back.target_column == 3);
  CHECK(back.target_layer.has_value());
  Rng r1(9), r2(9);
  CHECK((impute(net, x, missing, 3, r1).completed.array() == impute(back, x, missing, 3, r2).completed.array()).all());
}

TEST_CASE("recovers a linear relation") {
  std::mt19937_64 rng(47);
  const Eigen::Index n = 200;
  Matrix x(n, 2);
  x.col(0) = oracle::random_matrix(n, 1, rng);
  x.col(1) = 2.0 * x.col(0);
  const Standardization s = fit_standardization(x, BoolMatrix::Constant(n, 2, false));
  const Matrix z = standardize(x, s);
  BoolMatrix missing = BoolMatrix::Constant(n, 2, false);
  std::vector<Eigen::Index> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  std::shuffle(rows.begin(), rows.end(), rng);
  for (Eigen::Index i = 0; i < n / 5; ++i) missing(rows[static_cast<std::size_t>(i)], 1) = true;

  // A one-dimensional input with many inducing points makes Kzz numerically
  // singular, so keep M small here.
  MgpConfig cfg;
  cfg.inducing = 5;
  cfg.batch = 100;
  cfg.samples = 5;
  cfg.iterations = 2000;
  cfg.learning_rate = 0.05;
  cfg.log_every = 500;
  // The relation itself is exactly recoverable: least squares on observed rows.
  {
    std::vector<Eigen::Index> seen;
    for (Eigen::Index i = 0; i < n; ++i)
      if (!missing(i, 1)) seen.push_back(i);
    Matrix a(static_cast<Eigen::Index>(seen.size()), 2);
    a.col(0).setOnes();
    a.col(1) = z(seen, 0);
    const Vector beta = a.colPivHouseholderQr().solve(Vector(z(seen, 1)));
    Matrix ls = z;
    for (Eigen::Index i = 0; i < n; ++i)
      if (missing(i, 1)) ls(i, 1) = beta(0) + beta(1) * z(i, 0);
    CHECK(rmse(z, ls, missing) < 1e-10);
  }
  const MgpModel m = train_mgp(z, missing, order_missing_attributes(x, missing), cfg);
  Rng r(3);
  const ImputationResult res = impute(m.network, z, missing, 20, r);
  const double err = rmse(z, res.completed, missing);
  MESSAGE("linear toy rmse " << err);
  CHECK(err <= 0.05);
}

TEST_CASE("later layers do not disturb earlier chain states, and the ELBO is seed-deterministic") {
  std::mt19937_64 rng(48);
  const Matrix x = oracle::random_matrix(12, 4, rng);
  const BoolMatrix missing = oracle::random_mask(12, 4, 0.3, rng);
  const Matrix x_hat = initial_impute(x, missing);
  const AttributeOrdering ord = order_missing_attributes(x, missing);
  REQUIRE(ord.permutation.size() >= 3);
  MgpNetwork net = random_network(x_hat, ord, rng);
  Rng a(8);
  const ChainSamples before = chain_forward(net, x_hat, missing, a, 3);
  const std::size_t j = 2;
  net.impute_layers[j].q_mean.array() += 5.0;
  net.impute_layers[j].kernel.log_amplitude -= 0.7;
  Rng b(8);
  const ChainSamples after = chain_forward(net, x_hat, missing, b, 3);
  for (std::size_t l = 0; l <= j; ++l) CHECK((after.x_tilde[l].array() == before.x_tilde[l].array()).all());
  CHECK(!(after.x_tilde[j + 1].array() == before.x_tilde[j + 1].array()).all());

  Vector p;
  net.pack(p);
  CHECK(elbo_at(net, p, x_hat, missing, 4, 21, nullptr) == elbo_at(net, p, x_hat, missing, 4, 21, nullptr));
}
