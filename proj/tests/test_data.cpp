#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "gpimpute/data.hpp"
#include "gpimpute/errors.hpp"
#include "oracles.hpp"

using namespace gpimpute;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "gpimpute-test-data";
  fs::create_directories(dir);
  return dir / name;
}

Dataset numeric(const Matrix& v) {
  Dataset d;
  d.name = "toy";
  d.values = v;
  d.missing = BoolMatrix::Constant(v.rows(), v.cols(), false);
  for (Eigen::Index c = 0; c < v.cols(); ++c) d.columns.push_back({"c" + std::to_string(c)});
  return d;
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

const char* kToySchema = R"({"name": "toy", "columns": [
  {"name": "a", "kind": "continuous"},
  {"name": "colour", "kind": "categorical"}]})";

}  // namespace

TEST_CASE("categorical columns expand to one-hot indicators") {
  const Schema s = parse_schema(kToySchema);
  const Dataset d = parse_csv("a,colour\n1,red\n2,blue\n3,red\n", &s);
  CHECK(d.rows() == 3);
  CHECK(d.cols() == 3);  // one more than the two source columns
  CHECK(d.columns[1].name == "colour=blue");
  CHECK(d.columns[2].name == "colour=red");
  CHECK(d.columns[1].kind == ColumnKind::OneHotMember);
  CHECK(d.columns[1].group == d.columns[2].group);
  CHECK((d.values.rightCols(2).rowwise().sum().array() == 1.0).all());
  CHECK(d.units().size() == 2);
}

TEST_CASE("missing tokens and bad cells") {
  const Dataset d = parse_csv("x,y\n1,\nNA,2\n3,4\n", nullptr);
  CHECK(d.missing(0, 1));
  CHECK(d.missing(1, 0));
  CHECK(!d.missing(2, 1));
  CHECK(std::isnan(d.values(0, 1)));
  CHECK_THROWS_AS(parse_csv("x,y\n1,oops\n", nullptr), ParseError);
  try {
    parse_csv("x,y\n1,2\n1,oops\n", nullptr);
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("3") != std::string::npos);
    CHECK(msg.find("y") != std::string::npos);
  }
  const Schema s = parse_schema(kToySchema);
  CHECK_THROWS_AS(parse_csv("a,colour,extra\n1,red,3\n", &s), SchemaError);
  CHECK_THROWS_AS(parse_csv("a,shade\n1,red\n", &s), SchemaError);
  CHECK_THROWS_AS(parse_schema("{\"columns\": [{\"name\": \"a\", \"kind\": \"weird\"}]}"), SchemaError);
}

TEST_CASE("ignored columns are dropped and a missing category blanks the group") {
  const Schema s = parse_schema(R"({"columns": [
    {"name": "id", "kind": "ignore"}, {"name": "k", "kind": "categorical"}, {"name": "v", "kind": "continuous"}]})");
  const Dataset d = parse_csv("id,k,v\n7,p,1\n8,,2\n9,q,3\n", &s);
  CHECK(d.cols() == 3);
  CHECK(d.missing(1, 0));
  CHECK(d.missing(1, 1));
  CHECK(!d.missing(1, 2));
}

TEST_CASE("csv files round-trip") {
  std::mt19937_64 rng(61);
  const Matrix v = oracle::random_matrix(5, 3, rng, 1e3);
  const fs::path p = scratch("round.csv");
  write_csv(p, {"a", "b", "c"}, v);
  const Dataset d = load_csv(p);
  CHECK(d.name == "round");
  for (Eigen::Index i = 0; i < 5; ++i)
    for (Eigen::Index j = 0; j < 3; ++j) CHECK(same_bits(d.values(i, j), v(i, j)));
  bool ok = false;
  CHECK(parse_double("+1.5", ok) == 1.5);
  CHECK(ok);
  parse_double("1.5x", ok);
  CHECK(!ok);
}

TEST_CASE("split sizes and determinism") {
  const Dataset d = numeric(Matrix(Vector::LinSpaced(10, 0, 9)));
  const DataSplit a = split(d, 0.7, 1);
  CHECK(a.train.rows() == 7);
  CHECK(a.test.rows() == 3);
  const DataSplit b = split(d, 0.7, 1);
  CHECK(a.train_rows == b.train_rows);
  CHECK(split(d, 0.7, 2).train_rows != a.train_rows);
  std::vector<Eigen::Index> all = a.train_rows;
  all.insert(all.end(), a.test_rows.begin(), a.test_rows.end());
  std::sort(all.begin(), all.end());
  for (Eigen::Index i = 0; i < 10; ++i) CHECK(all[static_cast<std::size_t>(i)] == i);
  CHECK_THROWS_AS(split(d, 1.0, 1), ContractError);
  CHECK_THROWS_AS(split(d, 0.0, 1), ContractError);
}

TEST_CASE("mcar counts and determinism") {
  std::mt19937_64 rng(62);
  const Dataset d = numeric(oracle::random_matrix(20, 5, rng));
  const MissingMask m = inject_mcar(d, 0.1, 3);
  CHECK(m.count() == 10);
  CHECK(m.mask.count() == 10);
  CHECK(inject_mcar(d, 0.0, 3).count() == 0);
  const MissingMask again = inject_mcar(d, 0.1, 3);
  CHECK((again.mask.array() == m.mask.array()).all());
  CHECK(!(inject_mcar(d, 0.1, 4).mask.array() == m.mask.array()).all());
  CHECK_THROWS_AS(inject_mcar(d, 1.0, 3), ContractError);
  // Already-missing cells are not eligible.
  Dataset holed = d;
  holed.missing.topRows(10).setConstant(true);
  const MissingMask h = inject_mcar(holed, 0.2, 3);
  CHECK(h.count() == 10);
  CHECK(!h.mask.topRows(10).any());
}

TEST_CASE("mcar keeps one observed cell per column") {
  const Dataset d = numeric(Matrix::Ones(4, 2));
  const MissingMask m = inject_mcar(d, 0.75, 1);
  CHECK(m.count() == 6);
  for (Eigen::Index c = 0; c < 2; ++c) CHECK(!m.mask.col(c).all());
  CHECK_THROWS_AS(inject_mcar(numeric(Matrix::Ones(1, 2)), 0.9, 1), InjectionError);
}

TEST_CASE("one-hot groups are masked together") {
  const Schema s = parse_schema(kToySchema);
  std::string text = "a,colour\n";
  for (int i = 0; i < 40; ++i) text += std::to_string(i) + (i % 3 ? ",red\n" : ",blue\n");
  const Dataset d = parse_csv(text, &s);
  const MissingMask m = inject_mcar(d, 0.25, 9);
  CHECK(m.count() > 0);
  for (Eigen::Index i = 0; i < d.rows(); ++i) CHECK(m.mask(i, 1) == m.mask(i, 2));
  // Units, not cells: 80 units at 25% is 20 units.
  Eigen::Index units = 0;
  for (Eigen::Index i = 0; i < d.rows(); ++i) units += m.mask(i, 0) + m.mask(i, 1);
  CHECK(units == 20);
}

TEST_CASE("masks restore bit-exactly and survive a file round trip") {
  std::mt19937_64 rng(63);
  const Dataset d = numeric(oracle::random_matrix(30, 4, rng, 7.0));
  const MissingMask m = inject_mcar(d, 0.3, 5);
  const Dataset blank = apply_mask(d, m);
  for (const MaskedCell& c : m.cells) {
    CHECK(std::isnan(blank.values(c.row, c.column)));
    CHECK(blank.missing(c.row, c.column));
  }
  Matrix back = blank.values;
  restore(back, m);
  for (Eigen::Index i = 0; i < 30; ++i)
    for (Eigen::Index j = 0; j < 4; ++j) CHECK(same_bits(back(i, j), d.values(i, j)));

  const fs::path p = scratch("mask.csv");
  write_mask(p, m);
  const MissingMask r = read_mask(p);
  CHECK(r.rate == m.rate);
  CHECK(r.seed == m.seed);
  CHECK(r.fingerprint == m.fingerprint);
  CHECK((r.mask.array() == m.mask.array()).all());
  REQUIRE(r.cells.size() == m.cells.size());
  for (std::size_t i = 0; i < r.cells.size(); ++i) CHECK(same_bits(r.cells[i].truth, m.cells[i].truth));

  std::ofstream(scratch("bad-mask.csv")) << "# {\"rate\":0.1,\"seed\":1,\"fingerprint\":\"x\",\"rows\":2,\"cols\":2}\n0,0,1\nzz\n";
  try {
    read_mask(scratch("bad-mask.csv"));
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("3") != std::string::npos);
  }
}

TEST_CASE("z-scores") {
  Matrix v(2, 1);
  v << 0, 2;
  const Standardization s = fit_standardization(v, BoolMatrix::Constant(2, 1, false));
  const Matrix z = standardize(v, s);
  CHECK(z(0, 0) == -1.0);
  CHECK(z(1, 0) == 1.0);
  const Matrix flat = Matrix::Constant(3, 1, 5.0);
  CHECK(standardize(flat, fit_standardization(flat, BoolMatrix::Constant(3, 1, false))).isZero());

  std::mt19937_64 rng(64);
  const Matrix x = oracle::random_matrix(50, 4, rng, 30.0).array() + 10.0;
  const BoolMatrix m = oracle::random_mask(50, 4, 0.2, rng);
  const Standardization t = fit_standardization(x, m);
  CHECK((unstandardize(standardize(x, t), t) - x).cwiseAbs().maxCoeff() <= 1e-12 * x.cwiseAbs().maxCoeff());
  const Matrix zx = standardize(x, t);
  for (Eigen::Index c = 0; c < 4; ++c) {
    double s1 = 0, s2 = 0;
    int n = 0;
    for (Eigen::Index i = 0; i < 50; ++i)
      if (!m(i, c)) s1 += zx(i, c), s2 += zx(i, c) * zx(i, c), ++n;
    CHECK(std::abs(s1 / n) < 1e-8);
    CHECK(std::abs(s2 / n - 1.0) < 1e-8);
  }
}

TEST_CASE("standardization ignores test rows and masked cells") {
  std::mt19937_64 rng(65);
  Dataset train = numeric(oracle::random_matrix(20, 2, rng));
  Dataset test = numeric(oracle::random_matrix(5, 2, rng));
  const StandardizedPair a = standardize(train, test);
  test.values.setConstant(1e9);
  train.missing(3, 1) = true;
  const double keep = train.values(3, 1);
  train.values(3, 1) = 1e9;
  const StandardizedPair b = standardize(train, test);
  CHECK(a.params.mean(0) == b.params.mean(0));
  train.values(3, 1) = keep;
  train.missing(3, 1) = false;
  const StandardizedPair c = standardize(train, numeric(Matrix::Constant(5, 2, -1e9)));
  CHECK(c.params.mean(1) == a.params.mean(1));
  CHECK(c.params.std(1) == a.params.std(1));
  CHECK(b.params.mean(1) != a.params.mean(1));
}

TEST_CASE("fingerprints follow content") {
  std::mt19937_64 rng(66);
  Dataset d = numeric(oracle::random_matrix(4, 2, rng));
  const std::string f = d.fingerprint();
  CHECK(f == numeric(d.values).fingerprint());
  d.values(0, 0) += 1.0;
  CHECK(d.fingerprint() != f);
}
