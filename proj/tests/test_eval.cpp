#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "gpimpute/errors.hpp"
#include "gpimpute/eval.hpp"
#include "oracles.hpp"

using namespace gpimpute;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

Record rec(const std::string& method, const std::string& data, double rate, int split, double rmse) {
  return Record{method, data, rate, split, rmse, 0.5};
}

}  // namespace

TEST_CASE("rmse worked examples") {
  Matrix t(2, 2);
  t << 1, 2, 3, 4;
  const BoolMatrix all = BoolMatrix::Constant(2, 2, true);
  CHECK(rmse(t, t, all) == 0.0);
  Matrix one(2, 1), off(2, 1);
  one << 0, 0;
  off << 1, -1;
  CHECK(rmse(one, off, BoolMatrix::Constant(2, 1, true)) == doctest::Approx(1.0));
  // Per-column MSEs 1 and 4.
  Matrix z = Matrix::Zero(2, 2), e(2, 2);
  e << 1, 2, -1, -2;
  CHECK(rmse(z, e, all) == doctest::Approx(std::sqrt(2.5)));
  // Columns without masked cells drop out of the average.
  BoolMatrix first = BoolMatrix::Constant(2, 2, false);
  first.col(0).setConstant(true);
  CHECK(rmse(z, e, first) == doctest::Approx(1.0));
  CHECK_THROWS_AS(rmse(z, e, BoolMatrix::Constant(2, 2, false)), ContractError);
  CHECK_THROWS_AS(rmse(z, Matrix::Zero(3, 2), all), ShapeError);
}

TEST_CASE("rmse ignores unmasked cells and row order") {
  std::mt19937_64 rng(71);
  const Matrix t = oracle::random_matrix(30, 4, rng);
  Matrix im = oracle::random_matrix(30, 4, rng);
  const BoolMatrix m = oracle::random_mask(30, 4, 0.3, rng);
  const double base = rmse(t, im, m);
  Matrix noisy = im;
  for (Eigen::Index i = 0; i < 30; ++i)
    for (Eigen::Index j = 0; j < 4; ++j)
      if (!m(i, j)) noisy(i, j) = 1e6;
  CHECK(rmse(t, noisy, m) == base);
  Eigen::PermutationMatrix<Eigen::Dynamic> p(30);
  p.setIdentity();
  std::shuffle(p.indices().data(), p.indices().data() + 30, rng);
  const BoolMatrix pm = (p * m.cast<double>()).cast<bool>();
  CHECK(rmse(p * t, p * im, pm) == doctest::Approx(base).epsilon(1e-14));
}

TEST_CASE("fractional ranks") {
  CHECK(fractional_ranks({0.3, 0.1, 0.2}) == std::vector<double>{3, 1, 2});
  CHECK(fractional_ranks({0.5, 0.5}) == std::vector<double>{1.5, 1.5});
  CHECK(fractional_ranks({2, 1, 2, 0}) == std::vector<double>{3.5, 2, 3.5, 1});
}

TEST_CASE("average ranks") {
  ResultsTable t;
  for (int s = 1; s <= 3; ++s) {
    t.add(rec("a", "d", 0.1, s, 0.1));
    t.add(rec("b", "d", 0.1, s, 0.2));
  }
  RankSummary r = average_ranks(t);
  CHECK(r.methods == std::vector<std::string>{"a", "b"});
  CHECK(r.mean_ranks == std::vector<double>{1.0, 2.0});
  CHECK(r.cells == 3);
  t.add(rec("b", "d", 0.1, 3, 0.1));  // replaces, now tied
  r = average_ranks(t);
  CHECK(r.mean_ranks[0] == doctest::Approx((1 + 1 + 1.5) / 3.0));
  CHECK(t.records.size() == 6);

  std::mt19937_64 rng(72);
  std::uniform_real_distribution<double> u(0, 1);
  ResultsTable big;
  const std::vector<std::string> names{"m1", "m2", "m3", "m4", "m5"};
  for (const char* d : {"x", "y"})
    for (double rate : {0.1, 0.2})
      for (int s = 1; s <= 5; ++s)
        for (const auto& m : names) big.add(rec(m, d, rate, s, u(rng)));
  const RankSummary all = average_ranks(big);
  double sum = 0;
  for (double v : all.mean_ranks) sum += v;
  CHECK(sum == doctest::Approx(5 * 6 / 2.0));
  CHECK(all.cells == 20);
  CHECK(average_ranks(big, 0.2).cells == 10);

  big.records.pop_back();
  try {
    average_ranks(big);
    FAIL("expected an aggregation error");
  } catch (const AggregationError& e) {
    CHECK(std::string(e.what()).find("m5") != std::string::npos);
  }
}

TEST_CASE("nemenyi critical distance") {
  CHECK(nemenyi_cd(8, 25, 0.05) == doctest::Approx(2.100).epsilon(0.001 / 2.1));
  CHECK(std::abs(nemenyi_cd(8, 25) - 2.100) <= 0.001);
  CHECK(nemenyi_cd(8, 100) == doctest::Approx(nemenyi_cd(8, 25) / 2.0));
  CHECK(nemenyi_q(2, 0.05) == doctest::Approx(1.960));
  CHECK(nemenyi_q(2, 0.10) == doctest::Approx(1.645));
  CHECK(nemenyi_cd(2, 1000000) < 0.01);
  CHECK_THROWS_AS(nemenyi_cd(8, 25, 0.01), ContractError);
  CHECK_THROWS_AS(nemenyi_cd(1, 25), ContractError);
  CHECK_THROWS_AS(nemenyi_cd(21, 25), ContractError);
  CHECK_THROWS_AS(nemenyi_cd(3, 0), ContractError);
}

TEST_CASE("summaries use the split standard error") {
  ResultsTable t;
  t.add(rec("a", "d", 0.1, 1, 1.0));
  t.add(rec("a", "d", 0.1, 2, 3.0));
  t.add(rec("b", "d", 0.1, 1, 2.0));
  const auto s = summarize(t);
  REQUIRE(s.size() == 2);
  CHECK(s[0].mean == 2.0);
  CHECK(s[0].std_error == doctest::Approx(std::sqrt(2.0) / std::sqrt(2.0)));
  CHECK(s[1].count == 1);
  CHECK(s[1].std_error == 0.0);
}

TEST_CASE("records round-trip and report bad lines") {
  const Record r{"mgp", "park", 0.1, 3, 0.123456789012345678, 12.5};
  const Record b = record_from_json(record_to_json(r));
  CHECK(b.method == r.method);
  CHECK(b.rmse == r.rmse);
  CHECK(b.split == 3);
  const std::string text = record_to_json(r) + "\n\n" + "{not json}\n";
  try {
    parse_records(text, "x.jsonl");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("3") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_records(R"({"method":"a"})"), ParseError);
}

TEST_CASE("reports") {
  const fs::path dir = fs::temp_directory_path() / "gpimpute-test-eval";
  fs::remove_all(dir);
  emit_report(ResultsTable{}, dir / "empty");
  CHECK(slurp(dir / "empty" / "summary.csv") == "method,dataset,rate,count,mean,std_error\n");
  CHECK(slurp(dir / "empty" / "records.jsonl").empty());
  CHECK(fs::exists(dir / "empty" / "report.txt"));

  ResultsTable one;
  one.add(rec("mean", "toy", 0.1, 1, 0.75));
  const std::string text = emit_report(one, dir / "one");
  CHECK(text.find("0.75") != std::string::npos);
  const std::string csv = slurp(dir / "one" / "summary.csv");
  CHECK(csv.find("mean,toy,0.1,1,0.75,0") != std::string::npos);
  CHECK(read_records(dir / "one" / "records.jsonl").records.size() == 1);

  ResultsTable two;
  for (int s = 1; s <= 2; ++s) {
    two.add(rec("mean", "toy", 0.1, s, 1.0 + s));
    two.add(rec("mgp", "toy", 0.1, s, 0.5));
  }
  const std::string t2 = render_text(two);
  CHECK(t2.find("0.50(0.00)*") != std::string::npos);
  CHECK(t2.find("CD") != std::string::npos);
}
