#include "gpimpute/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "gpimpute/data.hpp"

namespace gpimpute {

double rmse(const Matrix& truth, const Matrix& imputed, const BoolMatrix& mask) {
  if (truth.rows() != imputed.rows() || truth.cols() != imputed.cols() || truth.rows() != mask.rows() ||
      truth.cols() != mask.cols()) {
    throw ShapeError("rmse: truth " + shape_string(truth.rows(), truth.cols()) + ", imputed " +
                     shape_string(imputed.rows(), imputed.cols()) + ", mask " + shape_string(mask.rows(), mask.cols()));
  }
  double total = 0.0;
  int dims = 0;
  for (Eigen::Index c = 0; c < mask.cols(); ++c) {
    double ss = 0.0;
    Eigen::Index n = 0;
    for (Eigen::Index i = 0; i < mask.rows(); ++i) {
      if (!mask(i, c)) continue;
      const double e = imputed(i, c) - truth(i, c);
      ss += e * e;
      ++n;
    }
    if (n == 0) continue;
    total += ss / static_cast<double>(n);
    ++dims;
  }
  if (dims == 0) throw ContractError("rmse: mask has no missing cells");
  return std::sqrt(total / dims);
}

// ---- table ----------------------------------------------------------------------------

namespace {

bool same_cell(const Record& a, const Record& b) {
  return a.method == b.method && a.dataset == b.dataset && a.rate == b.rate && a.split == b.split;
}

template <typename T, typename F>
std::vector<T> distinct(const std::vector<Record>& rs, F key) {
  std::vector<T> out;
  for (const auto& r : rs) {
    T k = key(r);
    if (std::find(out.begin(), out.end(), k) == out.end()) out.push_back(k);
  }
  return out;
}

std::string rate_label(double r) {
  std::ostringstream s;
  s << std::round(r * 1000.0) / 10.0 << "%";
  return s.str();
}

}  // namespace

void ResultsTable::add(const Record& r) {
  for (auto& x : records) {
    if (same_cell(x, r)) {
      x = r;
      return;
    }
  }
  records.push_back(r);
}

std::vector<std::string> ResultsTable::methods() const {
  return distinct<std::string>(records, [](const Record& r) { return r.method; });
}

std::vector<std::string> ResultsTable::datasets() const {
  return distinct<std::string>(records, [](const Record& r) { return r.dataset; });
}

std::vector<double> ResultsTable::rates() const {
  auto v = distinct<double>(records, [](const Record& r) { return r.rate; });
  std::sort(v.begin(), v.end());
  return v;
}

std::vector<CellSummary> summarize(const ResultsTable& table) {
  std::map<std::tuple<std::string, std::string, double>, std::vector<double>> groups;
  std::vector<std::tuple<std::string, std::string, double>> order;
  for (const auto& r : table.records) {
    auto key = std::make_tuple(r.method, r.dataset, r.rate);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(r.rmse);
  }
  std::vector<CellSummary> out;
  for (const auto& key : order) {
    const auto& v = groups[key];
    CellSummary s;
    std::tie(s.method, s.dataset, s.rate) = key;
    s.count = static_cast<int>(v.size());
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / s.count;
    if (s.count > 1) {
      double ss = 0.0;
      for (double x : v) ss += (x - s.mean) * (x - s.mean);
      s.std_error = std::sqrt(ss / (s.count - 1)) / std::sqrt(static_cast<double>(s.count));
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---- ranks ----------------------------------------------------------------------------------

std::vector<double> fractional_ranks(const std::vector<double>& values) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && values[idx[j + 1]] == values[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

RankSummary average_ranks(const ResultsTable& table, std::optional<double> rate) {
  RankSummary out;
  out.methods = table.methods();
  const std::size_t k = out.methods.size();
  out.mean_ranks.assign(k, 0.0);
  if (k == 0) return out;

  std::map<std::tuple<std::string, int, double>, std::vector<std::optional<double>>> cells;
  for (const auto& r : table.records) {
    if (rate && r.rate != *rate) continue;
    auto& slot = cells[std::make_tuple(r.dataset, r.split, r.rate)];
    slot.resize(k);
    const auto m = static_cast<std::size_t>(
        std::find(out.methods.begin(), out.methods.end(), r.method) - out.methods.begin());
    slot[m] = r.rmse;
  }
  std::ostringstream holes;
  int hole_count = 0;
  for (const auto& [key, slot] : cells) {
    for (std::size_t m = 0; m < k; ++m) {
      if (slot[m]) continue;
      if (hole_count++ < 20) {
        holes << "\n  " << out.methods[m] << " @ " << std::get<0>(key) << ", split " << std::get<1>(key) << ", rate "
              << std::get<2>(key);
      }
    }
  }
  if (hole_count > 0) {
    throw AggregationError("average_ranks: " + std::to_string(hole_count) + " missing records" + holes.str());
  }
  for (const auto& [key, slot] : cells) {
    std::vector<double> v(k);
    for (std::size_t m = 0; m < k; ++m) v[m] = *slot[m];
    const auto r = fractional_ranks(v);
    for (std::size_t m = 0; m < k; ++m) out.mean_ranks[m] += r[m];
  }
  out.cells = static_cast<int>(cells.size());
  if (out.cells > 0) {
    for (auto& x : out.mean_ranks) x /= out.cells;
  }
  return out;
}

// Critical values q_alpha for k = 2..20. The first rows follow Demsar (2006);
// the rest are studentized range quantiles at infinite df divided by sqrt(2).
namespace {
constexpr double kQ05[] = {1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164, 3.219,
                           3.268, 3.313, 3.354, 3.391, 3.426, 3.458, 3.489, 3.517, 3.544};
constexpr double kQ10[] = {1.645, 2.052, 2.291, 2.460, 2.589, 2.693, 2.780, 2.855, 2.920, 2.978,
                           3.030, 3.077, 3.120, 3.159, 3.196, 3.230, 3.261, 3.291, 3.319};
}  // namespace

double nemenyi_q(int k, double alpha) {
  if (k < 2 || k > 20) throw ContractError("nemenyi: k=" + std::to_string(k) + " outside 2..20");
  const auto i = static_cast<std::size_t>(k - 2);
  if (std::abs(alpha - 0.05) < 1e-12) return kQ05[i];
  if (std::abs(alpha - 0.10) < 1e-12) return kQ10[i];
  throw ContractError("nemenyi: alpha must be 0.05 or 0.10");
}

double nemenyi_cd(int k, int n, double alpha) {
  if (n < 1) throw ContractError("nemenyi: need at least one dataset");
  return nemenyi_q(k, alpha) * std::sqrt(k * (k + 1.0) / (6.0 * n));
}

// ---- record io --------------------------------------------------------------------------------

std::string record_to_json(const Record& r) {
  nlohmann::json j = {{"method", r.method}, {"dataset", r.dataset}, {"rate", r.rate},
                      {"split", r.split},   {"rmse", r.rmse},       {"seconds", r.seconds}};
  return j.dump();
}

Record record_from_json(const std::string& line) {
  auto j = nlohmann::json::parse(line);
  Record r;
  r.method = j.at("method").get<std::string>();
  r.dataset = j.at("dataset").get<std::string>();
  r.rate = j.at("rate").get<double>();
  r.split = j.at("split").get<int>();
  r.rmse = j.at("rmse").get<double>();
  r.seconds = j.value("seconds", 0.0);
  return r;
}

ResultsTable parse_records(const std::string& text, const std::string& source) {
  ResultsTable t;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      t.add(record_from_json(line));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return t;
}

ResultsTable read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_records(ss.str(), path.string());
}

void append_record(const std::filesystem::path& path, const Record& r) {
  std::ofstream out(path, std::ios::app);
  out << record_to_json(r) << '\n';
  if (!out) throw std::runtime_error("cannot append to " + path.string());
}

// ---- reports ---------------------------------------------------------------------------------

namespace {

std::string cell_text(const CellSummary& s, bool best) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(2) << s.mean << "(" << s.std_error << ")" << (best ? "*" : " ");
  return o.str();
}

void rank_block(std::ostringstream& o, const ResultsTable& table, std::optional<double> rate, double alpha) {
  const auto methods = table.methods();
  try {
    RankSummary rs = average_ranks(table, rate);
    o << "average ranks";
    if (rate) o << " at " << rate_label(*rate);
    o << " over " << rs.cells << " cells";
    const int k = static_cast<int>(rs.methods.size());
    if (k >= 2 && k <= 20 && rs.cells > 0) {
      o << ", Nemenyi CD(alpha=" << alpha << ") = " << std::fixed << std::setprecision(3)
        << nemenyi_cd(k, rs.cells, alpha);
    }
    o << "\n";
    std::vector<std::size_t> idx(rs.methods.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return rs.mean_ranks[a] < rs.mean_ranks[b]; });
    for (auto i : idx) {
      o << "  " << std::left << std::setw(10) << rs.methods[i] << std::right << std::fixed << std::setprecision(3)
        << rs.mean_ranks[i] << "\n";
    }
  } catch (const AggregationError& e) {
    o << "ranks unavailable: " << e.what() << "\n";
  }
  o.unsetf(std::ios::floatfield);
}

}  // namespace

std::string render_text(const ResultsTable& table, double alpha) {
  std::ostringstream o;
  const auto methods = table.methods();
  const auto datasets = table.datasets();
  const auto summary = summarize(table);
  auto find = [&](const std::string& m, const std::string& d, double r) -> const CellSummary* {
    for (const auto& s : summary) {
      if (s.method == m && s.dataset == d && s.rate == r) return &s;
    }
    return nullptr;
  };
  constexpr int kWidth = 16;
  if (table.records.empty()) {
    o << "method\n";
    return o.str();
  }
  for (double rate : table.rates()) {
    o << "RMSE at " << rate_label(rate) << " missing, mean(standard error), * = best\n";
    o << std::left << std::setw(10) << "method";
    for (const auto& d : datasets) o << std::setw(kWidth) << d;
    o << "\n";
    for (const auto& m : methods) {
      o << std::setw(10) << m;
      for (const auto& d : datasets) {
        const CellSummary* s = find(m, d, rate);
        if (!s) {
          o << std::setw(kWidth) << "-";
          continue;
        }
        bool best = true;
        for (const auto& other : methods) {
          const CellSummary* t = find(other, d, rate);
          if (t && t->mean < s->mean) best = false;
        }
        o << std::setw(kWidth) << cell_text(*s, best);
      }
      o << "\n";
    }
    rank_block(o, table, rate, alpha);
    o << "\n";
  }
  if (table.rates().size() > 1) rank_block(o, table, std::nullopt, alpha);
  return o.str();
}

std::string emit_report(const ResultsTable& table, const std::filesystem::path& dir, double alpha) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  const std::string text = render_text(table, alpha);

  auto open = [](const std::filesystem::path& p) {
    std::ofstream f(p);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    return f;
  };
  {
    auto f = open(dir / "report.txt");
    f << text;
  }
  {
    auto f = open(dir / "summary.csv");
    f << "method,dataset,rate,count,mean,std_error\n";
    for (const auto& s : summarize(table)) {
      f << s.method << ',' << s.dataset << ',' << format_double(s.rate) << ',' << s.count << ','
        << format_double(s.mean) << ',' << format_double(s.std_error) << '\n';
    }
  }
  {
    auto f = open(dir / "records.jsonl");
    for (const auto& r : table.records) f << record_to_json(r) << '\n';
  }
  return text;
}

}  // namespace gpimpute
