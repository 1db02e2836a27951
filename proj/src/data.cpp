#include "gpimpute/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "gpimpute/hash.hpp"
#include "gpimpute/log.hpp"

namespace gpimpute {

namespace {

using json = nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct KnownShape {
  const char* name;
  Eigen::Index rows;
  Eigen::Index cols;
};

// Published sizes, used only to warn when a file looks truncated.
constexpr KnownShape kKnownShapes[] = {
    {"protein", 45730, 10}, {"keggd", 53414, 23},     {"keggud", 65554, 28},
    {"parkinson", 1040, 24}, {"totalbrainvolume", 867, 31},
};

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

bool is_missing_token(const std::string& s) { return s.empty() || s == "NA" || s == "na" || s == "NaN" || s == "nan"; }

// RFC4180-ish: double quotes, "" escapes, no embedded newlines.
std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

void check_expected(const Schema& schema, Eigen::Index rows, Eigen::Index raw_cols) {
  std::optional<Eigen::Index> er = schema.expected_rows, ec = schema.expected_columns;
  for (const auto& k : kKnownShapes) {
    if (lower(schema.name) == k.name) {
      if (!er) er = k.rows;
      if (!ec) ec = k.cols;
    }
  }
  if (!er && !ec) return;
  std::ostringstream msg;
  msg << "dataset '" << schema.name << "': " << rows << " rows, " << raw_cols << " attributes";
  if (er) msg << " (expected " << *er << " rows";
  if (ec) msg << (er ? ", " : " (expected ") << *ec << " attributes";
  msg << ")";
  if ((er && *er != rows) || (ec && *ec != raw_cols)) {
    log_warning(msg.str());
  } else {
    log_info(msg.str());
  }
}

}  // namespace

// ---- formatting ----------------------------------------------------------------

std::string format_double(double v) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s, bool& ok) {
  double v = 0.0;
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  ok = res.ec == std::errc() && res.ptr == s.data() + s.size() && !s.empty();
  return v;
}

// ---- dataset -----------------------------------------------------------------------

std::vector<std::vector<int>> Dataset::units() const {
  std::vector<std::vector<int>> out;
  std::map<int, std::size_t> group_slot;
  for (std::size_t j = 0; j < columns.size(); ++j) {
    const int g = columns[j].group;
    if (columns[j].kind == ColumnKind::OneHotMember && g >= 0) {
      auto it = group_slot.find(g);
      if (it == group_slot.end()) {
        group_slot[g] = out.size();
        out.push_back({static_cast<int>(j)});
      } else {
        out[it->second].push_back(static_cast<int>(j));
      }
    } else {
      out.push_back({static_cast<int>(j)});
    }
  }
  return out;
}

std::string Dataset::fingerprint() const {
  Fnv1a h;
  h.matrix(values.unaryExpr([](double v) { return std::isnan(v) ? 0.0 : v; }));
  h.matrix(missing.cast<double>());
  for (const auto& c : columns) h.text(c.name).pod(c.group);
  return h.hex();
}

// ---- schema / csv -----------------------------------------------------------------------

Schema parse_schema(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("schema is not valid JSON: ") + e.what());
  }
  Schema s;
  s.name = j.value("name", std::string());
  if (j.contains("expected_rows")) s.expected_rows = j.at("expected_rows").get<Eigen::Index>();
  if (j.contains("expected_columns")) s.expected_columns = j.at("expected_columns").get<Eigen::Index>();
  if (!j.contains("columns") || !j.at("columns").is_array()) throw SchemaError("schema needs a 'columns' array");
  for (const auto& c : j.at("columns")) {
    SchemaColumn col;
    col.name = c.at("name").get<std::string>();
    const std::string kind = c.value("kind", std::string("continuous"));
    if (kind == "continuous") {
      col.kind = SchemaKind::Continuous;
    } else if (kind == "categorical") {
      col.kind = SchemaKind::Categorical;
    } else if (kind == "ignore") {
      col.kind = SchemaKind::Ignore;
    } else {
      throw SchemaError("column '" + col.name + "': unknown kind '" + kind + "'");
    }
    s.columns.push_back(std::move(col));
  }
  return s;
}

Schema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open schema " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_schema(ss.str());
}

Dataset parse_csv(const std::string& text, const Schema* schema_in, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!trim(line).empty()) {
      header = split_line(line);
      break;
    }
  }
  if (header.empty()) throw ParseError(source + ": missing header row");

  Schema schema;
  if (schema_in) {
    schema = *schema_in;
    if (schema.columns.size() != header.size()) {
      throw SchemaError(source + ": header has " + std::to_string(header.size()) + " columns, schema declares " +
                        std::to_string(schema.columns.size()));
    }
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (schema.columns[j].name != header[j]) {
        throw SchemaError(source + ": column " + std::to_string(j + 1) + " is '" + header[j] +
                          "' but the schema names '" + schema.columns[j].name + "'");
      }
    }
  } else {
    for (const auto& h : header) schema.columns.push_back({h, SchemaKind::Continuous});
  }

  std::vector<std::vector<std::string>> cells;
  std::vector<std::size_t> line_numbers;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto row = split_line(line);
    if (row.size() != header.size()) {
      throw ParseError(source + ":" + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                       " fields, found " + std::to_string(row.size()));
    }
    cells.push_back(std::move(row));
    line_numbers.push_back(lineno);
  }
  const auto n = static_cast<Eigen::Index>(cells.size());

  // Output layout.
  struct Target {
    std::size_t source_col;
    SchemaKind kind;
    std::vector<std::string> levels;  // categorical only, sorted
  };
  std::vector<Target> targets;
  Eigen::Index raw_cols = 0;
  for (std::size_t j = 0; j < schema.columns.size(); ++j) {
    const auto kind = schema.columns[j].kind;
    if (kind == SchemaKind::Ignore) continue;
    ++raw_cols;
    Target t{j, kind, {}};
    if (kind == SchemaKind::Categorical) {
      std::set<std::string> lv;
      for (const auto& r : cells) {
        if (!is_missing_token(r[j])) lv.insert(r[j]);
      }
      t.levels.assign(lv.begin(), lv.end());
      if (t.levels.empty()) log_warning(source + ": categorical column '" + header[j] + "' has no observed level");
    }
    targets.push_back(std::move(t));
  }

  Dataset d;
  d.name = schema.name;
  Eigen::Index width = 0;
  int group = 0;
  for (const auto& t : targets) {
    if (t.kind == SchemaKind::Continuous) {
      d.columns.push_back({header[t.source_col], ColumnKind::Continuous, -1});
      ++width;
    } else {
      for (const auto& lv : t.levels) d.columns.push_back({header[t.source_col] + "=" + lv, ColumnKind::OneHotMember, group});
      width += static_cast<Eigen::Index>(t.levels.size());
      ++group;
    }
  }
  d.values = Matrix::Zero(n, width);
  d.missing = BoolMatrix::Constant(n, width, false);

  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = cells[static_cast<std::size_t>(i)];
    Eigen::Index c = 0;
    for (const auto& t : targets) {
      const std::string& s = row[t.source_col];
      if (t.kind == SchemaKind::Continuous) {
        if (is_missing_token(s)) {
          d.values(i, c) = kNaN;
          d.missing(i, c) = true;
        } else {
          bool ok = false;
          const double v = parse_double(s, ok);
          if (!ok || !std::isfinite(v)) {
            throw ParseError(source + ":" + std::to_string(line_numbers[static_cast<std::size_t>(i)]) +
                             ": column '" + header[t.source_col] + "' (" + std::to_string(t.source_col + 1) +
                             "): '" + s + "' is not a number");
          }
          d.values(i, c) = v;
        }
        ++c;
      } else {
        const auto k = static_cast<Eigen::Index>(t.levels.size());
        if (is_missing_token(s)) {
          d.values.row(i).segment(c, k).setConstant(kNaN);
          d.missing.row(i).segment(c, k).setConstant(true);
        } else {
          const auto pos = std::lower_bound(t.levels.begin(), t.levels.end(), s) - t.levels.begin();
          d.values(i, c + pos) = 1.0;
        }
        c += k;
      }
    }
  }
  if (!schema.name.empty()) check_expected(schema, n, raw_cols);
  return d;
}

namespace {
std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}
}  // namespace

Dataset load_csv(const std::filesystem::path& path) {
  Dataset d = parse_csv(slurp(path), nullptr, path.string());
  d.name = path.stem().string();
  return d;
}

Dataset load_csv(const std::filesystem::path& path, const Schema& schema) {
  Dataset d = parse_csv(slurp(path), &schema, path.string());
  if (d.name.empty()) d.name = path.stem().string();
  return d;
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header, const Matrix& values,
               const BoolMatrix* blank) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << header[j];
  out << '\n';
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
      if (j) out << ',';
      if (!(blank && (*blank)(i, j))) out << format_double(values(i, j));
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

// ---- splits ------------------------------------------------------------------------

Dataset subset_rows(const Dataset& d, const std::vector<Eigen::Index>& rows) {
  Dataset out;
  out.name = d.name;
  out.columns = d.columns;
  out.standardization = d.standardization;
  out.values = d.values(rows, Eigen::all);
  out.missing = d.missing(rows, Eigen::all);
  return out;
}

DataSplit split(const Dataset& d, double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw ContractError("split: train fraction must lie in (0, 1)");
  const Eigen::Index n = d.rows();
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  Rng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::ceil(train_frac * static_cast<double>(n) - 1e-9));
  DataSplit s;
  s.train_rows.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test_rows.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  s.train = subset_rows(d, s.train_rows);
  s.test = subset_rows(d, s.test_rows);
  return s;
}

// ---- masks -----------------------------------------------------------------------------

MissingMask inject_mcar(const Dataset& d, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ContractError("inject_mcar: rate must lie in [0, 1)");
  static constexpr double kStandardRates[] = {0.1, 0.2, 0.3, 0.4};
  if (rate > 0.0 && std::none_of(std::begin(kStandardRates), std::end(kStandardRates),
                                 [&](double r) { return std::abs(r - rate) < 1e-12; })) {
    log_warning("inject_mcar: unusual rate " + format_double(rate));
  }
  MissingMask m;
  m.rate = rate;
  m.seed = seed;
  m.fingerprint = d.fingerprint();
  m.mask = BoolMatrix::Constant(d.rows(), d.cols(), false);

  const auto units = d.units();
  std::vector<std::pair<Eigen::Index, std::size_t>> eligible;  // (row, unit)
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    for (std::size_t u = 0; u < units.size(); ++u) {
      bool observed = true;
      for (int c : units[u]) observed = observed && !d.missing(i, c);
      if (observed) eligible.emplace_back(i, u);
    }
  }
  const auto target = static_cast<std::size_t>(std::llround(rate * static_cast<double>(eligible.size())));
  if (target == 0) return m;

  Rng rng(seed);
  std::shuffle(eligible.begin(), eligible.end(), rng);

  // Observed cells left per column.
  std::vector<Eigen::Index> left(static_cast<std::size_t>(d.cols()));
  for (Eigen::Index c = 0; c < d.cols(); ++c) left[static_cast<std::size_t>(c)] = d.rows() - d.missing.col(c).count();

  std::size_t taken = 0, skipped = 0;
  for (const auto& [row, u] : eligible) {
    if (taken == target) break;
    bool ok = true;
    for (int c : units[u]) ok = ok && left[static_cast<std::size_t>(c)] > 1;
    if (!ok) {
      ++skipped;
      continue;
    }
    for (int c : units[u]) {
      m.mask(row, c) = true;
      --left[static_cast<std::size_t>(c)];
    }
    ++taken;
  }
  if (taken < target) {
    throw InjectionError("inject_mcar: rate " + format_double(rate) + " needs " + std::to_string(target) +
                         " units but only " + std::to_string(taken) +
                         " can be removed while keeping an observed cell in every column");
  }
  if (skipped > 0) {
    log_info("inject_mcar: redrew " + std::to_string(skipped) + " draws that would empty a column");
  }
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    for (Eigen::Index c = 0; c < d.cols(); ++c) {
      if (m.mask(i, c)) m.cells.push_back({i, static_cast<int>(c), d.values(i, c)});
    }
  }
  return m;
}

Dataset apply_mask(const Dataset& d, const MissingMask& mask) {
  if (mask.mask.rows() != d.rows() || mask.mask.cols() != d.cols()) {
    throw ShapeError("apply_mask: dataset " + shape_string(d.rows(), d.cols()) + " with mask " +
                     shape_string(mask.mask.rows(), mask.mask.cols()));
  }
  Dataset out = d;
  for (const auto& c : mask.cells) {
    out.values(c.row, c.column) = kNaN;
    out.missing(c.row, c.column) = true;
  }
  return out;
}

void restore(Matrix& values, const MissingMask& mask) {
  for (const auto& c : mask.cells) values(c.row, c.column) = c.truth;
}

void write_mask(const std::filesystem::path& path, const MissingMask& mask) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  json header = {{"rate", mask.rate},
                 {"seed", mask.seed},
                 {"fingerprint", mask.fingerprint},
                 {"rows", mask.mask.rows()},
                 {"cols", mask.mask.cols()}};
  out << "# " << header.dump() << '\n' << "row,col,truth\n";
  for (const auto& c : mask.cells) out << c.row << ',' << c.column << ',' << format_double(c.truth) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

MissingMask read_mask(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) throw ParseError(path.string() + ":1: missing header");
  MissingMask m;
  Eigen::Index rows = 0, cols = 0;
  try {
    json h = json::parse(line.substr(2));
    m.rate = h.at("rate").get<double>();
    m.seed = h.at("seed").get<std::uint64_t>();
    m.fingerprint = h.at("fingerprint").get<std::string>();
    rows = h.at("rows").get<Eigen::Index>();
    cols = h.at("cols").get<Eigen::Index>();
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ":1: " + e.what());
  }
  m.mask = BoolMatrix::Constant(rows, cols, false);
  std::getline(in, line);  // column names
  std::size_t lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = split_line(line);
    bool ok_r = false, ok_c = false, ok_t = false;
    MaskedCell c;
    if (f.size() == 3) {
      c.row = static_cast<Eigen::Index>(parse_double(f[0], ok_r));
      c.column = static_cast<int>(parse_double(f[1], ok_c));
      c.truth = parse_double(f[2], ok_t);
    }
    if (!(ok_r && ok_c && ok_t) || c.row < 0 || c.row >= rows || c.column < 0 || c.column >= cols) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad triplet '" + line + "'");
    }
    m.mask(c.row, c.column) = true;
    m.cells.push_back(c);
  }
  return m;
}

// ---- z-scores -------------------------------------------------------------------------------

Standardization fit_standardization(const Matrix& values, const BoolMatrix& missing) {
  Standardization s;
  s.mean = Vector::Zero(values.cols());
  s.std = Vector::Ones(values.cols());
  for (Eigen::Index c = 0; c < values.cols(); ++c) {
    double sum = 0.0;
    Eigen::Index n = 0;
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
      if (!missing(i, c)) {
        sum += values(i, c);
        ++n;
      }
    }
    if (n == 0) continue;
    const double mu = sum / static_cast<double>(n);
    double ss = 0.0;
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
      if (!missing(i, c)) ss += (values(i, c) - mu) * (values(i, c) - mu);
    }
    const double sd = std::sqrt(ss / static_cast<double>(n));
    s.mean(c) = mu;
    s.std(c) = sd > 0.0 ? sd : 1.0;
  }
  return s;
}

Matrix standardize(const Matrix& values, const Standardization& s) {
  return (values.rowwise() - s.mean.transpose()).array().rowwise() / s.std.transpose().array();
}

Matrix unstandardize(const Matrix& z, const Standardization& s) {
  return (z.array().rowwise() * s.std.transpose().array()).matrix().rowwise() + s.mean.transpose();
}

StandardizedPair standardize(const Dataset& train, const Dataset& test) {
  if (train.cols() != test.cols()) {
    throw ShapeError("standardize: train " + shape_string(train.rows(), train.cols()) + " and test " +
                     shape_string(test.rows(), test.cols()));
  }
  StandardizedPair p;
  p.params = fit_standardization(train.values, train.missing);
  p.train = train;
  p.test = test;
  p.train.values = standardize(train.values, p.params);
  p.test.values = standardize(test.values, p.params);
  p.train.standardization = p.params;
  p.test.standardization = p.params;
  return p;
}

}  // namespace gpimpute
