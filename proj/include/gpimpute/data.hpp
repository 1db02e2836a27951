#ifndef GPIMPUTE_DATA_HPP
#define GPIMPUTE_DATA_HPP

/**
 *  Tabular data plumbing: CSV ingestion with a JSON column schema, one-hot
 *  expansion of categorical columns, row splits, MCAR masking and z-scores.
 *
 *  A schema file looks like
 *
 *    { "name": "parkinson",
 *      "columns": [ {"name": "age", "kind": "continuous"},
 *                   {"name": "sex", "kind": "categorical"},
 *                   {"name": "id",  "kind": "ignore"} ] }
 *
 *  Columns are matched to the CSV header by position; a name mismatch is a
 *  SchemaError. Cells that are empty or "NA" are missing.
 */

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gpimpute/svgp.hpp"
#include "gpimpute/tensorgrad.hpp"

namespace gpimpute {

enum class ColumnKind { Continuous, OneHotMember };

struct ColumnInfo {
  std::string name;  // "source" or "source=level" for indicators
  ColumnKind kind = ColumnKind::Continuous;
  int group = -1;    // one-hot group id, -1 for continuous columns
};

struct Standardization {
  Vector mean;
  Vector std;  // clamped to 1 where the observed column is constant
  bool empty() const { return mean.size() == 0; }
};

struct Dataset {
  std::string name;
  Matrix values;       // N x D; missing cells hold NaN
  BoolMatrix missing;  // pre-existing missingness
  std::vector<ColumnInfo> columns;
  Standardization standardization;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
  // Column groups that are masked together: one per continuous column and
  // one per one-hot group, in order of first column.
  std::vector<std::vector<int>> units() const;
  std::string fingerprint() const;
};

enum class SchemaKind { Continuous, Categorical, Ignore };

struct SchemaColumn {
  std::string name;
  SchemaKind kind = SchemaKind::Continuous;
};

struct Schema {
  std::string name;
  std::vector<SchemaColumn> columns;
  std::optional<Eigen::Index> expected_rows;
  std::optional<Eigen::Index> expected_columns;  // before encoding
};

Schema parse_schema(const std::string& json_text);
Schema load_schema(const std::filesystem::path& path);

// All columns continuous, names taken from the header.
Dataset load_csv(const std::filesystem::path& path);
Dataset load_csv(const std::filesystem::path& path, const Schema& schema);
// Same, reading from a string; `source` labels error messages.
Dataset parse_csv(const std::string& text, const Schema* schema, const std::string& source = "<csv>");

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header, const Matrix& values,
               const BoolMatrix* blank = nullptr);

// Shortest decimal form that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view s, bool& ok);

Dataset subset_rows(const Dataset& d, const std::vector<Eigen::Index>& rows);

struct DataSplit {
  Dataset train;
  Dataset test;
  std::vector<Eigen::Index> train_rows;  // indices into the source
  std::vector<Eigen::Index> test_rows;
};

// Seeded uniform row permutation; the first ceil(frac * N) rows train.
DataSplit split(const Dataset& d, double train_frac, std::uint64_t seed);

struct MaskedCell {
  Eigen::Index row = 0;
  int column = 0;
  double truth = 0.0;
};

struct MissingMask {
  BoolMatrix mask;                // injected cells only
  std::vector<MaskedCell> cells;  // row-major
  double rate = 0.0;
  std::uint64_t seed = 0;
  std::string fingerprint;        // of the matrix the mask was drawn on

  Eigen::Index count() const { return static_cast<Eigen::Index>(cells.size()); }
};

// Blanks round(rate * eligible units) currently-observed units, a unit being
// a continuous cell or a row's whole one-hot group. A draw that would leave
// some column without an observed cell is skipped and the next one is taken.
MissingMask inject_mcar(const Dataset& d, double rate, std::uint64_t seed);

// Copy of `d` with the mask's cells set to NaN and flagged missing.
Dataset apply_mask(const Dataset& d, const MissingMask& mask);
// Writes the recorded truth back into `values`.
void restore(Matrix& values, const MissingMask& mask);

void write_mask(const std::filesystem::path& path, const MissingMask& mask);
MissingMask read_mask(const std::filesystem::path& path);

// Population mean/std over observed cells.
Standardization fit_standardization(const Matrix& values, const BoolMatrix& missing);
Matrix standardize(const Matrix& values, const Standardization& s);
Matrix unstandardize(const Matrix& z, const Standardization& s);

struct StandardizedPair {
  Dataset train;
  Dataset test;
  Standardization params;
};

// Statistics from the observed training cells, applied to both sides.
StandardizedPair standardize(const Dataset& train, const Dataset& test);

}  // namespace gpimpute

#endif  // GPIMPUTE_DATA_HPP
