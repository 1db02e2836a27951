#ifndef GPIMPUTE_EVAL_HPP
#define GPIMPUTE_EVAL_HPP

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gpimpute/tensorgrad.hpp"

namespace gpimpute {

// sqrt of the mean, over columns holding at least one masked cell, of that
// column's mean squared error. Throws ContractError on an empty mask.
double rmse(const Matrix& truth, const Matrix& imputed, const BoolMatrix& mask);

struct Record {
  std::string method;
  std::string dataset;
  double rate = 0.0;
  int split = 0;
  double rmse = 0.0;
  double seconds = 0.0;
};

struct ResultsTable {
  std::vector<Record> records;

  // Replaces an existing record with the same (method, dataset, rate, split).
  void add(const Record& r);
  std::vector<std::string> methods() const;   // first-seen order
  std::vector<std::string> datasets() const;
  std::vector<double> rates() const;          // ascending
};

struct CellSummary {
  std::string method;
  std::string dataset;
  double rate = 0.0;
  int count = 0;
  double mean = 0.0;
  double std_error = 0.0;  // n-1 std over splits / sqrt(n); 0 when n = 1
};

std::vector<CellSummary> summarize(const ResultsTable& table);

// 1-based ranks with ties sharing their average rank; lower value ranks first.
std::vector<double> fractional_ranks(const std::vector<double>& values);

struct RankSummary {
  std::vector<std::string> methods;
  std::vector<double> mean_ranks;
  int cells = 0;
};

// Ranks inside every (dataset, split, rate) cell, or (dataset, split) when a
// rate is given. AggregationError lists cells missing a method.
RankSummary average_ranks(const ResultsTable& table, std::optional<double> rate = std::nullopt);

// Studentized range statistic over sqrt(2), alpha in {0.05, 0.10}, 2 <= k <= 20.
double nemenyi_q(int k, double alpha);
double nemenyi_cd(int k, int n, double alpha = 0.05);

std::string record_to_json(const Record& r);
Record record_from_json(const std::string& line);
// One JSON object per line; blank lines ignored. ParseError names the line.
ResultsTable parse_records(const std::string& text, const std::string& source = "<records>");
ResultsTable read_records(const std::filesystem::path& path);
void append_record(const std::filesystem::path& path, const Record& r);

// Human-readable tables (one per rate) and the rank summary.
std::string render_text(const ResultsTable& table, double alpha = 0.05);

// Writes report.txt, summary.csv and records.jsonl into `dir`. Returns the text.
std::string emit_report(const ResultsTable& table, const std::filesystem::path& dir, double alpha = 0.05);

}  // namespace gpimpute

#endif  // GPIMPUTE_EVAL_HPP
