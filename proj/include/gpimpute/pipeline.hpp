#ifndef GPIMPUTE_PIPELINE_HPP
#define GPIMPUTE_PIPELINE_HPP

// Experiment plumbing shared by the command-line tools: method dispatch,
// benchmark cells, fingerprints and resumable grids.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gpimpute/checkpoint.hpp"
#include "gpimpute/data.hpp"
#include "gpimpute/eval.hpp"

namespace gpimpute {

enum class Method { Mean, Median, Knn, Mice, Svgp, Dgp, Mgp };

std::string method_name(Method m);
Method parse_method(const std::string& name);  // ContractError on unknown names
bool is_gp_method(Method m);

struct ExperimentConfig {
  std::string dataset;  // CSV path
  std::string schema;   // optional JSON schema path
  std::vector<Method> methods{Method::Mean};
  std::vector<double> rates{0.1};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  double train_fraction = 0.7;
  Eigen::Index inducing = 100;
  Eigen::Index batch = 100;
  double learning_rate = 0.01;
  long iterations = 0;  // 0 selects the data-size profile
  int samples = 20;
  int knn_k = 2;
  int mice_rounds = 10;
  int dgp_layers = 5;
  std::string output;
  int jobs = 1;

  // 2000 iterations below 2000 rows, otherwise 10000, unless set explicitly.
  long resolved_iterations(Eigen::Index rows) const;
};

inline constexpr Eigen::Index kSmallDataRows = 2000;

Json config_to_json(const ExperimentConfig& c, Eigen::Index rows);

struct UncertainCell {
  Eigen::Index row = 0;
  int column = 0;
  double mean = 0.0;
  double variance = 0.0;
};

struct MethodOutput {
  Matrix completed;                        // test rows, missing cells filled
  std::vector<UncertainCell> uncertainty;  // GP methods only
  std::optional<Checkpoint> checkpoint;
};

struct MethodInput {
  Matrix train;  // standardized; missing cells may hold NaN
  BoolMatrix train_missing;
  Matrix test;
  BoolMatrix test_missing;
  Matrix raw_train;  // pre-standardization values, for the MGP ordering
};

// Fits `method` on the training rows and fills the test rows.
MethodOutput fit_and_impute(Method method, const MethodInput& in, const ExperimentConfig& config,
                            Eigen::Index profile_rows, std::uint64_t seed);

struct CellSpec {
  Method method = Method::Mean;
  double rate = 0.1;
  std::uint64_t seed = 1;
};

// Content hash of everything that determines a cell's record.
std::string cell_fingerprint(const std::string& dataset_fingerprint, const ExperimentConfig& config,
                             const CellSpec& cell, Eigen::Index rows);

struct CellOutcome {
  Record record;
  std::optional<Checkpoint> checkpoint;
  MissingMask train_mask;
  MissingMask test_mask;
};

// split -> MCAR on both sides -> z-score from observed training cells ->
// fit -> impute test -> RMSE on the injected test cells (standardized scale).
CellOutcome run_cell(const Dataset& raw, const ExperimentConfig& config, const CellSpec& cell);

struct BenchmarkSummary {
  ResultsTable table;
  int executed = 0;
  int skipped = 0;  // already present in the run directory
  std::vector<std::string> failures;
};

// Runs the grid into `run_dir`, skipping cells whose fingerprint already has a
// record there. Cells run on up to config.jobs threads.
BenchmarkSummary run_benchmark(const Dataset& raw, const ExperimentConfig& config,
                               const std::filesystem::path& run_dir);

// Directory name like 20260101-120000 under `root`, made unique.
std::filesystem::path make_run_directory(const std::filesystem::path& root, const std::string& prefix);

}  // namespace gpimpute

#endif  // GPIMPUTE_PIPELINE_HPP
