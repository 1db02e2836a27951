#ifndef GPIMPUTE_BASELINES_HPP
#define GPIMPUTE_BASELINES_HPP

#include <vector>

#include "gpimpute/tensorgrad.hpp"

namespace gpimpute {

enum class ImputerKind { Mean, Median, Knn, Mice };

// State fitted on the training split only.
struct FittedImputer {
  ImputerKind kind = ImputerKind::Mean;
  Vector column_values;  // means or medians
  Matrix training;       // knn reference rows
  BoolMatrix training_missing;
  int neighbours = 2;
  std::vector<Vector> coefficients;  // mice: intercept then one weight per other column
};

struct CompletedPair {
  Matrix train;
  Matrix test;
};

Vector observed_column_medians(const Matrix& data, const BoolMatrix& missing);

FittedImputer fit_mean(const Matrix& train, const BoolMatrix& train_missing);
FittedImputer fit_median(const Matrix& train, const BoolMatrix& train_missing);
Matrix transform_constant(const FittedImputer& imputer, const Matrix& data, const BoolMatrix& missing);

CompletedPair fit_transform_mean(const Matrix& train, const BoolMatrix& train_missing,
                                 const Matrix& test, const BoolMatrix& test_missing);
CompletedPair fit_transform_median(const Matrix& train, const BoolMatrix& train_missing,
                                   const Matrix& test, const BoolMatrix& test_missing);

// Distance between two rows over their jointly observed coordinates,
// sqrt(sum of squared differences / shared count). Infinite when nothing is
// shared.
double shared_coordinate_distance(const Eigen::Ref<const RowVector>& a, const std::vector<bool>& a_missing,
                                  const Eigen::Ref<const RowVector>& b, const std::vector<bool>& b_missing);

// Each missing query cell <- average of that attribute over the k nearest
// training rows observing it (ties at equal distance keep the lower row
// index). Falls back to the training column mean when no row observes it.
Matrix knn_impute(const Matrix& train, const BoolMatrix& train_missing, const Matrix& query,
                  const BoolMatrix& query_missing, int k);

struct MiceResult {
  CompletedPair completed;
  std::vector<Vector> coefficients;     // final regression per column (empty if never fitted)
  std::vector<double> residual_rmse;    // per round, over observed training cells of imputed columns
};

// Deterministic chained linear regressions: mean start, then `rounds` sweeps
// over the missing-bearing columns in index order.
MiceResult mice_impute(const Matrix& train, const BoolMatrix& train_missing, const Matrix& test,
                       const BoolMatrix& test_missing, int rounds = 10);

}  // namespace gpimpute

#endif  // GPIMPUTE_BASELINES_HPP
