#include "gpimpute/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "gpimpute/log.hpp"
#include "gpimpute/mgp.hpp"

namespace gpimpute {

namespace {

void check_pair(const Matrix& data, const BoolMatrix& missing, const char* what) {
  if (data.rows() != missing.rows() || data.cols() != missing.cols()) {
    throw ShapeError(std::string(what) + ": data " + shape_string(data.rows(), data.cols()) +
                     " with mask " + shape_string(missing.rows(), missing.cols()));
  }
}

std::vector<bool> row_flags(const BoolMatrix& m, Eigen::Index row) {
  std::vector<bool> out(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(j)] = m(row, j);
  return out;
}

}  // namespace

Vector observed_column_medians(const Matrix& data, const BoolMatrix& missing) {
  check_pair(data, missing, "observed_column_medians");
  Vector med(data.cols());
  std::vector<double> values;
  for (Eigen::Index c = 0; c < data.cols(); ++c) {
    values.clear();
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
      if (!missing(i, c)) values.push_back(data(i, c));
    }
    if (values.empty()) throw ContractError("column " + std::to_string(c) + " has no observed values");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    med(c) = n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
  }
  return med;
}

FittedImputer fit_mean(const Matrix& train, const BoolMatrix& train_missing) {
  FittedImputer f;
  f.kind = ImputerKind::Mean;
  f.column_values = observed_column_means(train, train_missing);
  return f;
}

FittedImputer fit_median(const Matrix& train, const BoolMatrix& train_missing) {
  FittedImputer f;
  f.kind = ImputerKind::Median;
  f.column_values = observed_column_medians(train, train_missing);
  return f;
}

Matrix transform_constant(const FittedImputer& imputer, const Matrix& data, const BoolMatrix& missing) {
  return fill_missing(data, missing, imputer.column_values);
}

CompletedPair fit_transform_mean(const Matrix& train, const BoolMatrix& train_missing,
                                 const Matrix& test, const BoolMatrix& test_missing) {
  FittedImputer f = fit_mean(train, train_missing);
  return {transform_constant(f, train, train_missing), transform_constant(f, test, test_missing)};
}

CompletedPair fit_transform_median(const Matrix& train, const BoolMatrix& train_missing,
                                   const Matrix& test, const BoolMatrix& test_missing) {
  FittedImputer f = fit_median(train, train_missing);
  return {transform_constant(f, train, train_missing), transform_constant(f, test, test_missing)};
}

// ---- knn ---------------------------------------------------------------------

double shared_coordinate_distance(const Eigen::Ref<const RowVector>& a, const std::vector<bool>& a_missing,
                                  const Eigen::Ref<const RowVector>& b, const std::vector<bool>& b_missing) {
  double ss = 0.0;
  int shared = 0;
  for (Eigen::Index j = 0; j < a.size(); ++j) {
    const auto u = static_cast<std::size_t>(j);
    if (a_missing[u] || b_missing[u]) continue;
    const double d = a(j) - b(j);
    ss += d * d;
    ++shared;
  }
  if (shared == 0) return std::numeric_limits<double>::infinity();
  return std::sqrt(ss / shared);
}

Matrix knn_impute(const Matrix& train, const BoolMatrix& train_missing, const Matrix& query,
                  const BoolMatrix& query_missing, int k) {
  check_pair(train, train_missing, "knn_impute");
  check_pair(query, query_missing, "knn_impute");
  if (k < 1) throw ContractError("knn_impute: k must be at least 1");
  if (train.cols() != query.cols()) {
    throw ShapeError("knn_impute: training rows " + shape_string(train.rows(), train.cols()) +
                     " and queries " + shape_string(query.rows(), query.cols()));
  }
  std::vector<std::vector<bool>> train_flags;
  train_flags.reserve(static_cast<std::size_t>(train.rows()));
  for (Eigen::Index t = 0; t < train.rows(); ++t) train_flags.push_back(row_flags(train_missing, t));

  Matrix out = query;
  long fallbacks = 0;
  std::vector<double> dist(static_cast<std::size_t>(train.rows()));
  std::vector<std::pair<double, Eigen::Index>> candidates;
  for (Eigen::Index q = 0; q < query.rows(); ++q) {
    if (!query_missing.row(q).any()) continue;
    const std::vector<bool> qf = row_flags(query_missing, q);
    for (Eigen::Index t = 0; t < train.rows(); ++t) {
      dist[static_cast<std::size_t>(t)] =
          shared_coordinate_distance(query.row(q), qf, train.row(t), train_flags[static_cast<std::size_t>(t)]);
    }
    for (Eigen::Index c = 0; c < query.cols(); ++c) {
      if (!query_missing(q, c)) continue;
      candidates.clear();
      for (Eigen::Index t = 0; t < train.rows(); ++t) {
        const double d = dist[static_cast<std::size_t>(t)];
        if (!train_missing(t, c) && std::isfinite(d)) candidates.emplace_back(d, t);
      }
      if (candidates.empty()) {
        double total = 0.0;
        Eigen::Index count = 0;
        for (Eigen::Index t = 0; t < train.rows(); ++t)
          if (!train_missing(t, c)) total += train(t, c), ++count;
        if (count == 0) throw ContractError("column " + std::to_string(c) + " has no observed values");
        ++fallbacks;
        out(q, c) = total / static_cast<double>(count);
        continue;
      }
      const std::size_t take = std::min(candidates.size(), static_cast<std::size_t>(k));
      std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                        candidates.end());
      double total = 0.0;
      for (std::size_t i = 0; i < take; ++i) total += train(candidates[i].second, c);
      out(q, c) = total / static_cast<double>(take);
    }
  }
  if (fallbacks > 0) {
    log_warning("knn_impute: " + std::to_string(fallbacks) +
                " cell(s) had no neighbour sharing an observed coordinate; used the column mean");
  }
  return out;
}

// ---- mice ----------------------------------------------------------------------

namespace {

// Intercept followed by every column except `target`.
Matrix design_matrix(const Matrix& x, Eigen::Index target, const std::vector<Eigen::Index>& rows) {
  Matrix d(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto i = static_cast<Eigen::Index>(r);
    d(i, 0) = 1.0;
    Eigen::Index j = 1;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (c != target) d(i, j++) = x(rows[r], c);
    }
  }
  return d;
}

Vector least_squares(const Matrix& design, const Vector& y, Eigen::Index column) {
  Eigen::ColPivHouseholderQR<Matrix> qr(design);
  if (qr.rank() == design.cols()) return qr.solve(y);
  log_warning("mice_impute: rank-deficient design for column " + std::to_string(column) +
              "; using ridge penalty 1e-6");
  Matrix gram = design.transpose() * design;
  gram.diagonal().array() += 1e-6;
  return gram.ldlt().solve(design.transpose() * y);
}

double predict_row(const Vector& beta, const Matrix& x, Eigen::Index row, Eigen::Index target) {
  double v = beta(0);
  Eigen::Index j = 1;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    if (c != target) v += beta(j++) * x(row, c);
  }
  return v;
}

}  // namespace

MiceResult mice_impute(const Matrix& train, const BoolMatrix& train_missing, const Matrix& test,
                       const BoolMatrix& test_missing, int rounds) {
  check_pair(train, train_missing, "mice_impute");
  check_pair(test, test_missing, "mice_impute");
  if (rounds < 1) throw ContractError("mice_impute: rounds must be at least 1");
  if (train.cols() != test.cols()) {
    throw ShapeError("mice_impute: train " + shape_string(train.rows(), train.cols()) + " and test " +
                     shape_string(test.rows(), test.cols()));
  }
  const Vector means = observed_column_means(train, train_missing);
  MiceResult result;
  result.completed.train = fill_missing(train, train_missing, means);
  result.completed.test = fill_missing(test, test_missing, means);
  result.coefficients.assign(static_cast<std::size_t>(train.cols()), Vector());
  Matrix& xtr = result.completed.train;
  Matrix& xte = result.completed.test;

  std::vector<Eigen::Index> columns;
  for (Eigen::Index c = 0; c < train.cols(); ++c) {
    if (train_missing.col(c).any() || test_missing.col(c).any()) columns.push_back(c);
  }
  if (columns.empty() || train.cols() < 2) return result;

  for (int round = 0; round < rounds; ++round) {
    double ss = 0.0;
    Eigen::Index count = 0;
    for (Eigen::Index c : columns) {
      std::vector<Eigen::Index> fit_rows;
      for (Eigen::Index i = 0; i < train.rows(); ++i) {
        if (!train_missing(i, c)) fit_rows.push_back(i);
      }
      Matrix design = design_matrix(xtr, c, fit_rows);
      Vector y(static_cast<Eigen::Index>(fit_rows.size()));
      for (std::size_t r = 0; r < fit_rows.size(); ++r) y(static_cast<Eigen::Index>(r)) = xtr(fit_rows[r], c);
      Vector beta = least_squares(design, y, c);
      ss += (design * beta - y).squaredNorm();
      count += y.size();
      for (Eigen::Index i = 0; i < train.rows(); ++i) {
        if (train_missing(i, c)) xtr(i, c) = predict_row(beta, xtr, i, c);
      }
      for (Eigen::Index i = 0; i < test.rows(); ++i) {
        if (test_missing(i, c)) xte(i, c) = predict_row(beta, xte, i, c);
      }
      result.coefficients[static_cast<std::size_t>(c)] = std::move(beta);
    }
    result.residual_rmse.push_back(count > 0 ? std::sqrt(ss / static_cast<double>(count)) : 0.0);
  }
  return result;
}

}  // namespace gpimpute
