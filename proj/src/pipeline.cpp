#include "gpimpute/pipeline.hpp"

#include <atomic>
#include <chrono>
#include <ctime>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "gpimpute/baselines.hpp"
#include "gpimpute/dgp.hpp"
#include "gpimpute/hash.hpp"
#include "gpimpute/log.hpp"
#include "gpimpute/mgp.hpp"
#include "gpimpute/svgp.hpp"

namespace gpimpute {

namespace {

constexpr std::pair<Method, const char*> kMethodNames[] = {
    {Method::Mean, "mean"}, {Method::Median, "median"}, {Method::Knn, "knn"}, {Method::Mice, "mice"},
    {Method::Svgp, "svgp"}, {Method::Dgp, "dgp"},       {Method::Mgp, "mgp"},
};

GpTrainConfig gp_config(const ExperimentConfig& c, Eigen::Index profile_rows, std::uint64_t seed) {
  GpTrainConfig g;
  g.inducing = c.inducing;
  g.batch = c.batch;
  g.learning_rate = c.learning_rate;
  g.iterations = c.resolved_iterations(profile_rows);
  g.samples = c.samples;
  g.seed = seed;
  g.log_every = std::max<long>(1, g.iterations / 20);
  return g;
}

std::uint64_t derive_seed(std::uint64_t seed, double rate, std::string_view purpose) {
  return Fnv1a().pod(seed).pod(rate).text(purpose).value();
}

}  // namespace

std::string method_name(Method m) {
  for (const auto& [k, n] : kMethodNames) {
    if (k == m) return n;
  }
  return "?";
}

Method parse_method(const std::string& name) {
  for (const auto& [k, n] : kMethodNames) {
    if (name == n) return k;
  }
  throw ContractError("unknown method '" + name + "' (expected mean, median, knn, mice, svgp, dgp or mgp)");
}

bool is_gp_method(Method m) { return m == Method::Svgp || m == Method::Dgp || m == Method::Mgp; }

long ExperimentConfig::resolved_iterations(Eigen::Index rows) const {
  if (iterations > 0) return iterations;
  return rows < kSmallDataRows ? 2000 : 10000;
}

Json config_to_json(const ExperimentConfig& c, Eigen::Index rows) {
  std::vector<std::string> methods;
  for (Method m : c.methods) methods.push_back(method_name(m));
  return {{"dataset", c.dataset},
          {"schema", c.schema},
          {"methods", methods},
          {"rates", c.rates},
          {"seeds", c.seeds},
          {"train_fraction", c.train_fraction},
          {"inducing", c.inducing},
          {"batch", c.batch},
          {"learning_rate", c.learning_rate},
          {"iterations", c.resolved_iterations(rows)},
          {"iterations_profile", c.iterations > 0 ? "explicit" : (rows < kSmallDataRows ? "small-data" : "default")},
          {"samples", c.samples},
          {"knn_k", c.knn_k},
          {"mice_rounds", c.mice_rounds},
          {"dgp_layers", c.dgp_layers},
          {"output", c.output},
          {"jobs", c.jobs}};
}

// ---- methods -------------------------------------------------------------------------

MethodOutput fit_and_impute(Method method, const MethodInput& in, const ExperimentConfig& config,
                            Eigen::Index profile_rows, std::uint64_t seed) {
  MethodOutput out;
  switch (method) {
    case Method::Mean:
      out.completed = fit_transform_mean(in.train, in.train_missing, in.test, in.test_missing).test;
      return out;
    case Method::Median:
      out.completed = fit_transform_median(in.train, in.train_missing, in.test, in.test_missing).test;
      return out;
    case Method::Knn:
      out.completed = knn_impute(in.train, in.train_missing, in.test, in.test_missing, config.knn_k);
      return out;
    case Method::Mice:
      out.completed = mice_impute(in.train, in.train_missing, in.test, in.test_missing, config.mice_rounds).completed.test;
      return out;
    default:
      break;
  }

  const GpTrainConfig gp = gp_config(config, profile_rows, seed);
  const Vector means = observed_column_means(in.train, in.train_missing);
  const Matrix train_hat = fill_missing(in.train, in.train_missing, means);
  const Matrix test_hat = fill_missing(in.test, in.test_missing, means);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);

  if (method == Method::Svgp) {
    SvgpModel model = fit_svgp(train_hat, in.train_missing, gp);
    out.completed = svgp_impute(model.layer, test_hat, in.test_missing);
    const MarginalGaussians mg = predictive_marginals(model.layer, test_hat);
    for (Eigen::Index i = 0; i < test_hat.rows(); ++i) {
      for (Eigen::Index j = 0; j < test_hat.cols(); ++j) {
        if (in.test_missing(i, j)) {
          out.uncertainty.push_back(
              {i, static_cast<int>(j), mg.mean(i, j), mg.variance(i, j) + std::exp(model.layer.log_noise(j))});
        }
      }
    }
    out.checkpoint = Checkpoint{"svgp", "", to_json(model.layer)};
    return out;
  }

  if (method == Method::Dgp) {
    DgpConfig dc;
    static_cast<GpTrainConfig&>(dc) = gp;
    dc.layers = config.dgp_layers;
    DgpModel model = fit_dgp(train_hat, in.train_missing, dc);
    out.completed = test_hat;
    const Eigen::Index chunk = std::max<Eigen::Index>(1, 4096 / std::max(config.samples, 1));
    for (Eigen::Index start = 0; start < test_hat.rows(); start += chunk) {
      const Eigen::Index len = std::min(chunk, test_hat.rows() - start);
      GaussianMixture mix = dgp_predict(model.network, test_hat.middleRows(start, len), config.samples, rng, true);
      const Matrix mu = mix.mean();
      const Matrix var = mix.variance();
      for (Eigen::Index i = 0; i < len; ++i) {
        for (Eigen::Index j = 0; j < test_hat.cols(); ++j) {
          if (!in.test_missing(start + i, j)) continue;
          out.completed(start + i, j) = mu(i, j);
          out.uncertainty.push_back({start + i, static_cast<int>(j), mu(i, j), var(i, j)});
        }
      }
    }
    out.checkpoint = Checkpoint{"dgp", "", to_json(model.network)};
    return out;
  }

  // MGP: a layer for every attribute missing on either side; stds from the
  // raw observed training cells.
  const AttributeOrdering raw_order = order_missing_attributes(in.raw_train, in.train_missing);
  std::vector<bool> has_missing(static_cast<std::size_t>(in.train.cols()));
  for (Eigen::Index c = 0; c < in.train.cols(); ++c) {
    has_missing[static_cast<std::size_t>(c)] = in.train_missing.col(c).any() || in.test_missing.col(c).any();
  }
  MgpConfig mc;
  static_cast<GpTrainConfig&>(mc) = gp;
  const AttributeOrdering ordering = order_missing_attributes(raw_order.stds, has_missing, mc.direction);
  MgpModel model = train_mgp(in.train, in.train_missing, ordering, mc);
  ImputationResult res = impute(model.network, in.test, in.test_missing, config.samples, rng);
  out.completed = std::move(res.completed);
  for (const auto& c : res.cells) out.uncertainty.push_back({c.row, c.column, c.mean, c.variance});
  out.checkpoint = Checkpoint{"mgp", "", to_json(model.network)};
  return out;
}

// ---- cells ---------------------------------------------------------------------------------

std::string cell_fingerprint(const std::string& dataset_fingerprint, const ExperimentConfig& config,
                             const CellSpec& cell, Eigen::Index rows) {
  Json j = {{"dataset", dataset_fingerprint},
            {"method", method_name(cell.method)},
            {"rate", cell.rate},
            {"seed", cell.seed},
            {"train_fraction", config.train_fraction}};
  if (cell.method == Method::Knn) j["knn_k"] = config.knn_k;
  if (cell.method == Method::Mice) j["mice_rounds"] = config.mice_rounds;
  if (is_gp_method(cell.method)) {
    j["inducing"] = config.inducing;
    j["batch"] = config.batch;
    j["learning_rate"] = config.learning_rate;
    j["iterations"] = config.resolved_iterations(rows);
    j["samples"] = config.samples;
    if (cell.method == Method::Dgp) j["dgp_layers"] = config.dgp_layers;
  }
  return Fnv1a().text(j.dump()).hex();
}

CellOutcome run_cell(const Dataset& raw, const ExperimentConfig& config, const CellSpec& cell) {
  const auto t0 = std::chrono::steady_clock::now();
  DataSplit s = split(raw, config.train_fraction, cell.seed);
  CellOutcome out;
  out.train_mask = inject_mcar(s.train, cell.rate, derive_seed(cell.seed, cell.rate, "train"));
  out.test_mask = inject_mcar(s.test, cell.rate, derive_seed(cell.seed, cell.rate, "test"));
  const Dataset train = apply_mask(s.train, out.train_mask);
  const Dataset test = apply_mask(s.test, out.test_mask);
  const StandardizedPair z = standardize(train, test);
  const Matrix truth = standardize(s.test.values, z.params);

  MethodInput in{z.train.values, z.train.missing, z.test.values, z.test.missing, train.values};
  MethodOutput m = fit_and_impute(cell.method, in, config, raw.rows(), cell.seed);

  out.record.method = method_name(cell.method);
  out.record.dataset = raw.name;
  out.record.rate = cell.rate;
  out.record.split = static_cast<int>(cell.seed);
  out.record.rmse = rmse(truth, m.completed, out.test_mask.mask);
  out.record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.checkpoint = std::move(m.checkpoint);
  return out;
}

// ---- grid -------------------------------------------------------------------------------------

std::filesystem::path make_run_directory(const std::filesystem::path& root, const std::string& prefix) {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  localtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  std::filesystem::path base = root / (prefix + "-" + stamp);
  std::filesystem::path dir = base;
  for (int i = 1; std::filesystem::exists(dir); ++i) dir = base.string() + "-" + std::to_string(i);
  std::filesystem::create_directories(dir);
  return dir;
}

BenchmarkSummary run_benchmark(const Dataset& raw, const ExperimentConfig& config,
                               const std::filesystem::path& run_dir) {
  const std::filesystem::path cells_dir = run_dir / "cells";
  std::filesystem::create_directories(cells_dir);
  const std::string data_fp = raw.fingerprint();

  std::vector<CellSpec> grid;
  for (double rate : config.rates)
    for (Method m : config.methods)
      for (std::uint64_t seed : config.seeds) grid.push_back({m, rate, seed});

  std::vector<std::optional<Record>> results(grid.size());
  std::vector<std::string> fingerprints(grid.size());
  BenchmarkSummary summary;
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    fingerprints[i] = cell_fingerprint(data_fp, config, grid[i], raw.rows());
    const auto rec_path = cells_dir / (fingerprints[i] + ".json");
    if (std::filesystem::exists(rec_path)) {
      std::ifstream f(rec_path);
      std::string line;
      std::getline(f, line);
      try {
        results[i] = record_from_json(line);
        ++summary.skipped;
        continue;
      } catch (const std::exception& e) {
        log_warning("ignoring unreadable cell record " + rec_path.string() + ": " + e.what());
      }
    }
    todo.push_back(i);
  }

  std::mutex collector;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t t = next.fetch_add(1);
      if (t >= todo.size()) return;
      const std::size_t i = todo[t];
      const CellSpec& cell = grid[i];
      const std::string label =
          method_name(cell.method) + " rate=" + format_double(cell.rate) + " split=" + std::to_string(cell.seed);
      try {
        CellOutcome o = run_cell(raw, config, cell);
        const std::string stem = (cells_dir / fingerprints[i]).string();
        if (o.checkpoint) {
          o.checkpoint->config_fingerprint = fingerprints[i];
          save_checkpoint(stem + ".model.json", *o.checkpoint);
        }
        write_mask(stem + ".train-mask.csv", o.train_mask);
        write_mask(stem + ".test-mask.csv", o.test_mask);
        {
          // Written last: its presence marks the cell complete.
          std::ofstream f(stem + ".json");
          f << record_to_json(o.record) << '\n';
        }
        std::lock_guard<std::mutex> lock(collector);
        results[i] = o.record;
        ++summary.executed;
        log_info(label + ": rmse " + format_double(o.record.rmse) + " in " + format_double(o.record.seconds) + " s");
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(collector);
        summary.failures.push_back(label + ": " + e.what());
        log_warning(label + " failed: " + e.what());
      }
    }
  };
  const int jobs = std::max(1, std::min<int>(config.jobs, static_cast<int>(std::max<std::size_t>(todo.size(), 1))));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  for (const auto& r : results) {
    if (r) summary.table.add(*r);
  }
  {
    std::ofstream f(run_dir / "records.jsonl");
    for (const auto& r : summary.table.records) f << record_to_json(r) << '\n';
  }
  if (!summary.failures.empty()) {
    std::ofstream f(run_dir / "failures.txt");
    for (const auto& s : summary.failures) f << s << '\n';
  }
  return summary;
}

}  // namespace gpimpute
