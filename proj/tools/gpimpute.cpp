// gpimpute command line: impute, benchmark, report.

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "gpimpute/hash.hpp"
#include "gpimpute/log.hpp"
#include "gpimpute/pipeline.hpp"

using namespace gpimpute;

namespace {

struct Options {
  ExperimentConfig config;
  std::vector<std::string> methods{"mean"};
  std::string resume;
  std::string records;
  double alpha = 0.05;
};

std::filesystem::path output_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("GPIMPUTE_OUT"); env && *env) return env;
  return "runs";
}

Dataset load(const ExperimentConfig& c) {
  if (c.dataset.empty()) throw ContractError("--dataset is required");
  return c.schema.empty() ? load_csv(c.dataset) : load_csv(c.dataset, load_schema(c.schema));
}

void resolve_methods(Options& o) {
  o.config.methods.clear();
  for (const auto& m : o.methods) o.config.methods.push_back(parse_method(m));
}

void write_json(const std::filesystem::path& p, const Json& j) {
  std::ofstream f(p);
  f << j.dump(2) << '\n';
  if (!f) throw std::runtime_error("cannot write " + p.string());
}

void add_training_flags(CLI::App* app, Options& o) {
  auto& c = o.config;
  app->add_option("--dataset", c.dataset, "CSV file with a header row")->required();
  app->add_option("--schema", c.schema, "JSON column schema");
  app->add_option("--inducing", c.inducing, "inducing points per GP layer")->capture_default_str();
  app->add_option("--batch", c.batch, "mini-batch size")->capture_default_str();
  app->add_option("--lr", c.learning_rate, "Adam learning rate")->capture_default_str();
  app->add_option("--iters", c.iterations, "optimizer steps (0: 2000 below 2000 rows, else 10000)")
      ->capture_default_str();
  app->add_option("--samples", c.samples, "Monte Carlo samples")->capture_default_str();
  app->add_option("--knn-k", c.knn_k, "neighbours for knn")->capture_default_str();
  app->add_option("--mice-rounds", c.mice_rounds, "chained-equation sweeps")->capture_default_str();
  app->add_option("--dgp-layers", c.dgp_layers, "deep GP depth")->capture_default_str();
  app->add_option("--out", c.output, "output root (default $GPIMPUTE_OUT or ./runs)");
}

int cmd_impute(Options& o) {
  resolve_methods(o);
  if (o.config.methods.size() != 1) throw ContractError("impute takes exactly one --method");
  const Method method = o.config.methods.front();
  Dataset d = load(o.config);
  const auto dir = make_run_directory(output_root(o.config.output), "impute-" + method_name(method));
  write_json(dir / "config.json", config_to_json(o.config, d.rows()));

  std::vector<std::string> header;
  for (const auto& c : d.columns) header.push_back(c.name);
  if (!d.missing.any()) {
    log_warning("input has no missing cells; writing it unchanged");
    write_csv(dir / "completed.csv", header, d.values);
    std::cout << dir.string() << '\n';
    return 0;
  }
  const Standardization s = fit_standardization(d.values, d.missing);
  const Matrix z = standardize(d.values, s);
  MethodInput in{z, d.missing, z, d.missing, d.values};
  const std::uint64_t seed = o.config.seeds.empty() ? 1 : o.config.seeds.front();
  MethodOutput out = fit_and_impute(method, in, o.config, d.rows(), seed);

  Matrix completed = unstandardize(out.completed, s);
  for (Eigen::Index i = 0; i < d.rows(); ++i)
    for (Eigen::Index j = 0; j < d.cols(); ++j)
      if (!d.missing(i, j)) completed(i, j) = d.values(i, j);  // bit-exact pass-through
  write_csv(dir / "completed.csv", header, completed);

  if (is_gp_method(method)) {
    std::ofstream f(dir / "uncertainty.csv");
    f << "row,column,mean,variance\n";
    for (const auto& u : out.uncertainty) {
      const double sd = s.std(u.column);
      f << u.row << ',' << header[static_cast<std::size_t>(u.column)] << ','
        << format_double(u.mean * sd + s.mean(u.column)) << ',' << format_double(u.variance * sd * sd) << '\n';
    }
  }
  if (out.checkpoint) {
    out.checkpoint->config_fingerprint = Fnv1a().text(config_to_json(o.config, d.rows()).dump()).hex();
    save_checkpoint(dir / "model.json", *out.checkpoint);
  }
  std::cout << dir.string() << '\n';
  return 0;
}

int cmd_benchmark(Options& o) {
  resolve_methods(o);
  Dataset d = load(o.config);
  std::filesystem::path dir;
  if (!o.resume.empty()) {
    dir = o.resume;
    std::filesystem::create_directories(dir);
  } else {
    dir = make_run_directory(output_root(o.config.output), "benchmark-" + d.name);
  }
  write_json(dir / "config.json", config_to_json(o.config, d.rows()));
  BenchmarkSummary b = run_benchmark(d, o.config, dir);
  std::cout << emit_report(b.table, dir, o.alpha);
  std::cout << "cells run " << b.executed << ", reused " << b.skipped << ", failed " << b.failures.size() << "\n"
            << dir.string() << '\n';
  return b.failures.empty() ? 0 : 1;
}

int cmd_report(Options& o) {
  ResultsTable t = read_records(o.records);
  std::filesystem::path dir =
      o.config.output.empty() ? std::filesystem::path(o.records).parent_path() / "report" : std::filesystem::path(o.config.output);
  std::cout << emit_report(t, dir, o.alpha);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Missing-value imputation with chained sparse Gaussian processes"};
  app.require_subcommand(1);
  Options o;

  auto* imp = app.add_subcommand("impute", "fill the missing cells of a CSV file");
  add_training_flags(imp, o);
  imp->add_option("--method", o.methods, "mean, median, knn, mice, svgp, dgp or mgp")->expected(1);
  imp->add_option("--seeds", o.config.seeds, "random seed (first value used)")->delimiter(',');

  auto* bench = app.add_subcommand("benchmark", "run the method x rate x split grid");
  add_training_flags(bench, o);
  bench->add_option("--method", o.methods, "methods, comma separated")->delimiter(',')->capture_default_str();
  bench->add_option("--rate", o.config.rates, "missing rates, comma separated")->delimiter(',')->capture_default_str();
  bench->add_option("--seeds", o.config.seeds, "split seeds, comma separated")->delimiter(',')->capture_default_str();
  bench->add_option("--jobs", o.config.jobs, "cells run in parallel")->capture_default_str();
  bench->add_option("--resume", o.resume, "existing run directory to complete");
  bench->add_option("--alpha", o.alpha, "Nemenyi level (0.05 or 0.10)")->capture_default_str();

  auto* rep = app.add_subcommand("report", "render tables and ranks from a records file");
  rep->add_option("records", o.records, "records.jsonl")->required()->check(CLI::ExistingFile);
  rep->add_option("--out", o.config.output, "report directory (default: next to the records)");
  rep->add_option("--alpha", o.alpha, "Nemenyi level (0.05 or 0.10)")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*imp) return cmd_impute(o);
    if (*bench) return cmd_benchmark(o);
    return cmd_report(o);
  } catch (const std::exception& e) {
    std::cerr << "gpimpute: " << e.what() << '\n';
    return 2;
  }
}
