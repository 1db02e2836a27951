#include "gpimpute/checkpoint.hpp"

#include <fstream>
#include <sstream>

namespace gpimpute {

Json matrix_to_json(const Matrix& m) {
  std::vector<double> data(m.data(), m.data() + m.size());  // column-major
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Matrix matrix_from_json(const Json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw ParseError("checkpoint matrix " + shape_string(rows, cols) + " holds " + std::to_string(data.size()) +
                     " values");
  }
  return Eigen::Map<const Matrix>(data.data(), rows, cols);
}

Json to_json(const SparseGPLayer& layer) {
  Json scales = Json::array();
  for (const auto& s : layer.q_scale) scales.push_back(matrix_to_json(s));
  return {{"inducing", matrix_to_json(layer.inducing)},
          {"q_mean", matrix_to_json(layer.q_mean)},
          {"q_scale", scales},
          {"log_lengthscales", matrix_to_json(layer.kernel.log_lengthscales)},
          {"log_amplitude", layer.kernel.log_amplitude},
          {"mean_weights", matrix_to_json(layer.mean_weights)},
          {"log_noise", matrix_to_json(layer.log_noise)}};
}

SparseGPLayer layer_from_json(const Json& j) {
  SparseGPLayer l;
  l.inducing = matrix_from_json(j.at("inducing"));
  l.q_mean = matrix_from_json(j.at("q_mean"));
  for (const auto& s : j.at("q_scale")) l.q_scale.push_back(matrix_from_json(s));
  l.kernel.log_lengthscales = matrix_from_json(j.at("log_lengthscales"));
  l.kernel.log_amplitude = j.at("log_amplitude").get<double>();
  l.mean_weights = matrix_from_json(j.at("mean_weights"));
  l.log_noise = matrix_from_json(j.at("log_noise"));
  if (static_cast<Eigen::Index>(l.q_scale.size()) != l.q_mean.cols() ||
      l.kernel.log_lengthscales.size() != l.inducing.cols()) {
    throw ParseError("checkpoint layer has inconsistent shapes");
  }
  return l;
}

Json to_json(const DgpNetwork& network) {
  Json layers = Json::array();
  for (const auto& l : network.layers) layers.push_back(to_json(l));
  return {{"layers", layers}, {"samples_train", network.samples_train}, {"samples_test", network.samples_test}};
}

DgpNetwork dgp_from_json(const Json& j) {
  DgpNetwork n;
  for (const auto& l : j.at("layers")) n.layers.push_back(layer_from_json(l));
  n.samples_train = j.at("samples_train").get<int>();
  n.samples_test = j.at("samples_test").get<int>();
  return n;
}

Json to_json(const MgpNetwork& network) {
  Json layers = Json::array();
  for (const auto& l : network.impute_layers) layers.push_back(to_json(l));
  Json j = {{"permutation", network.ordering.permutation},
            {"stds", matrix_to_json(network.ordering.stds)},
            {"impute_layers", layers},
            {"target_column", network.target_column},
            {"initial_values", matrix_to_json(network.initial_values)},
            {"num_columns", network.num_columns}};
  if (network.target_layer) j["target_layer"] = to_json(*network.target_layer);
  return j;
}

MgpNetwork mgp_from_json(const Json& j) {
  MgpNetwork n;
  n.ordering.permutation = j.at("permutation").get<std::vector<int>>();
  n.ordering.stds = matrix_from_json(j.at("stds"));
  for (const auto& l : j.at("impute_layers")) n.impute_layers.push_back(layer_from_json(l));
  n.target_column = j.at("target_column").get<int>();
  n.initial_values = matrix_from_json(j.at("initial_values"));
  n.num_columns = j.at("num_columns").get<Eigen::Index>();
  if (j.contains("target_layer")) n.target_layer = layer_from_json(j.at("target_layer"));
  if (n.impute_layers.size() != n.ordering.permutation.size()) {
    throw ParseError("checkpoint: " + std::to_string(n.impute_layers.size()) + " layers for " +
                     std::to_string(n.ordering.permutation.size()) + " ordered attributes");
  }
  return n;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  Json j = {{"format", "gpimpute-checkpoint"},
            {"version", 1},
            {"kind", c.kind},
            {"config_fingerprint", c.config_fingerprint},
            {"model", c.model}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump() << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (j.value("format", std::string()) != "gpimpute-checkpoint") throw ParseError(path.string() + ": not a checkpoint");
  return {j.at("kind").get<std::string>(), j.at("config_fingerprint").get<std::string>(), j.at("model")};
}

}  // namespace gpimpute
