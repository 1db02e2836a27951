#ifndef GPIMPUTE_CHECKPOINT_HPP
#define GPIMPUTE_CHECKPOINT_HPP

// JSON checkpoints for trained models. Doubles are written in shortest
// round-trip form, so load(save(m)) reproduces every parameter bit for bit.

#include <filesystem>
#include <string>

#include <json.hpp>

#include "gpimpute/dgp.hpp"
#include "gpimpute/mgp.hpp"
#include "gpimpute/svgp.hpp"

namespace gpimpute {

using Json = nlohmann::json;

Json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const Json& j);

Json to_json(const SparseGPLayer& layer);
SparseGPLayer layer_from_json(const Json& j);

Json to_json(const DgpNetwork& network);
DgpNetwork dgp_from_json(const Json& j);

Json to_json(const MgpNetwork& network);
MgpNetwork mgp_from_json(const Json& j);

struct Checkpoint {
  std::string kind;                // "svgp", "dgp", "mgp"
  std::string config_fingerprint;  // of the resolved config that produced it
  Json model;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace gpimpute

#endif  // GPIMPUTE_CHECKPOINT_HPP
