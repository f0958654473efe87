#pragma once

#include <string>

#include "json.hpp"

#include "acnorm/data.hpp"
#include "acnorm/graph.hpp"
#include "acnorm/train.hpp"

namespace acnorm {

inline constexpr int kConfigVersion = 1;

// JSON (de)serialization for the config file schema. Unknown keys are
// rejected so typos fail loudly.
nlohmann::json to_json(const SyntheticTaskSpec& spec);
SyntheticTaskSpec task_from_json(const nlohmann::json& j);

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ArchSpec& arch);
ArchSpec arch_from_json(const nlohmann::json& j);

nlohmann::json load_json_file(const std::string& path);
void write_json_file(const std::string& path, const nlohmann::json& j);

// Applies the ACNORM_SEED environment variable override, if set.
std::uint64_t effective_seed(std::uint64_t config_seed);

} // namespace acnorm
