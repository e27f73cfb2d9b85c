#pragma once

#include <filesystem>
#include <stdexcept>
#include <utility>

#include <json.hpp>

#include "nesyarith/neural/params.hpp"

namespace nesyarith::neural {

class CorruptCheckpoint : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json to_json(const ModelConfig& cfg);
/// Strict: unknown keys and wrong types throw std::invalid_argument.
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

// Layout: "NSAR1", u64 little-endian header length, JSON header
// {"config": ..., "tensors": [{"name", "shape", "offset"}]}, then raw
// little-endian float32 tensor data in manifest order.
void save_checkpoint(const ModelParams& params, const ModelConfig& cfg,
                     const std::filesystem::path& path);
std::pair<ModelParams, ModelConfig> load_checkpoint(const std::filesystem::path& path);

}  // namespace nesyarith::neural
