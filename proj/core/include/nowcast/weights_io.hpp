#pragma once

// Versioned weight file:
//   "NCWEIGHT"                  8-byte magic
//   u32 version                 little endian, currently 1
//   u64 header_bytes
//   header                      JSON: model config (hyperparameters, seed,
//                               ablation modes), channel order, parameter
//                               groups (name, shape) in payload order, and the
//                               SHA-256 of the payload
//   payload                     little-endian f64 values of each group

#include <filesystem>

#include "nowcast/model.hpp"

namespace nowcast {

void save_weights(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_weights(const std::filesystem::path& path);

/// Config <-> JSON text, shared with the training config reader.
std::string model_config_json(const ModelConfig& config);

}  // namespace nowcast
