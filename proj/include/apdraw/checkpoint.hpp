#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "apdraw/common.hpp"

namespace apdraw {

inline constexpr int kCheckpointSchema = 1;

// Archive layout: 8-byte magic, u64 header length, JSON header (schema_version,
// kind, config, config_hash, tensor table), raw tensor bytes, u64 FNV-1a checksum
// of everything before it.
struct CheckpointHeader {
  int schema_version = kCheckpointSchema;
  std::string kind;  // "G", "F", "D_D", "D_P", "C", "M"
  nlohmann::json config;
  std::string config_hash;
};

std::string config_hash(const nlohmann::json& config);

void save_checkpoint(const std::filesystem::path& path, torch::nn::Module& module, const std::string& kind,
                     const nlohmann::json& config);

/// Reads and verifies the header (magic, checksum, schema version) without loading weights.
CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

/// Loads weights into `module`. Throws CheckpointError on corruption, on a schema
/// version other than kCheckpointSchema, on a kind mismatch, when `expected_config`
/// hashes differently from the stored config (a different profile) and when the
/// tensor table does not match the module.
CheckpointHeader load_checkpoint(const std::filesystem::path& path, torch::nn::Module& module,
                                 const std::string& expected_kind,
                                 const std::optional<nlohmann::json>& expected_config = std::nullopt);

}  // namespace apdraw
