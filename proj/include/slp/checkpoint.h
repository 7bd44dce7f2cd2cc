#pragma once

#include "slp/model.h"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace slp {

/// Binary checkpoint layout, little-endian:
///   8 bytes   magic "SLPQCKPT"
///   u32       format version (1)
///   u64, ...  length-prefixed UTF-8 JSON metadata: model config, seed,
///             step, joint names, free-form training metadata
///   u64       number of weight arrays, then per array:
///             u64 name length, name bytes, u64 rows, u64 cols,
///             rows * cols IEEE-754 doubles in row-major order
struct Checkpoint {
  ModelConfig config;
  ParameterSet parameters;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::vector<std::string> jointNames;
  nlohmann::json metadata = nlohmann::json::object();
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serializeCheckpoint(const Checkpoint& ckpt);
Checkpoint deserializeCheckpoint(const std::string& bytes, const std::string& source = "<checkpoint>");

void saveCheckpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint loadCheckpoint(const std::filesystem::path& path);

} // namespace slp
