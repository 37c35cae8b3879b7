#pragma once

#include <cstdint>
#include <filesystem>

#include "parscale/model/parameters.hpp"

namespace parscale {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// "PSCK", u32 version, u64 header length, header text, then float32 data.
// All integers and reals little-endian. The header holds the model config as
// key = value lines followed by one "tensor <name> <d0,d1,..> <offset>" line
// per tensor; offsets are bytes from the start of the data block.
void save_checkpoint(const ParameterStore<float>& store, const ModelConfig& config,
                     const std::filesystem::path& path);

struct LoadedCheckpoint {
  ParameterStore<float> store;
  ModelConfig config;
};

// Throws CheckpointVersionError for an unknown version and CheckpointError for
// anything malformed, truncated, or inconsistent with the stored config.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace parscale
