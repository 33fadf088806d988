#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "nodseg/network.hpp"

namespace nodseg {

inline constexpr int kCheckpointVersion = 1;

/// Metadata stored in <dir>/metadata.json next to one float32 blob per tensor.
struct CheckpointInfo {
  int format_version = kCheckpointVersion;
  int epoch = 0;
  std::string config_hash;
  std::vector<std::string> groups;
};

/// Writes every parameter and buffer of `model` as a little-endian float32 blob.
void save_checkpoint(MultitaskNet& model, const std::filesystem::path& dir, int epoch,
                     const std::string& config_hash);

/// Copies tensors from `dir` into `model`. Throws CheckpointError if the
/// tensor set or any shape disagrees with the model.
CheckpointInfo load_checkpoint(MultitaskNet& model, const std::filesystem::path& dir);

/// Architecture recorded in a checkpoint.
ModelConfig read_checkpoint_model_config(const std::filesystem::path& dir);

/// FNV-1a 64-bit digest rendered as 16 hex characters.
std::string fnv1a_hex(const std::string& text);

}  // namespace nodseg
