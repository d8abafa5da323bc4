#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "heteroqa/config.hpp"
#include "heteroqa/model.hpp"

namespace heteroqa {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  nn::Matrix value;
};

/// Parameters plus what is needed to rebuild the model that owns them.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t config_hash = 0;
  /// Rendered RunConfig of the training run.
  std::string config_text;
  /// Regular vocabulary tokens in id order.
  std::vector<std::string> vocab;
  std::vector<NamedTensor> tensors;
};

Checkpoint make_checkpoint(const HeteroQaModel& model, const RunConfig& config);

/// Layout: magic, version, hash, config text, vocabulary, name table
/// (name, rows, cols), then every array as little-endian float64, row-major.
std::string serialize_checkpoint(const Checkpoint& checkpoint);
/// Throws ValidationError on a bad magic, unknown version, truncation or a
/// hash that does not match the embedded config.
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// The training configuration stored in the checkpoint.
RunConfig checkpoint_config(const Checkpoint& checkpoint);

/// Rebuilds the model; config must hash to the stored value and every
/// parameter must be present with its expected shape.
HeteroQaModel restore_model(const Checkpoint& checkpoint, const RunConfig& config);

}  // namespace heteroqa
