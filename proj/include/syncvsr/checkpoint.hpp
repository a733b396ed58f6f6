#pragma once

#include "syncvsr/model.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>

namespace syncvsr {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct CheckpointMeta {
  nlohmann::json train_config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::string world_fingerprint;
  /// Manifest hash of the eval split the run was validated on.
  std::string eval_split_id;
  int epoch = 0;
};

struct Checkpoint {
  Model model;
  CheckpointMeta meta;
};

/// "SVCK", u32 header length, JSON header (config echo, seed, tensor table), then float32 LE tensor blocks.
std::string encode_checkpoint(const Model& model, const CheckpointMeta& meta);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const Model& model, const CheckpointMeta& meta, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// SHA-1 over the float64 bytes of every tensor in canonical order.
std::string parameter_hash(const Parameters& params);

}  // namespace syncvsr
