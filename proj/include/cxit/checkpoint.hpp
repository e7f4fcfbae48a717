#pragma once

#include <cstdint>
#include <filesystem>

#include <json.hpp>

#include "cxit/model.hpp"
#include "cxit/train.hpp"

namespace cxit {

struct Checkpoint {
  ModelConfig model;
  TrainState state;
  std::uint64_t seed = 0;
  nlohmann::json run_config;  // resolved run document, may be null
};

// Rounds parameters and optimizer moments to f32, the precision a checkpoint
// stores; applied before saving so a resumed run continues from identical state.
void snap_to_f32(TrainState& state);

// .cxt: "CXITCKP1", one JSON header line, then params, Adam m and Adam v as
// little-endian f32 in canonical order.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cxit
