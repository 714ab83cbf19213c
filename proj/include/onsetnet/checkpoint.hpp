#pragma once

#include <cstdint>
#include <string>

#include "onsetnet/model.hpp"

// Checkpoint file layout (little-endian throughout):
//   magic "C4SN" | u32 version (1) | u32 config length + canonical config text
//   (training metadata folded in as meta.* lines) | u32 entry count | entries |
//   u32 CRC-32 of everything before it.
// Entry: u32 name length + UTF-8 name | u32 rank | u32 extents | u32 dtype
// (0 = f32) | raw payload.

namespace onsetnet {

struct CheckpointMeta {
    std::int64_t epoch = 0;
    double val_f = 0.0;
};

struct LoadedCheckpoint {
    Model<float> model;
    CheckpointMeta meta;
};

void save_checkpoint(Model<float>& model, const std::string& path, const CheckpointMeta& meta);
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace onsetnet
