#pragma once

#include <filesystem>

#include "vgan/model.hpp"

namespace vgan {

// Checkpoint directory: manifest.json (architecture, channels, stage,
// fade_alpha, w_bar + sample count, tensor index) plus one little-endian
// float32 blob per parameter named "<module>.<parameter path>.f32".
void save_checkpoint(const GanModel& model, const std::filesystem::path& dir);
GanModel load_checkpoint(const std::filesystem::path& dir);

bool is_checkpoint_dir(const std::filesystem::path& dir);

}  // namespace vgan
