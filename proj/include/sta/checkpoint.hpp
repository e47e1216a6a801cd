#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sta/config.hpp"
#include "sta/model.hpp"

namespace sta {

/// A trained model with the run it came from. On disk: one JSON manifest line (names,
/// shapes, config, provenance) followed by every parameter as little-endian float64, in
/// manifest order.
struct Checkpoint {
  RunConfig config;
  Model model;
  std::size_t epoch = 0;
  std::size_t fold = 0;  // 0-based
  std::size_t folds = 0;
  double learning_rate = 0.0;
  double validation_auc1 = 0.0;
  std::uint64_t dataset_seed = 0;
  std::vector<std::string> train_ids;  // patients the model was fitted on
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// Throws DataError for a bad magic line, a manifest that does not match the model the
/// config builds, or a short payload.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sta
