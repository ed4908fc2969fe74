#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json_fwd.hpp>

#include "derm/augment.hpp"
#include "derm/catalog.hpp"
#include "derm/model.hpp"
#include "derm/trainer.hpp"

namespace derm {

struct DatasetConfig {
  std::filesystem::path metadata_path;
  std::filesystem::path images_root;
};

struct SplitConfig {
  std::uint64_t seed = 42;
  SplitRatios ratios;
  int k = 5;  // 0 disables the fold assignment
};

struct EnsembleConfig {
  int tta_n = 10;
  std::uint64_t tta_seed = 0;
};

// One experiment file. The augmentation section lands in train.augmentation.
struct ExperimentConfig {
  DatasetConfig dataset;
  SplitConfig split;
  ModelSpec model;
  TrainConfig train;
  EnsembleConfig ensemble;
  std::filesystem::path output_dir = "runs";

  // Range checks of every section; throws ConfigError.
  void validate() const;
  // Throws DataError naming the first dataset path that does not exist.
  void require_dataset() const;
};

// Parses YAML text. Relative paths resolve against `base_dir`, dataset paths
// against `data_root` when given. Unknown keys are rejected.
ExperimentConfig parse_experiment_config(std::string_view yaml, const std::filesystem::path& base_dir,
                                         const std::optional<std::filesystem::path>& data_root = std::nullopt);

// Reads the file; DERM_DATA_ROOT, when set, is the data root.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

nlohmann::json to_json(const ExperimentConfig& config);
nlohmann::json to_json(const TransformSpec& spec);

}  // namespace derm
