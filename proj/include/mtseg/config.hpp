#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtseg/data.hpp"
#include "mtseg/trainer.hpp"

namespace mtseg {

enum class DataSource { kSynthetic, kSyntheticDir, kMri };

[[nodiscard]] DataSource parse_data_source(std::string_view name);
[[nodiscard]] std::string_view to_string(DataSource s);

struct DataConfig {
  DataSource source = DataSource::kSynthetic;
  // Dataset directory for synthetic-dir and mri sources.
  std::string root;
  SynthConfig synth;
  std::uint64_t synth_seed = 0;
  double target_spacing_mm = 0.25;
  std::uint64_t split_seed = 0;
  SplitSizes split;

  void validate() const;
};

struct RunConfig {
  TrainConfig train;
  DataConfig data;

  void validate() const;
};

[[nodiscard]] std::vector<std::string> preset_names();
// Throws ConfigError for unknown names.
[[nodiscard]] RunConfig preset(const std::string& name);

// Fully resolved representation; every key is present.
[[nodiscard]] nlohmann::json to_json(const RunConfig& cfg);

// Reads a configuration document. A top-level "preset" key supplies defaults
// for everything else; without it every key must be given. Unknown keys and
// missing keys are collected into a single ConfigError.
[[nodiscard]] RunConfig run_config_from_json(const nlohmann::json& doc);
[[nodiscard]] RunConfig load_run_config(const std::filesystem::path& path);

// Applies "section.key=value" overrides. Values are parsed as JSON when
// possible and taken as strings otherwise.
[[nodiscard]] RunConfig apply_overrides(const RunConfig& cfg, const std::vector<std::string>& overrides);

// Replaces data.root with MTSEG_DATA_ROOT when that variable is set.
void apply_environment(RunConfig& cfg);

// FNV-1a of the compact resolved JSON.
[[nodiscard]] std::uint64_t config_hash(const RunConfig& cfg);
[[nodiscard]] std::uint64_t config_hash(const TrainConfig& cfg);

[[nodiscard]] nlohmann::json train_config_json(const TrainConfig& cfg);
[[nodiscard]] TrainConfig train_config_from_json(const nlohmann::json& doc);

[[nodiscard]] SlicePools load_pools(const DataConfig& cfg);

}  // namespace mtseg
