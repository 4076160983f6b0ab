#pragma once

// JSON experiment configuration. Every section is optional and falls back
// to the documented defaults; unknown keys anywhere are rejected.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpl/trainer/trainer.hpp"

namespace dpl::cli {

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr const char* kArtifactVersion = "1.0.0";

struct GridConfig {
  // Empty means a single run of the configured method.
  std::vector<GridCell> cells;
  // Empty means the experiment seed alone.
  std::vector<std::uint64_t> seeds;
};

struct ExperimentConfig {
  ExperimentSpec spec;
  GridConfig grid;
  std::filesystem::path out_dir = "runs/default";
};

ExperimentConfig default_config();
nlohmann::json to_json(const ExperimentConfig& config);
// Throws Error(Configuration) listing every offending key.
ExperimentConfig config_from_json(const nlohmann::json& j);
// Throws Error(NotFound) or Error(Configuration).
ExperimentConfig load_config(const std::filesystem::path& path);

// FNV-1a 64 over the canonical (sorted-key, compact) dump without the
// output section, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

}  // namespace dpl::cli
