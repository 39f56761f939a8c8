#pragma once

#include "mllc/train.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>

namespace mllc {

/// One JSON document covering data generation, training, refinement, losses,
/// and augmentation. Every field has a default; unknown keys are rejected.
struct ExperimentConfig {
  std::string out_dir = "out";
  int threads = 1;
  SynthSpec synth;
  TrainConfig train;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path);

}  // namespace mllc
