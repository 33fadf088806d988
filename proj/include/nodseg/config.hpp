#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "nodseg/metrics.hpp"
#include "nodseg/network.hpp"
#include "nodseg/trainer.hpp"

namespace nodseg {

struct DataConfig {
  std::string volumes_dir;
  std::string annotations_csv;
  std::string patch_dir;
  double i_min = 0.0;
  double i_max = 255.0;
  double keep_ratio = 1.0;
  double half_depth_mm = 5.0;
  int k_folds = 5;
  std::uint64_t seed = 0;
};

struct EvalConfig {
  double threshold = 0.5;
  Aggregation aggregation = Aggregation::Lesion;
  // Fold served by --split val/test; -1 selects k_folds - 1.
  int holdout_fold = -1;
};

/// Everything a run needs. Parsed from a strict JSON document: unknown keys
/// are rejected and every default is made explicit in to_json().
struct RunConfig {
  DataConfig data;
  ModelConfig model;
  TrainConfig train = TrainConfig::defaults_for(Phase::Finetune);
  FreezeSpec freeze;
  EvalConfig eval;

  int holdout_fold() const { return eval.holdout_fold >= 0 ? eval.holdout_fold : data.k_folds - 1; }
};

/// Parses a run configuration. `phase` forces train.phase (the subcommand
/// decides it); a conflicting train.phase in the document is an error.
/// Throws ConfigError whose message starts with the offending key path.
RunConfig parse_run_config(const nlohmann::json& doc, std::optional<Phase> phase = {});
RunConfig load_run_config(const std::filesystem::path& path, std::optional<Phase> phase = {});

nlohmann::json to_json(const RunConfig& cfg);
nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& doc, const std::string& path = "model");

const char* phase_name(Phase phase);

}  // namespace nodseg
