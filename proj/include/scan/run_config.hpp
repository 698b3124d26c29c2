#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "scan/losses.hpp"
#include "scan/pipeline.hpp"
#include "scan/trainer.hpp"

namespace scan {

struct DatasetSection {
  int n_train_per_domain = 100;
  int n_eval = 30;
  std::vector<int> resolutions = {16, 32, 64};
};

struct EvalSection {
  Direction direction = Direction::y2x;
  int histogram_bins = 10;
  /// Seeds of the ablation grid.
  std::vector<std::uint64_t> ablation_seeds = {1, 2, 3};
};

struct PathsSection {
  std::string data_dir = "data";
  std::string out_dir = "runs";
};

/// Everything a command needs; `seed` drives the dataset, initialization and
/// training order.
struct RunConfig {
  std::uint64_t seed = 0;
  DatasetSection dataset;
  std::vector<StageConfig> pipeline;
  TrainConfig train;
  LossWeights loss;
  EvalSection eval;
  PathsSection paths;

  /// Throws ConfigError naming the first bad field.
  void validate() const;
};

/// Desk-scale stage defaults (smaller than StageConfig's own defaults so the
/// whole suite trains on one core).
StageConfig desk_stage(int resolution);

/// 16 -> 32, 20 epochs with decay from epoch 10.
RunConfig default_run_config();

/// "table1-desk" (the default two-stage run) or "highres-desk" (16 -> 32 -> 64).
RunConfig preset_config(std::string_view name);
std::vector<std::string> preset_names();

/// Applies the keys present in `j` on top of `base`. Unknown keys and wrong
/// types are ConfigErrors.
RunConfig apply_config_json(const nlohmann::json& j, RunConfig base);
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base);

/// Complete document: every field, defaults applied.
nlohmann::json to_json(const RunConfig& cfg);

}  // namespace scan
