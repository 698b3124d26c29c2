#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>

#include "scan/pipeline.hpp"
#include "scan/trainer.hpp"

namespace scan {

inline constexpr int kCheckpointFormatVersion = 1;

/// Writes `dir/manifest.json` and `dir/weights.bin` (little-endian float32 in
/// manifest order). Creates `dir` if needed.
void save_checkpoint(const Pipeline& p, const TrainingState& state, const std::filesystem::path& dir);

struct LoadedCheckpoint {
  std::unique_ptr<Pipeline> pipeline;
  TrainingState state;
};

/// Throws ManifestError (unreadable or inconsistent manifest, naming the
/// offending parameter), TruncatedError (short weights file) or IoError.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

/// Hex SHA-256 over the names, shapes and values of every parameter whose
/// name starts with `prefix`.
std::string parameter_digest(const ParameterStore& store, std::string_view prefix = "");

/// Copies values (and the UW weight) of stages 1..up_to from `from` into `to`.
/// Stage configs must match.
void copy_stages(const Pipeline& from, Pipeline& to, int up_to);

}  // namespace scan
