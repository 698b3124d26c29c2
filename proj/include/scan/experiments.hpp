#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "scan/checkpoint.hpp"
#include "scan/metrics.hpp"
#include "scan/run_config.hpp"
#include "scan/toy_data.hpp"

namespace scan {

// Training output layout:
//   <out>/stage<k>/epoch_001 ... epoch_NNN, final   (checkpoints)
//   <out>/stage<k>/trace.csv, effective_config.json
std::filesystem::path stage_dir(const std::filesystem::path& out, int k);
std::filesystem::path epoch_checkpoint(const std::filesystem::path& stage_dir, int epoch);
std::filesystem::path final_checkpoint(const std::filesystem::path& stage_dir);

struct StageRunOptions {
  int stage = 1;
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;
  /// Checkpoint holding stages 1..k-1; defaults to out_dir/stage<k-1>/final.
  std::optional<std::filesystem::path> previous;
  bool force = false;
  bool save_epoch_checkpoints = true;
};

struct StageRunResult {
  std::filesystem::path dir;
  TrainResult train;
};

/// Trains stage `opts.stage` of `cfg.pipeline` (all stages up to it under
/// from_scratch_joint). Other schedules need the previous stages' checkpoint,
/// whose stage configs must match the config; a missing one is a UsageError
/// naming the stage.
StageRunResult run_training(const RunConfig& cfg, const StageRunOptions& opts, std::ostream* log = nullptr);

/// pipeline: the full translation. stage1_upsampled: the stage-1 output
/// nearest-upsampled to the top resolution. passthrough: the input itself
/// (plumbing check).
enum class EvalSource { pipeline, stage1_upsampled, passthrough };

struct EvalResult {
  MetricReport report;
  /// Fusion weight maps of every refinement stage, over all inputs.
  std::vector<Tensor> alphas;
};

/// Translates every pair's source-domain image in direction `d` and scores it
/// against the aligned target. Photo -> label outputs also get segmentation
/// scores. `p` may be null only for passthrough.
EvalResult evaluate_pairs(const Pipeline* p, const std::vector<EvalPair>& pairs, Direction d, EvalSource source);

/// Eval pairs at the top resolution of `p`'s ladder.
std::vector<EvalPair> eval_pairs_for(const std::filesystem::path& data_dir, int resolution);

struct AblationOptions {
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;
  bool variant_grid = true;  // full, no_skip, no_fusion, no_skip_fusion
  bool fusion_grid = true;   // lpw, uw, luw, rf
  /// Restrict the variant grid (names as above); empty keeps all.
  std::vector<std::string> variants;
  bool force = false;
};

struct AblationRow {
  std::string grid;     // "variant" or "fusion"
  std::string variant;
  std::string seed;     // a seed, or "median"
  double psnr = 0.0;
  double ssim = 0.0;
  std::optional<double> pixel_acc;
  std::optional<double> class_acc;
  std::optional<double> iou;
  std::optional<double> alpha_mean;
};

/// Stage 1 is trained once per seed and shared; each variant retrains stage 2
/// on top of it. Rows are grouped by grid and variant, seeds in config order,
/// followed by one median row per variant.
std::vector<AblationRow> run_ablation(const RunConfig& cfg, const AblationOptions& opts, std::ostream* log = nullptr);

/// Stage-2 configuration of a named ablation variant.
StageConfig ablation_stage(const StageConfig& full, const std::string& variant);

std::string ablation_csv(const std::vector<AblationRow>& rows);

double median(std::vector<double> values);

struct EpochHistogram {
  int epoch = 0;
  FusionHistogram histogram;
};

/// Histograms of the fusion weights produced by each listed epoch checkpoint
/// of a stage run. Empty `epochs` uses every epoch checkpoint present.
std::vector<EpochHistogram> fusion_histograms(const std::filesystem::path& stage_dir, std::vector<int> epochs,
                                              const std::vector<EvalPair>& pairs, Direction d, int bins);

void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace scan
