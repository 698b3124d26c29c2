#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "scan/losses.hpp"
#include "scan/pipeline.hpp"

namespace scan {

enum class StageSchedule { sequential_frozen, fine_tune_previous, from_scratch_joint };

std::string_view to_string(StageSchedule s);
StageSchedule parse_schedule(std::string_view name);
std::string_view to_string(GeneratorLossForm f);
GeneratorLossForm parse_generator_loss_form(std::string_view name);

struct TrainConfig {
  int epochs = 20;
  int decay_start_epoch = 10;
  real lr0 = 2e-4f;
  std::uint64_t seed = 0;
  /// 0 uses the size of the larger training set.
  int iterations_per_epoch = 0;
  StageSchedule schedule = StageSchedule::sequential_frozen;
  GeneratorLossForm generator_loss_form = GeneratorLossForm::non_saturating;
  real beta1 = 0.5f;
  real beta2 = 0.999f;

  void validate() const;
};

/// lr0 up to decay_start_epoch, then linear to zero at `epochs`.
real lr_schedule(int epoch, const TrainConfig& cfg);

/// Unpaired training images at the trained stage's resolution, (1,3,R,R) each.
struct TrainingData {
  std::vector<Tensor> x;
  std::vector<Tensor> y;
};

struct TraceRow {
  std::int64_t iter = 0;
  double loss_G = 0.0;
  double loss_D = 0.0;
  double cycle_term = 0.0;  // unweighted sum of cycle l1 terms
  double adv_term = 0.0;    // sum of generator adversarial terms
  double gp_term = 0.0;     // lambda_gp * penalties, as in loss_D
};

inline constexpr const char* kTraceHeader = "iter,loss_G,loss_D,cycle_term,adv_term,gp_term";
std::string format_trace_row(const TraceRow& row);

struct EpochSummary {
  int epoch = 0;
  double loss_G = 0.0;
  double loss_D = 0.0;
  double cycle_term = 0.0;
  double adv_term = 0.0;
  double gp_term = 0.0;
};

/// Where a run stands; saved alongside parameters in checkpoints.
struct TrainingState {
  int epoch = 0;
  std::int64_t iteration = 0;
  std::string rng_state;
  std::vector<EpochSummary> metric_log;
  std::vector<int> trained_stages;
};

struct TrainHooks {
  std::function<void(const TraceRow&)> on_iteration;
  /// Called after each completed epoch with the state at that point.
  std::function<void(const Pipeline&, const TrainingState&)> on_epoch_end;
};

struct TrainResult {
  std::vector<TraceRow> trace;
  TrainingState state;
};

/// Trains stage k (and, per the schedule, earlier stages) with one
/// discriminator step then one generator step per iteration, batch size 1.
/// Under sequential_frozen, every stage below k keeps its parameters.
TrainResult train_stage(Pipeline& p, int k, const TrainingData& data, const TrainConfig& cfg, const LossWeights& w,
                        const TrainHooks& hooks = {}, TrainingState start = {});

/// Parameter names updated by the generator and discriminator optimisers.
struct TrainableSets {
  std::vector<std::string> generator;
  std::vector<std::string> discriminator;
};
TrainableSets trainable_sets(const Pipeline& p, int k, StageSchedule schedule);

}  // namespace scan
