#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "scan/losses.hpp"
#include "scan/nn.hpp"

namespace scan {

enum class FusionVariant { lpw, uw, luw, rf };

std::string_view to_string(FusionVariant v);
FusionVariant parse_fusion_variant(std::string_view name);

/// X2Y runs the G networks and is judged by D_Y; Y2X runs F and D_X.
enum class Direction { x2y, y2x };

std::string_view to_string(Direction d);
Direction parse_direction(std::string_view name);

struct StageConfig {
  int resolution = 16;
  int base_filters = 16;
  int n_res_blocks = 3;
  FusionVariant fusion_variant = FusionVariant::lpw;
  /// Refinement input is upsampled previous output ⊕ stage input.
  bool skip = true;
  /// Blend with the upsampled previous output; off means the refinement is the output.
  bool fusion = true;
  int fusion_hidden_filters = 8;
  int disc_base_filters = 16;
  int disc_n_layers = 3;

  bool operator==(const StageConfig&) const = default;
};

/// Checks every stage and that resolutions double from one stage to the next.
void validate_stage_configs(const std::vector<StageConfig>& stages);

/// One resolution level. Stage 1 has no fusion block and no skip concat.
struct Stage {
  int index = 1;
  StageConfig cfg;
  std::unique_ptr<TranslationNet> G;  // X -> Y
  std::unique_ptr<TranslationNet> F;  // Y -> X
  std::unique_ptr<PatchDiscriminator> D_X;
  std::unique_ptr<PatchDiscriminator> D_Y;
  std::unique_ptr<FusionBlock> G_fusion;  // LPW only
  std::unique_ptr<FusionBlock> F_fusion;
  Tensor G_theta;  // LUW only, shape (1,1,1,1)
  Tensor F_theta;
  /// Scheduled UW weight in [0, 1].
  real uw_weight = 0.0f;

  bool is_refinement() const { return index > 1; }
  bool uses_fusion() const { return is_refinement() && cfg.fusion; }
  const TranslationNet& generator(Direction d) const { return d == Direction::x2y ? *G : *F; }
  const PatchDiscriminator& discriminator(Direction d) const { return d == Direction::x2y ? *D_Y : *D_X; }
  std::string prefix() const { return "stage" + std::to_string(index); }
};

class Pipeline {
 public:
  Pipeline(std::vector<StageConfig> stages, std::uint64_t seed);
  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  int num_stages() const { return static_cast<int>(stages_.size()); }
  /// 1-based.
  Stage& stage(int k);
  const Stage& stage(int k) const;
  int resolution(int k) const { return stage(k).cfg.resolution; }
  int top_resolution() const { return resolution(num_stages()); }
  std::uint64_t seed() const { return seed_; }
  std::vector<StageConfig> configs() const;

  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

 private:
  std::uint64_t seed_;
  ParameterStore params_;
  std::vector<Stage> stages_;
};

struct RefineOutput {
  Tensor upsampled;   // ŷ1 = nearest_up_2x(y_prev)
  Tensor refinement;  // ŷ2 = G_k^T(t_in)
  Tensor alpha;       // (N,1,H,W) blend weight; undefined for RF or fusion off
  Tensor output;
};

/// One refinement stage on a full-resolution input and the previous stage's
/// output at half resolution.
RefineOutput refine_forward(const Stage& stage, Direction d, const Tensor& x_full, const Tensor& y_prev);

struct StageOutputs {
  std::vector<Tensor> outputs;  // outputs[j-1] at stage j's resolution
  std::vector<Tensor> alphas;   // alphas[j-2] for refinement stage j (may be undefined)
};

/// Runs stages 1..k on `input`, given at stage k's resolution; earlier
/// stages see area-downsampled copies.
StageOutputs run_stages(const Pipeline& p, Direction d, const Tensor& input, int k);

struct Translation {
  Tensor output;
  std::vector<Tensor> intermediates;  // stage outputs below the top stage
  std::vector<Tensor> alphas;
};

/// Full-pipeline inference; `image` must be at the top stage's resolution.
Translation translate(const Pipeline& p, Direction d, const Tensor& image);

/// Area-downsamples `x` by powers of two down to `resolution`.
Tensor downsample_to(const Tensor& x, int resolution);

// --- objectives -------------------------------------------------------------

struct GeneratorObjective {
  Tensor loss;         // adv + lambda * cycle
  Tensor adv_term;     // sum of generator adversarial terms
  Tensor cycle_term;   // sum of unweighted cycle l1 terms
};

struct DiscriminatorObjective {
  Tensor loss;        // log terms + lambda_gp * penalties
  Tensor log_term;
  Tensor gp_term;     // lambda_gp * penalties, as it enters the loss
};

/// Losses of the composition up to stage k, for batches at stage k's
/// resolution. With `every_stage`, the terms of every stage 1..k are summed,
/// each at its own resolution.
GeneratorObjective generator_objective(const Pipeline& p, int k, const Tensor& x, const Tensor& y,
                                       const LossWeights& w, GeneratorLossForm form, bool every_stage = false);
/// Fakes are generated without recording, so only discriminators get gradients.
DiscriminatorObjective discriminator_objective(const Pipeline& p, int k, const Tensor& x, const Tensor& y,
                                               const LossWeights& w, bool every_stage = false);

struct StageObjective {
  Tensor loss_G;
  Tensor loss_D;
};

/// Both halves of the minimax objective at stage k.
StageObjective stage_objective(const Pipeline& p, int k, const Tensor& x, const Tensor& y, const LossWeights& w,
                               GeneratorLossForm form = GeneratorLossForm::non_saturating);

}  // namespace scan
