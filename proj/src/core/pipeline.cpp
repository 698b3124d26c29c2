#include "scan/pipeline.hpp"

#include <cctype>

#include "scan/error.hpp"
#include "scan/ops.hpp"

namespace scan {

std::string_view to_string(FusionVariant v) {
  switch (v) {
    case FusionVariant::lpw: return "LPW";
    case FusionVariant::uw: return "UW";
    case FusionVariant::luw: return "LUW";
    case FusionVariant::rf: return "RF";
  }
  return "?";
}

namespace {

std::string upper(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

FusionVariant parse_fusion_variant(std::string_view raw) {
  const std::string name = upper(raw);
  if (name == "LPW") return FusionVariant::lpw;
  if (name == "UW") return FusionVariant::uw;
  if (name == "LUW") return FusionVariant::luw;
  if (name == "RF") return FusionVariant::rf;
  throw ConfigError("unknown fusion variant '" + std::string(raw) + "' (expected LPW, UW, LUW or RF)");
}

std::string_view to_string(Direction d) { return d == Direction::x2y ? "X2Y" : "Y2X"; }

Direction parse_direction(std::string_view raw) {
  const std::string name = upper(raw);
  if (name == "X2Y") return Direction::x2y;
  if (name == "Y2X") return Direction::y2x;
  throw ConfigError("unknown direction '" + std::string(raw) + "' (expected X2Y or Y2X)");
}

void validate_stage_configs(const std::vector<StageConfig>& stages) {
  if (stages.empty()) throw ConfigError("pipeline needs at least one stage");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const StageConfig& s = stages[i];
    const std::string where = "stage " + std::to_string(i + 1) + ": ";
    if (s.resolution < 8 || s.resolution % 4 != 0) {
      throw ConfigError(where + "resolution must be a multiple of 4 and at least 8");
    }
    if (i > 0 && s.resolution != 2 * stages[i - 1].resolution) {
      throw ConfigError(where + "resolution must double the previous stage's (" +
                        std::to_string(stages[i - 1].resolution) + " -> " + std::to_string(s.resolution) + ")");
    }
    if (s.base_filters < 1 || s.n_res_blocks < 0 || s.fusion_hidden_filters < 1 || s.disc_base_filters < 1 ||
        s.disc_n_layers < 1) {
      throw ConfigError(where + "filter counts must be positive and n_res_blocks non-negative");
    }
  }
}

Pipeline::Pipeline(std::vector<StageConfig> configs, std::uint64_t seed) : seed_(seed) {
  validate_stage_configs(configs);
  stages_.reserve(configs.size());
  for (std::size_t i = 0; i < configs.size(); ++i) {
    Stage st;
    st.index = static_cast<int>(i) + 1;
    st.cfg = configs[i];
    const std::string pre = st.prefix();
    TranslationNetConfig tcfg;
    tcfg.base_filters = st.cfg.base_filters;
    tcfg.n_res_blocks = st.cfg.n_res_blocks;
    tcfg.in_channels = st.is_refinement() && st.cfg.skip ? 6 : 3;
    st.G = std::make_unique<TranslationNet>(tcfg, derive_seed(seed, pre + ".G"), params_, pre + ".G");
    st.F = std::make_unique<TranslationNet>(tcfg, derive_seed(seed, pre + ".F"), params_, pre + ".F");
    DiscriminatorConfig dcfg;
    dcfg.base_filters = st.cfg.disc_base_filters;
    dcfg.n_layers = st.cfg.disc_n_layers;
    st.D_X = std::make_unique<PatchDiscriminator>(dcfg, derive_seed(seed, pre + ".D_X"), params_, pre + ".D_X");
    st.D_Y = std::make_unique<PatchDiscriminator>(dcfg, derive_seed(seed, pre + ".D_Y"), params_, pre + ".D_Y");
    if (st.uses_fusion()) {
      if (st.cfg.fusion_variant == FusionVariant::lpw) {
        FusionBlockConfig fcfg;
        fcfg.hidden_filters = st.cfg.fusion_hidden_filters;
        st.G_fusion = std::make_unique<FusionBlock>(fcfg, derive_seed(seed, pre + ".G_fusion"), params_,
                                                    pre + ".G_fusion");
        st.F_fusion = std::make_unique<FusionBlock>(fcfg, derive_seed(seed, pre + ".F_fusion"), params_,
                                                    pre + ".F_fusion");
      } else if (st.cfg.fusion_variant == FusionVariant::luw) {
        st.G_theta = params_.add(pre + ".G_luw.theta", Tensor(Shape{1, 1, 1, 1}, 0.0f));
        st.F_theta = params_.add(pre + ".F_luw.theta", Tensor(Shape{1, 1, 1, 1}, 0.0f));
        st.G_theta.requires_grad_(true);
        st.F_theta.requires_grad_(true);
      }
    }
    stages_.push_back(std::move(st));
  }
}

Stage& Pipeline::stage(int k) {
  if (k < 1 || k > num_stages()) throw UsageError("pipeline has no stage " + std::to_string(k));
  return stages_[static_cast<std::size_t>(k - 1)];
}

const Stage& Pipeline::stage(int k) const {
  if (k < 1 || k > num_stages()) throw UsageError("pipeline has no stage " + std::to_string(k));
  return stages_[static_cast<std::size_t>(k - 1)];
}

std::vector<StageConfig> Pipeline::configs() const {
  std::vector<StageConfig> out;
  for (const Stage& s : stages_) out.push_back(s.cfg);
  return out;
}

RefineOutput refine_forward(const Stage& stage, Direction d, const Tensor& x_full, const Tensor& y_prev) {
  if (!stage.is_refinement()) throw UsageError("refine_forward needs a refinement stage");
  const Shape& xs = x_full.shape();
  const Shape& ys = y_prev.shape();
  if (xs.h != 2 * ys.h || xs.w != 2 * ys.w || xs.n != ys.n) {
    throw UsageError("refine_forward: previous output " + ys.str() + " is not half of stage input " + xs.str());
  }
  RefineOutput r;
  r.upsampled = upsample_nearest2x(y_prev);
  const Tensor t_in = stage.cfg.skip ? concat_channels(r.upsampled, x_full) : r.upsampled;
  r.refinement = stage.generator(d)(t_in);
  if (!stage.cfg.fusion) {
    r.output = r.refinement;
    return r;
  }
  const Shape alpha_shape{xs.n, 1, xs.h, xs.w};
  switch (stage.cfg.fusion_variant) {
    case FusionVariant::lpw: {
      const FusionBlock& block = d == Direction::x2y ? *stage.G_fusion : *stage.F_fusion;
      FusionResult f = forward_fusion(x_full, r.upsampled, r.refinement, block);
      r.alpha = f.alpha;
      r.output = f.fused;
      break;
    }
    case FusionVariant::uw:
      r.alpha = Tensor(alpha_shape, stage.uw_weight);
      r.output = fuse(r.upsampled, r.refinement, r.alpha);
      break;
    case FusionVariant::luw: {
      const Tensor w = sigmoid(d == Direction::x2y ? stage.G_theta : stage.F_theta);
      r.output = fuse(r.upsampled, r.refinement, w);
      r.alpha = expand(w, alpha_shape);
      break;
    }
    case FusionVariant::rf:
      r.output = clamp(add(r.upsampled, r.refinement), -1.0f, 1.0f);
      break;
  }
  return r;
}

Tensor downsample_to(const Tensor& x, int resolution) {
  Tensor out = x;
  while (out.shape().h > resolution) out = downsample_area2x(out);
  if (out.shape().h != resolution) {
    throw UsageError("cannot area-downsample " + x.shape().str() + " to " + std::to_string(resolution));
  }
  return out;
}

namespace {

void require_resolution(const Tensor& t, int resolution, const char* what) {
  const Shape& s = t.shape();
  if (s.h != resolution || s.w != resolution || s.c != 3) {
    throw UsageError(std::string(what) + " must be (N,3," + std::to_string(resolution) + "," +
                     std::to_string(resolution) + "), got " + s.str());
  }
}

}  // namespace

StageOutputs run_stages(const Pipeline& p, Direction d, const Tensor& input, int k) {
  p.stage(k);
  require_resolution(input, p.resolution(k), "stage input");
  std::vector<Tensor> inputs(static_cast<std::size_t>(k));
  inputs[static_cast<std::size_t>(k - 1)] = input;
  for (int j = k - 1; j >= 1; --j) inputs[static_cast<std::size_t>(j - 1)] = downsample_area2x(inputs[static_cast<std::size_t>(j)]);
  StageOutputs out;
  out.outputs.push_back(p.stage(1).generator(d)(inputs[0]));
  for (int j = 2; j <= k; ++j) {
    RefineOutput r = refine_forward(p.stage(j), d, inputs[static_cast<std::size_t>(j - 1)], out.outputs.back());
    out.outputs.push_back(r.output);
    out.alphas.push_back(r.alpha);
  }
  return out;
}

Translation translate(const Pipeline& p, Direction d, const Tensor& image) {
  const int k = p.num_stages();
  if (image.shape().h != p.top_resolution() || image.shape().w != p.top_resolution()) {
    throw UsageError("translate expects " + std::to_string(p.top_resolution()) + "x" +
                     std::to_string(p.top_resolution()) + " input, got " + image.shape().str());
  }
  StageOutputs s = run_stages(p, d, image, k);
  Translation t;
  t.output = s.outputs.back();
  t.intermediates.assign(s.outputs.begin(), s.outputs.end() - 1);
  t.alphas = std::move(s.alphas);
  return t;
}

namespace {

NetFn score_fn(const PatchDiscriminator& D) {
  return [&D](const Tensor& t) { return D.forward(t); };
}

std::vector<int> supervised_stages(int k, bool every_stage) {
  std::vector<int> out;
  for (int j = every_stage ? 1 : k; j <= k; ++j) out.push_back(j);
  return out;
}

}  // namespace

GeneratorObjective generator_objective(const Pipeline& p, int k, const Tensor& x, const Tensor& y,
                                       const LossWeights& w, GeneratorLossForm form, bool every_stage) {
  p.stage(k);
  require_resolution(x, p.resolution(k), "X batch");
  require_resolution(y, p.resolution(k), "Y batch");
  const StageOutputs fake_y = run_stages(p, Direction::x2y, x, k);
  const StageOutputs fake_x = run_stages(p, Direction::y2x, y, k);
  Tensor adv = Tensor::scalar(0.0f);
  Tensor cyc = Tensor::scalar(0.0f);
  for (int j : supervised_stages(k, every_stage)) {
    const Stage& st = p.stage(j);
    const Tensor& fy = fake_y.outputs[static_cast<std::size_t>(j - 1)];
    const Tensor& fx = fake_x.outputs[static_cast<std::size_t>(j - 1)];
    adv = add(adv, adversarial_loss_G(score_fn(*st.D_Y), fy, form));
    adv = add(adv, adversarial_loss_G(score_fn(*st.D_X), fx, form));
    const Tensor rec_x = run_stages(p, Direction::y2x, fy, j).outputs.back();
    const Tensor rec_y = run_stages(p, Direction::x2y, fx, j).outputs.back();
    cyc = add(cyc, l1_mean(downsample_to(x, st.cfg.resolution), rec_x));
    cyc = add(cyc, l1_mean(downsample_to(y, st.cfg.resolution), rec_y));
  }
  GeneratorObjective g;
  g.adv_term = adv;
  g.cycle_term = cyc;
  g.loss = add(adv, mul_scalar(cyc, w.lambda_cycle));
  return g;
}

DiscriminatorObjective discriminator_objective(const Pipeline& p, int k, const Tensor& x, const Tensor& y,
                                               const LossWeights& w, bool every_stage) {
  p.stage(k);
  require_resolution(x, p.resolution(k), "X batch");
  require_resolution(y, p.resolution(k), "Y batch");
  StageOutputs fake_y;
  StageOutputs fake_x;
  {
    NoGradScope no_grad;
    fake_y = run_stages(p, Direction::x2y, x, k);
    fake_x = run_stages(p, Direction::y2x, y, k);
  }
  Tensor log_term = Tensor::scalar(0.0f);
  Tensor penalty = Tensor::scalar(0.0f);
  for (int j : supervised_stages(k, every_stage)) {
    const Stage& st = p.stage(j);
    const int res = st.cfg.resolution;
    const DiscriminatorLoss dy =
        adversarial_loss_D(score_fn(*st.D_Y), downsample_to(y, res), fake_y.outputs[static_cast<std::size_t>(j - 1)], w.lambda_gp);
    const DiscriminatorLoss dx =
        adversarial_loss_D(score_fn(*st.D_X), downsample_to(x, res), fake_x.outputs[static_cast<std::size_t>(j - 1)], w.lambda_gp);
    log_term = add(log_term, add(dy.log_term, dx.log_term));
    penalty = add(penalty, add(dy.penalty, dx.penalty));
  }
  DiscriminatorObjective d;
  d.log_term = log_term;
  d.gp_term = mul_scalar(penalty, w.lambda_gp);
  d.loss = add(log_term, d.gp_term);
  return d;
}

StageObjective stage_objective(const Pipeline& p, int k, const Tensor& x, const Tensor& y, const LossWeights& w,
                               GeneratorLossForm form) {
  StageObjective o;
  o.loss_G = generator_objective(p, k, x, y, w, form).loss;
  o.loss_D = discriminator_objective(p, k, x, y, w).loss;
  return o;
}

}  // namespace scan
