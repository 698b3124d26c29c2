#include "scan/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "scan/error.hpp"
#include "scan/ops.hpp"
#include "scan/optim.hpp"

namespace scan {

std::string_view to_string(StageSchedule s) {
  switch (s) {
    case StageSchedule::sequential_frozen: return "sequential_frozen";
    case StageSchedule::fine_tune_previous: return "fine_tune_previous";
    case StageSchedule::from_scratch_joint: return "from_scratch_joint";
  }
  return "?";
}

StageSchedule parse_schedule(std::string_view name) {
  if (name == "sequential_frozen") return StageSchedule::sequential_frozen;
  if (name == "fine_tune_previous") return StageSchedule::fine_tune_previous;
  if (name == "from_scratch_joint") return StageSchedule::from_scratch_joint;
  throw ConfigError("unknown schedule '" + std::string(name) +
                    "' (expected sequential_frozen, fine_tune_previous or from_scratch_joint)");
}

std::string_view to_string(GeneratorLossForm f) {
  return f == GeneratorLossForm::non_saturating ? "non_saturating" : "literal_eq1";
}

GeneratorLossForm parse_generator_loss_form(std::string_view name) {
  if (name == "non_saturating") return GeneratorLossForm::non_saturating;
  if (name == "literal_eq1") return GeneratorLossForm::literal_eq1;
  throw ConfigError("unknown generator loss form '" + std::string(name) + "' (expected non_saturating or literal_eq1)");
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (epochs > 0 && (decay_start_epoch <= 0 || decay_start_epoch > epochs)) {
    throw ConfigError("train.decay_start_epoch must satisfy 0 < decay_start_epoch <= epochs");
  }
  if (!(lr0 >= 0.0f)) throw ConfigError("train.lr0 must be >= 0");
  if (iterations_per_epoch < 0) throw ConfigError("train.iterations_per_epoch must be >= 0");
  if (!(beta1 >= 0.0f && beta1 < 1.0f) || !(beta2 >= 0.0f && beta2 < 1.0f)) {
    throw ConfigError("train.beta1/beta2 must lie in [0, 1)");
  }
}

real lr_schedule(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch > cfg.epochs) {
    throw UsageError("lr_schedule: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs) + "]");
  }
  if (epoch <= cfg.decay_start_epoch) return cfg.lr0;
  if (cfg.epochs == cfg.decay_start_epoch) return cfg.lr0;
  return cfg.lr0 * static_cast<real>(cfg.epochs - epoch) / static_cast<real>(cfg.epochs - cfg.decay_start_epoch);
}

std::string format_trace_row(const TraceRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g,%.9g,%.9g", static_cast<long long>(row.iter), row.loss_G,
                row.loss_D, row.cycle_term, row.adv_term, row.gp_term);
  return buf;
}

namespace {

// "stage12.D_X.block0.weight" -> {12, "D_X"}
std::pair<int, std::string> split_name(const std::string& name) {
  const std::size_t dot = name.find('.');
  const std::size_t dot2 = name.find('.', dot + 1);
  if (name.rfind("stage", 0) != 0 || dot == std::string::npos || dot2 == std::string::npos) {
    throw UsageError("unexpected parameter name " + name);
  }
  return {std::stoi(name.substr(5, dot - 5)), name.substr(dot + 1, dot2 - dot - 1)};
}

bool is_discriminator(const std::string& net) { return net == "D_X" || net == "D_Y"; }

struct RequiresGradGuard {
  Pipeline& p;
  ~RequiresGradGuard() {
    for (const auto& [name, t] : p.params().entries()) Tensor(t).requires_grad_(true);
  }
};

std::vector<std::pair<std::string, Tensor>> lookup(const ParameterStore& store, const std::vector<std::string>& names) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& n : names) out.emplace_back(n, store.at(n));
  return out;
}

void set_requires_grad(const std::vector<std::pair<std::string, Tensor>>& params, bool on) {
  for (const auto& [name, t] : params) Tensor(t).requires_grad_(on);
}

class Sampler {
 public:
  Sampler(std::size_t n, std::mt19937_64& rng) : order_(n), rng_(rng) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
  }
  std::size_t next() {
    if (cursor_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    return order_[cursor_++];
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::mt19937_64& rng_;
};

}  // namespace

TrainableSets trainable_sets(const Pipeline& p, int k, StageSchedule schedule) {
  p.stage(k);
  const int first_gen = schedule == StageSchedule::sequential_frozen ? k : 1;
  const int first_disc = schedule == StageSchedule::from_scratch_joint ? 1 : k;
  TrainableSets sets;
  for (const auto& [name, t] : p.params().entries()) {
    const auto [stage, net] = split_name(name);
    if (stage > k) continue;
    if (is_discriminator(net)) {
      if (stage >= first_disc) sets.discriminator.push_back(name);
    } else if (stage >= first_gen) {
      sets.generator.push_back(name);
    }
  }
  return sets;
}

TrainResult train_stage(Pipeline& p, int k, const TrainingData& data, const TrainConfig& cfg, const LossWeights& w,
                        const TrainHooks& hooks, TrainingState start) {
  cfg.validate();
  w.validate();
  p.stage(k);
  if (data.x.empty() || data.y.empty()) throw IoError("training data for stage " + std::to_string(k) + " is empty");
  const int res = p.resolution(k);
  for (const auto* set : {&data.x, &data.y}) {
    for (const Tensor& t : *set) {
      if (t.shape() != Shape{1, 3, res, res}) {
        throw UsageError("stage " + std::to_string(k) + " trains on (1,3," + std::to_string(res) + "," +
                         std::to_string(res) + ") samples, got " + t.shape().str());
      }
    }
  }

  const bool joint = cfg.schedule == StageSchedule::from_scratch_joint;
  const TrainableSets sets = trainable_sets(p, k, cfg.schedule);
  RequiresGradGuard guard{p};
  for (const auto& [name, t] : p.params().entries()) Tensor(t).requires_grad_(false);
  const auto gen_params = lookup(p.params(), sets.generator);
  const auto disc_params = lookup(p.params(), sets.discriminator);
  set_requires_grad(gen_params, true);
  set_requires_grad(disc_params, true);
  AdamOptions opts;
  opts.beta1 = cfg.beta1;
  opts.beta2 = cfg.beta2;
  Adam gen_opt(gen_params, opts);
  Adam disc_opt(disc_params, opts);

  std::set<int> trained;
  for (const auto& [name, t] : gen_params) trained.insert(split_name(name).first);
  std::vector<Stage*> uw_stages;
  for (int j : trained) {
    Stage& st = p.stage(j);
    if (st.uses_fusion() && st.cfg.fusion_variant == FusionVariant::uw) uw_stages.push_back(&st);
  }

  std::mt19937_64 rng(derive_seed(cfg.seed, "train.stage" + std::to_string(k)));
  Sampler sample_x(data.x.size(), rng);
  Sampler sample_y(data.y.size(), rng);
  const int ipe = cfg.iterations_per_epoch > 0 ? cfg.iterations_per_epoch
                                               : static_cast<int>(std::max(data.x.size(), data.y.size()));

  TrainResult result;
  result.state = std::move(start);
  result.state.epoch = 0;
  result.state.iteration = 0;
  result.state.metric_log.clear();
  auto& done = result.state.trained_stages;
  for (int j : trained) {
    if (std::find(done.begin(), done.end(), j) == done.end()) done.push_back(j);
  }
  std::sort(done.begin(), done.end());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const real lr = lr_schedule(epoch, cfg);
    EpochSummary summary;
    summary.epoch = epoch + 1;
    for (int it = 0; it < ipe; ++it) {
      const real progress = (static_cast<real>(epoch) + static_cast<real>(it) / static_cast<real>(ipe)) /
                             static_cast<real>(cfg.epochs);
      for (Stage* st : uw_stages) st->uw_weight = std::clamp(progress, real(0), real(1));
      const Tensor& x = data.x[sample_x.next()];
      const Tensor& y = data.y[sample_y.next()];
      TraceRow row;
      row.iter = result.state.iteration;
      try {
        disc_opt.zero_grad();
        {
          Tape tape;
          TapeScope scope(tape);
          const DiscriminatorObjective d = discriminator_objective(p, k, x, y, w, joint);
          backward(d.loss, tape);
          row.loss_D = d.loss.item();
          row.gp_term = d.gp_term.item();
        }
        disc_opt.step(lr);

        set_requires_grad(disc_params, false);
        gen_opt.zero_grad();
        {
          Tape tape;
          TapeScope scope(tape);
          const GeneratorObjective g = generator_objective(p, k, x, y, w, cfg.generator_loss_form, joint);
          backward(g.loss, tape);
          row.loss_G = g.loss.item();
          row.cycle_term = g.cycle_term.item();
          row.adv_term = g.adv_term.item();
        }
        gen_opt.step(lr);
        set_requires_grad(disc_params, true);
      } catch (const NumericError& e) {
        throw NumericError("training aborted at iteration " + std::to_string(row.iter) + " (stage " +
                           std::to_string(k) + ", epoch " + std::to_string(epoch + 1) + "): " + e.what());
      }
      summary.loss_G += row.loss_G / ipe;
      summary.loss_D += row.loss_D / ipe;
      summary.cycle_term += row.cycle_term / ipe;
      summary.adv_term += row.adv_term / ipe;
      summary.gp_term += row.gp_term / ipe;
      result.trace.push_back(row);
      ++result.state.iteration;
      if (hooks.on_iteration) hooks.on_iteration(row);
    }
    result.state.epoch = epoch + 1;
    result.state.metric_log.push_back(summary);
    for (Stage* st : uw_stages) st->uw_weight = static_cast<real>(epoch + 1) / static_cast<real>(cfg.epochs);
    std::ostringstream rng_state;
    rng_state << rng;
    result.state.rng_state = rng_state.str();
    if (hooks.on_epoch_end) hooks.on_epoch_end(p, result.state);
  }
  if (cfg.epochs > 0) {
    for (Stage* st : uw_stages) st->uw_weight = 1.0f;
  }
  std::ostringstream rng_state;
  rng_state << rng;
  result.state.rng_state = rng_state.str();
  return result;
}

}  // namespace scan
