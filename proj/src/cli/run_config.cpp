#include "scan/run_config.hpp"

#include <fstream>
#include <set>

#include "scan/error.hpp"

namespace scan {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  const std::set<std::string> keys(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!keys.contains(key)) throw ConfigError("unknown config key '" + key + "' in " + section);
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + std::string(key) + "' in " + section + " has the wrong type");
  }
}

template <class Parse, class Out>
void read_enum(const json& j, const char* key, Out& out, const std::string& section, Parse parse) {
  std::string name;
  read(j, key, name, section);
  if (!name.empty()) out = parse(name);
}

StageConfig stage_from(const json& j, StageConfig s, const std::string& where) {
  reject_unknown(j, where,
                 {"resolution", "base_filters", "n_res_blocks", "fusion_variant", "skip", "fusion",
                  "fusion_hidden_filters", "disc_base_filters", "disc_n_layers"});
  read(j, "resolution", s.resolution, where);
  read(j, "base_filters", s.base_filters, where);
  read(j, "n_res_blocks", s.n_res_blocks, where);
  read_enum(j, "fusion_variant", s.fusion_variant, where, parse_fusion_variant);
  read(j, "skip", s.skip, where);
  read(j, "fusion", s.fusion, where);
  read(j, "fusion_hidden_filters", s.fusion_hidden_filters, where);
  read(j, "disc_base_filters", s.disc_base_filters, where);
  read(j, "disc_n_layers", s.disc_n_layers, where);
  return s;
}

}  // namespace

StageConfig desk_stage(int resolution) {
  StageConfig s;
  s.resolution = resolution;
  s.base_filters = 8;
  s.n_res_blocks = 2;
  s.fusion_hidden_filters = 8;
  s.disc_base_filters = 8;
  s.disc_n_layers = 3;
  return s;
}

RunConfig default_run_config() {
  RunConfig c;
  c.pipeline = {desk_stage(16), desk_stage(32)};
  c.train.epochs = 20;
  c.train.decay_start_epoch = 10;
  return c;
}

std::vector<std::string> preset_names() { return {"table1-desk", "highres-desk"}; }

RunConfig preset_config(std::string_view name) {
  RunConfig c = default_run_config();
  if (name == "table1-desk") return c;
  if (name == "highres-desk") {
    c.pipeline.push_back(desk_stage(64));
    return c;
  }
  throw ConfigError("unknown preset '" + std::string(name) + "' (expected table1-desk or highres-desk)");
}

void RunConfig::validate() const {
  if (dataset.n_train_per_domain < 1 || dataset.n_eval < 1) throw ConfigError("dataset counts must be at least 1");
  if (dataset.resolutions.empty()) throw ConfigError("dataset.resolutions must not be empty");
  for (int r : dataset.resolutions) {
    if (r < 1) throw ConfigError("dataset.resolutions must be positive");
  }
  if (pipeline.empty()) throw ConfigError("pipeline must list at least one stage");
  validate_stage_configs(pipeline);
  train.validate();
  loss.validate();
  if (eval.histogram_bins < 2) throw ConfigError("eval.histogram_bins must be at least 2");
  if (eval.ablation_seeds.empty()) throw ConfigError("eval.ablation_seeds must not be empty");
}

RunConfig apply_config_json(const json& j, RunConfig c) {
  reject_unknown(j, "config", {"seed", "dataset", "pipeline", "train", "eval", "paths"});
  read(j, "seed", c.seed, "config");
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    reject_unknown(d, "dataset", {"n_train_per_domain", "n_eval", "resolutions"});
    read(d, "n_train_per_domain", c.dataset.n_train_per_domain, "dataset");
    read(d, "n_eval", c.dataset.n_eval, "dataset");
    read(d, "resolutions", c.dataset.resolutions, "dataset");
  }
  if (j.contains("pipeline")) {
    const json& p = j.at("pipeline");
    if (!p.is_array()) throw ConfigError("config 'pipeline' must be an array of stages");
    std::vector<StageConfig> stages;
    for (std::size_t i = 0; i < p.size(); ++i) {
      // Missing resolutions continue the doubling ladder from 16.
      const int res = 16 << i;
      const StageConfig base = i < c.pipeline.size() ? c.pipeline[i] : desk_stage(res);
      stages.push_back(stage_from(p[i], base, "pipeline[" + std::to_string(i) + "]"));
    }
    c.pipeline = stages;
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    reject_unknown(t, "train",
                   {"epochs", "decay_start_epoch", "lr0", "iterations_per_epoch", "schedule", "generator_loss_form",
                    "beta1", "beta2", "lambda_cycle", "lambda_gp"});
    read(t, "epochs", c.train.epochs, "train");
    read(t, "decay_start_epoch", c.train.decay_start_epoch, "train");
    read(t, "lr0", c.train.lr0, "train");
    read(t, "iterations_per_epoch", c.train.iterations_per_epoch, "train");
    read_enum(t, "schedule", c.train.schedule, "train", parse_schedule);
    read_enum(t, "generator_loss_form", c.train.generator_loss_form, "train", parse_generator_loss_form);
    read(t, "beta1", c.train.beta1, "train");
    read(t, "beta2", c.train.beta2, "train");
    read(t, "lambda_cycle", c.loss.lambda_cycle, "train");
    read(t, "lambda_gp", c.loss.lambda_gp, "train");
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    reject_unknown(e, "eval", {"direction", "histogram_bins", "ablation_seeds"});
    read_enum(e, "direction", c.eval.direction, "eval", parse_direction);
    read(e, "histogram_bins", c.eval.histogram_bins, "eval");
    read(e, "ablation_seeds", c.eval.ablation_seeds, "eval");
  }
  if (j.contains("paths")) {
    const json& p = j.at("paths");
    reject_unknown(p, "paths", {"data_dir", "out_dir"});
    read(p, "data_dir", c.paths.data_dir, "paths");
    read(p, "out_dir", c.paths.out_dir, "paths");
  }
  c.train.seed = c.seed;
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return apply_config_json(j, std::move(base));
}

json to_json(const RunConfig& c) {
  json stages = json::array();
  for (const StageConfig& s : c.pipeline) {
    stages.push_back({{"resolution", s.resolution},
                      {"base_filters", s.base_filters},
                      {"n_res_blocks", s.n_res_blocks},
                      {"fusion_variant", std::string(to_string(s.fusion_variant))},
                      {"skip", s.skip},
                      {"fusion", s.fusion},
                      {"fusion_hidden_filters", s.fusion_hidden_filters},
                      {"disc_base_filters", s.disc_base_filters},
                      {"disc_n_layers", s.disc_n_layers}});
  }
  return {{"seed", c.seed},
          {"dataset",
           {{"n_train_per_domain", c.dataset.n_train_per_domain},
            {"n_eval", c.dataset.n_eval},
            {"resolutions", c.dataset.resolutions}}},
          {"pipeline", stages},
          {"train",
           {{"epochs", c.train.epochs},
            {"decay_start_epoch", c.train.decay_start_epoch},
            {"lr0", c.train.lr0},
            {"iterations_per_epoch", c.train.iterations_per_epoch},
            {"schedule", std::string(to_string(c.train.schedule))},
            {"generator_loss_form", std::string(to_string(c.train.generator_loss_form))},
            {"beta1", c.train.beta1},
            {"beta2", c.train.beta2},
            {"lambda_cycle", c.loss.lambda_cycle},
            {"lambda_gp", c.loss.lambda_gp}}},
          {"eval",
           {{"direction", std::string(to_string(c.eval.direction))},
            {"histogram_bins", c.eval.histogram_bins},
            {"ablation_seeds", c.eval.ablation_seeds}}},
          {"paths", {{"data_dir", c.paths.data_dir}, {"out_dir", c.paths.out_dir}}}};
}

}  // namespace scan
