#include "scan/cli.hpp"

#include <omp.h>

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <optional>

#include "CLI11.hpp"
#include "scan/error.hpp"
#include "scan/experiments.hpp"
#include "scan/image_io.hpp"

namespace scan {

namespace fs = std::filesystem;

int configure_threads() {
  int n = 1;
  if (const char* env = std::getenv("SCAN_NUM_THREADS"); env != nullptr && *env != '\0') {
    const std::string_view s(env);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), n);
    if (ec != std::errc() || ptr != s.data() + s.size() || n < 1) {
      throw ConfigError("SCAN_NUM_THREADS must be a positive integer, got '" + std::string(s) + "'");
    }
  }
  omp_set_num_threads(n);
  return n;
}

namespace {

struct Common {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  bool force = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON run config (applied on top of the preset)");
  cmd->add_option("--preset", c.preset, "table1-desk (default) or highres-desk");
  cmd->add_option("--seed", c.seed, "Overrides the config seed");
  cmd->add_flag("--force", c.force, "Overwrite existing outputs");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.preset.empty() ? default_run_config() : preset_config(c.preset);
  if (!c.config.empty()) cfg = load_run_config(c.config, cfg);
  if (c.seed) cfg.seed = *c.seed;
  cfg.train.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void write_config(const RunConfig& cfg, const fs::path& dir) {
  write_text_file(dir / "effective_config.json", to_json(cfg).dump(2) + "\n");
}

std::vector<fs::path> list_inputs(const fs::path& input) {
  std::vector<fs::path> files;
  if (fs::is_directory(input)) {
    for (const auto& e : fs::directory_iterator(input)) {
      if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else if (fs::exists(input)) {
    files.push_back(input);
  } else {
    throw IoError("input " + input.string() + " does not exist");
  }
  if (files.empty()) throw UsageError("no .ppm inputs under " + input.string());
  return files;
}

// Values outside [-1, 1] would be clipped by the PPM encoder.
std::size_t count_clipped(const Tensor& t) {
  return static_cast<std::size_t>(std::count_if(t.data().begin(), t.data().end(), [](real v) { return v < -1.0f || v > 1.0f; }));
}

Tensor alpha_image(const Tensor& alpha) {
  const Shape& s = alpha.shape();
  Tensor out({1, 3, s.h, s.w});
  const std::size_t plane = static_cast<std::size_t>(s.plane());
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t p = 0; p < plane; ++p) out.data_mut()[c * plane + p] = 2.0f * alpha.data()[p] - 1.0f;
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& s, const char* what) {
  std::vector<int> out;
  std::size_t start = 0;
  while (start < s.size()) {
    const std::size_t comma = std::min(s.find(',', start), s.size());
    int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data() + start, s.data() + comma, v);
    if (ec != std::errc() || ptr != s.data() + comma) throw ConfigError(std::string("bad ") + what + " list '" + s + "'");
    out.push_back(v);
    start = comma + 1;
  }
  return out;
}

int cmd_gen_data(const Common& c, std::string out_dir, std::ostream& out) {
  const RunConfig cfg = resolve(c);
  const fs::path dir = out_dir.empty() ? fs::path(cfg.paths.data_dir) : fs::path(out_dir);
  DatasetRequest req;
  req.seed = cfg.seed;
  req.n_train_per_domain = cfg.dataset.n_train_per_domain;
  req.n_eval = cfg.dataset.n_eval;
  req.resolutions = cfg.dataset.resolutions;
  const DatasetManifest m = build_dataset(req, dir, c.force);
  write_config(cfg, dir);
  out << "dataset " << dir.string() << ": " << m.train_x.count << " X + " << m.train_y.count
      << " Y training scenes (disjoint), " << m.eval.count << " eval pairs, resolutions";
  for (int r : m.resolutions) out << " " << r;
  out << ", seed " << m.seed << "\n";
  return kExitOk;
}

int cmd_train(const Common& c, int stage, const std::string& schedule, const std::string& data, const std::string& out_dir,
              std::ostream& out) {
  RunConfig cfg = resolve(c);
  if (!schedule.empty()) cfg.train.schedule = parse_schedule(schedule);
  StageRunOptions opts;
  opts.stage = stage;
  opts.data_dir = data.empty() ? fs::path(cfg.paths.data_dir) : fs::path(data);
  opts.out_dir = out_dir.empty() ? fs::path(cfg.paths.out_dir) : fs::path(out_dir);
  opts.force = c.force;
  const StageRunResult r = run_training(cfg, opts, &out);
  out << "trained stage " << stage << " (" << to_string(cfg.train.schedule) << ", " << r.train.state.iteration
      << " iterations); checkpoint " << final_checkpoint(r.dir).string() << "\n";
  return kExitOk;
}

int cmd_translate(const Common& c, const std::string& checkpoint, const std::string& input, const std::string& out_dir,
                  const std::string& direction, bool dump, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = resolve(c);
  const Direction d = direction.empty() ? cfg.eval.direction : parse_direction(direction);
  const LoadedCheckpoint ck = load_checkpoint(checkpoint);
  const Pipeline& p = *ck.pipeline;
  const int res = p.top_resolution();
  // A directory may hold several resolutions (as the dataset splits do);
  // only files at the checkpoint's resolution are translated.
  const bool from_dir = fs::is_directory(input);
  std::vector<fs::path> files;
  std::vector<Tensor> images;
  std::size_t skipped = 0;
  for (const fs::path& f : list_inputs(input)) {
    Tensor img = read_image(f);
    if (img.shape().h != res || img.shape().w != res) {
      if (from_dir) {
        ++skipped;
        continue;
      }
      throw UsageError(f.string() + " is " + std::to_string(img.shape().w) + "x" + std::to_string(img.shape().h) +
                       "; this checkpoint expects " + std::to_string(res) + "x" + std::to_string(res) + " inputs");
    }
    files.push_back(f);
    images.push_back(std::move(img));
  }
  if (files.empty()) {
    throw UsageError("no " + std::to_string(res) + "x" + std::to_string(res) + " inputs under " + input +
                     "; this checkpoint expects that size");
  }
  if (skipped > 0) err << "note: skipped " << skipped << " inputs that are not " << res << "x" << res << "\n";
  const fs::path dir(out_dir);
  make_dir(dir);
  std::size_t clipped = 0;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const std::string stem = files[i].stem().string();
    const Translation t = translate(p, d, images[i]);
    clipped += count_clipped(t.output);
    write_image(t.output, dir / (stem + "_out.ppm"));
    if (!dump) continue;
    for (std::size_t j = 0; j < t.intermediates.size(); ++j) {
      write_image(t.intermediates[j], dir / (stem + "_stage" + std::to_string(j + 1) + ".ppm"));
    }
    for (std::size_t j = 0; j < t.alphas.size(); ++j) {
      if (t.alphas[j].defined()) write_image(alpha_image(t.alphas[j]), dir / (stem + "_alpha" + std::to_string(j + 2) + ".ppm"));
    }
  }
  if (clipped > 0) err << "warning: " << clipped << " output values were outside [-1, 1] and clipped\n";
  out << "translated " << files.size() << " images (" << to_string(d) << ") into " << dir.string() << "\n";
  return kExitOk;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& data, const std::string& out_dir,
             const std::string& direction, const std::string& source, std::ostream& out) {
  const RunConfig cfg = resolve(c);
  const Direction d = direction.empty() ? cfg.eval.direction : parse_direction(direction);
  EvalSource src = EvalSource::pipeline;
  if (source == "stage1-upsampled") {
    src = EvalSource::stage1_upsampled;
  } else if (source == "passthrough") {
    src = EvalSource::passthrough;
  } else if (source != "pipeline") {
    throw ConfigError("unknown --source '" + source + "' (pipeline, stage1-upsampled or passthrough)");
  }
  std::unique_ptr<Pipeline> pipeline;
  int res = cfg.pipeline.back().resolution;
  if (src != EvalSource::passthrough) {
    if (checkpoint.empty()) throw UsageError("eval needs --checkpoint");
    pipeline = load_checkpoint(checkpoint).pipeline;
    res = pipeline->top_resolution();
  }
  const fs::path data_dir = data.empty() ? fs::path(cfg.paths.data_dir) : fs::path(data);
  std::vector<EvalPair> pairs;
  try {
    pairs = eval_pairs_for(data_dir, res);
  } catch (const IoError& e) {
    throw UsageError(std::string("eval pairs are missing: ") + e.what());
  }
  EvalResult r = evaluate_pairs(pipeline.get(), pairs, d, src);
  r.report.checkpoint_id = src == EvalSource::passthrough ? "passthrough" : checkpoint;
  r.report.dataset_id = data_dir.string();
  const fs::path dir(out_dir);
  make_dir(dir);
  write_text_file(dir / "report.csv", r.report.csv());
  write_text_file(dir / "summary.json", r.report.json_summary());
  write_config(cfg, dir);
  const ImageMetrics m = r.report.aggregate();
  out << "evaluated " << r.report.images.size() << " pairs (" << to_string(d) << "): psnr " << m.psnr << " ssim " << m.ssim;
  if (m.iou) out << " pixel_acc " << *m.pixel_acc << " class_acc " << *m.class_acc << " iou " << *m.iou;
  out << "\n";
  return kExitOk;
}

int cmd_ablate(const Common& c, const std::string& data, const std::string& out_dir, const std::string& grid,
               const std::string& seeds, std::ostream& out) {
  RunConfig cfg = resolve(c);
  if (!seeds.empty()) {
    cfg.eval.ablation_seeds.clear();
    for (int s : parse_int_list(seeds, "seed")) cfg.eval.ablation_seeds.push_back(static_cast<std::uint64_t>(s));
  }
  AblationOptions opts;
  opts.data_dir = data.empty() ? fs::path(cfg.paths.data_dir) : fs::path(data);
  opts.out_dir = out_dir.empty() ? fs::path(cfg.paths.out_dir) / "ablation" : fs::path(out_dir);
  opts.force = c.force;
  if (grid == "variants") {
    opts.fusion_grid = false;
  } else if (grid == "fusion") {
    opts.variant_grid = false;
  } else if (grid != "all") {
    throw ConfigError("unknown --grid '" + grid + "' (all, variants or fusion)");
  }
  make_dir(opts.out_dir);
  write_config(cfg, opts.out_dir);
  const auto rows = run_ablation(cfg, opts, &out);
  const std::string csv = ablation_csv(rows);
  write_text_file(opts.out_dir / "ablation.csv", csv);
  out << csv;
  return kExitOk;
}

int cmd_fusion_hist(const Common& c, const std::string& run, const std::string& data, const std::string& out_dir,
                    const std::string& epochs, const std::string& direction, std::ostream& out) {
  const RunConfig cfg = resolve(c);
  const Direction d = direction.empty() ? cfg.eval.direction : parse_direction(direction);
  const fs::path stage(run);
  const std::vector<int> list = epochs.empty() ? std::vector<int>{} : parse_int_list(epochs, "epoch");
  // The resolution comes from the first listed checkpoint.
  int res = 0;
  {
    fs::path first;
    if (!list.empty()) {
      first = epoch_checkpoint(stage, list.front());
    } else {
      for (int e = 1; e < 10000 && first.empty(); ++e) {
        if (fs::exists(epoch_checkpoint(stage, e) / "manifest.json")) first = epoch_checkpoint(stage, e);
      }
    }
    if (first.empty() || !fs::exists(first / "manifest.json")) {
      throw UsageError("missing epoch checkpoint under " + stage.string());
    }
    res = load_checkpoint(first).pipeline->top_resolution();
  }
  const fs::path data_dir = data.empty() ? fs::path(cfg.paths.data_dir) : fs::path(data);
  const auto hists = fusion_histograms(stage, list, eval_pairs_for(data_dir, res), d, cfg.eval.histogram_bins);
  const fs::path dir(out_dir);
  make_dir(dir);
  std::string means = "epoch,mean_alpha,count\n";
  for (const EpochHistogram& h : hists) {
    char name[40];
    std::snprintf(name, sizeof name, "hist_epoch_%03d.csv", h.epoch);
    write_text_file(dir / name, histogram_csv(h.histogram));
    char line[96];
    std::snprintf(line, sizeof line, "%d,%.9f,%lld\n", h.epoch, h.histogram.mean, static_cast<long long>(h.histogram.count));
    means += line;
  }
  write_text_file(dir / "means.csv", means);
  write_config(cfg, dir);
  out << means;
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Coarse-to-fine unpaired translation on a procedural toy dataset"};
  app.require_subcommand(1);

  Common gen_c, train_c, tr_c, ev_c, ab_c, fh_c;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "Render the toy dataset");
  add_common(gen, gen_c);
  gen->add_option("--out", gen_out, "Dataset directory (default paths.data_dir)");

  int stage = 1;
  std::string schedule, train_data, train_out;
  auto* train = app.add_subcommand("train", "Train one stage");
  add_common(train, train_c);
  train->add_option("--stage", stage, "Stage to train (1-based)");
  train->add_option("--schedule", schedule, "sequential_frozen, fine_tune_previous or from_scratch_joint");
  train->add_option("--data", train_data, "Dataset directory");
  train->add_option("--out", train_out, "Run directory; stage k is written to <out>/stage<k>");

  std::string tr_ck, tr_in, tr_out, tr_dir;
  bool dump = false;
  auto* tr = app.add_subcommand("translate", "Translate PPM images with a checkpoint");
  add_common(tr, tr_c);
  tr->add_option("--checkpoint", tr_ck, "Checkpoint directory")->required();
  tr->add_option("--input", tr_in, "PPM file or directory of PPM files")->required();
  tr->add_option("--out", tr_out, "Output directory")->required();
  tr->add_option("--direction", tr_dir, "x2y (labels to photos) or y2x");
  tr->add_flag("--dump-intermediates", dump, "Also write per-stage outputs and fusion weight maps");

  std::string ev_ck, ev_data, ev_out, ev_dir, ev_source = "pipeline";
  auto* ev = app.add_subcommand("eval", "Score translations of the eval pairs");
  add_common(ev, ev_c);
  ev->add_option("--checkpoint", ev_ck, "Checkpoint directory");
  ev->add_option("--data", ev_data, "Dataset directory");
  ev->add_option("--out", ev_out, "Report directory")->required();
  ev->add_option("--direction", ev_dir, "x2y or y2x (default eval.direction)");
  ev->add_option("--source", ev_source, "pipeline, stage1-upsampled, or passthrough (plumbing check)");

  std::string ab_data, ab_out, ab_grid = "all", ab_seeds;
  auto* ab = app.add_subcommand("ablate", "Train and score the stage-2 variant and fusion grids");
  add_common(ab, ab_c);
  ab->add_option("--data", ab_data, "Dataset directory");
  ab->add_option("--out", ab_out, "Output directory");
  ab->add_option("--grid", ab_grid, "all, variants or fusion");
  ab->add_option("--seeds", ab_seeds, "Comma-separated seeds (default eval.ablation_seeds)");

  std::string fh_run, fh_data, fh_out, fh_epochs, fh_dir;
  auto* fh = app.add_subcommand("fusion-hist", "Fusion weight histograms of per-epoch checkpoints");
  add_common(fh, fh_c);
  fh->add_option("--checkpoint", fh_run, "Stage run directory holding epoch_NNN checkpoints")->required();
  fh->add_option("--data", fh_data, "Dataset directory");
  fh->add_option("--out", fh_out, "Output directory")->required();
  fh->add_option("--epochs", fh_epochs, "Comma-separated epochs (default: all present)");
  fh->add_option("--direction", fh_dir, "x2y or y2x");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    if (!reversed.empty()) reversed.pop_back();
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    configure_threads();
    if (*gen) return cmd_gen_data(gen_c, gen_out, out);
    if (*train) return cmd_train(train_c, stage, schedule, train_data, train_out, out);
    if (*tr) return cmd_translate(tr_c, tr_ck, tr_in, tr_out, tr_dir, dump, out, err);
    if (*ev) return cmd_eval(ev_c, ev_ck, ev_data, ev_out, ev_dir, ev_source, out);
    if (*ab) return cmd_ablate(ab_c, ab_data, ab_out, ab_grid, ab_seeds, out);
    if (*fh) return cmd_fusion_hist(fh_c, fh_run, fh_data, fh_out, fh_epochs, fh_dir, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace scan
