#include "scan/experiments.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "scan/error.hpp"
#include "scan/ops.hpp"

namespace scan {

namespace fs = std::filesystem;

fs::path stage_dir(const fs::path& out, int k) { return out / ("stage" + std::to_string(k)); }

fs::path epoch_checkpoint(const fs::path& dir, int epoch) {
  char name[32];
  std::snprintf(name, sizeof name, "epoch_%03d", epoch);
  return dir / name;
}

fs::path final_checkpoint(const fs::path& dir) { return dir / "final"; }

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

StageRunResult run_training(const RunConfig& cfg, const StageRunOptions& opts, std::ostream* log) {
  cfg.validate();
  const int k = opts.stage;
  if (k < 1 || k > static_cast<int>(cfg.pipeline.size())) {
    throw UsageError("--stage " + std::to_string(k) + " is outside the configured pipeline (1.." +
                     std::to_string(cfg.pipeline.size()) + ")");
  }
  const std::vector<StageConfig> configs(cfg.pipeline.begin(), cfg.pipeline.begin() + k);
  Pipeline p(configs, cfg.seed);
  TrainingState start;
  if (k > 1 && cfg.train.schedule != StageSchedule::from_scratch_joint) {
    const fs::path prev = opts.previous.value_or(final_checkpoint(stage_dir(opts.out_dir, k - 1)));
    if (!fs::exists(prev / "manifest.json")) {
      throw UsageError("stage " + std::to_string(k) + " needs the trained stage " + std::to_string(k - 1) +
                       " checkpoint at " + prev.string() + "; train stage " + std::to_string(k - 1) + " first");
    }
    LoadedCheckpoint loaded = load_checkpoint(prev);
    if (loaded.pipeline->num_stages() < k - 1) {
      throw UsageError("checkpoint " + prev.string() + " holds " + std::to_string(loaded.pipeline->num_stages()) +
                       " stages, stage " + std::to_string(k) + " needs " + std::to_string(k - 1));
    }
    copy_stages(*loaded.pipeline, p, k - 1);
    start.trained_stages = loaded.state.trained_stages;
  }

  const DatasetManifest manifest = load_manifest(opts.data_dir);
  const TrainingData data = load_training_data(opts.data_dir, manifest, configs.back().resolution);

  const fs::path dir = stage_dir(opts.out_dir, k);
  std::error_code ec;
  if (fs::exists(dir, ec)) {
    if (!opts.force) throw IoError(dir.string() + " exists (use --force to overwrite)");
    fs::remove_all(dir, ec);
    if (ec) throw IoError("cannot clear " + dir.string() + ": " + ec.message());
  }
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_text_file(dir / "effective_config.json", to_json(cfg).dump(2) + "\n");

  std::ofstream trace(dir / "trace.csv", std::ios::trunc);
  if (!trace) throw IoError("cannot write " + (dir / "trace.csv").string());
  trace << kTraceHeader << "\n";
  TrainHooks hooks;
  hooks.on_iteration = [&](const TraceRow& row) { trace << format_trace_row(row) << "\n"; };
  hooks.on_epoch_end = [&](const Pipeline& pl, const TrainingState& state) {
    if (opts.save_epoch_checkpoints) save_checkpoint(pl, state, epoch_checkpoint(dir, state.epoch));
    if (log != nullptr) {
      const EpochSummary& e = state.metric_log.back();
      char line[160];
      std::snprintf(line, sizeof line, "stage %d epoch %d: loss_G %.4f loss_D %.4f cycle %.4f\n", k, e.epoch, e.loss_G,
                    e.loss_D, e.cycle_term);
      *log << line << std::flush;
    }
  };
  StageRunResult result;
  result.dir = dir;
  result.train = train_stage(p, k, data, cfg.train, cfg.loss, hooks, start);
  trace.close();
  if (!trace) throw IoError("write failed for " + (dir / "trace.csv").string());
  save_checkpoint(p, result.train.state, final_checkpoint(dir));
  return result;
}

std::vector<EvalPair> eval_pairs_for(const fs::path& data_dir, int resolution) {
  return load_eval_pairs(data_dir, load_manifest(data_dir), resolution);
}

EvalResult evaluate_pairs(const Pipeline* p, const std::vector<EvalPair>& pairs, Direction d, EvalSource source) {
  if (p == nullptr && source != EvalSource::passthrough) throw UsageError("evaluation needs a pipeline");
  EvalResult out;
  const Palette palette = label_palette();
  for (const EvalPair& pair : pairs) {
    const Tensor& input = d == Direction::y2x ? pair.photo : pair.label;
    const Tensor& target = d == Direction::y2x ? pair.label : pair.photo;
    Tensor output;
    switch (source) {
      case EvalSource::passthrough:
        output = input;
        break;
      case EvalSource::pipeline: {
        Translation t = translate(*p, d, input);
        output = t.output;
        for (const Tensor& a : t.alphas) {
          if (a.defined()) out.alphas.push_back(a);
        }
        break;
      }
      case EvalSource::stage1_upsampled: {
        if (input.shape().h != p->top_resolution()) {
          throw UsageError("expected " + std::to_string(p->top_resolution()) + " px inputs");
        }
        output = run_stages(*p, d, downsample_to(input, p->resolution(1)), 1).outputs[0];
        while (output.shape().h < input.shape().h) output = resample(output, Resample::nearest_up_2x);
        break;
      }
    }
    ImageMetrics m;
    m.image_id = std::to_string(pair.scene_id);
    m.psnr = psnr(output, target);
    m.ssim = ssim(output, target);
    if (d == Direction::y2x) {
      const SegmentationScores s =
          segmentation_scores(quantize_to_labels(output, palette), quantize_to_labels(target, palette), kNumClasses);
      m.pixel_acc = s.pixel_acc;
      m.class_acc = s.class_acc;
      m.iou = s.mean_iou;
      m.class_iou = s.class_iou;
    }
    out.report.images.push_back(std::move(m));
  }
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) throw UsageError("median of no values");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

StageConfig ablation_stage(const StageConfig& full, const std::string& variant) {
  StageConfig s = full;
  if (variant == "full" || variant == "lpw") {
    s.skip = true;
    s.fusion = true;
    s.fusion_variant = FusionVariant::lpw;
  } else if (variant == "no_skip") {
    s.skip = false;
  } else if (variant == "no_fusion") {
    s.fusion = false;
  } else if (variant == "no_skip_fusion") {
    s.skip = false;
    s.fusion = false;
  } else if (variant == "uw" || variant == "luw" || variant == "rf") {
    s.skip = true;
    s.fusion = true;
    s.fusion_variant = parse_fusion_variant(variant);
  } else {
    throw ConfigError("unknown ablation variant '" + variant + "'");
  }
  return s;
}

namespace {

std::optional<double> optional_median(const std::vector<std::optional<double>>& values) {
  std::vector<double> present;
  for (const auto& v : values) {
    if (v) present.push_back(*v);
  }
  if (present.empty()) return std::nullopt;
  return median(present);
}

double mean_value(const std::vector<Tensor>& maps) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const Tensor& t : maps) {
    for (real v : t.data()) sum += v;
    n += t.data().size();
  }
  return sum / static_cast<double>(n);
}

std::string cell(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

}  // namespace

std::vector<AblationRow> run_ablation(const RunConfig& cfg, const AblationOptions& opts, std::ostream* log) {
  cfg.validate();
  if (cfg.pipeline.size() < 2) throw ConfigError("ablation needs a pipeline with at least two stages");
  std::vector<std::pair<std::string, std::string>> grid;  // (grid, variant)
  if (opts.variant_grid) {
    for (const char* v : {"full", "no_skip", "no_fusion", "no_skip_fusion"}) {
      if (opts.variants.empty() || std::find(opts.variants.begin(), opts.variants.end(), v) != opts.variants.end()) {
        grid.emplace_back("variant", v);
      }
    }
  }
  if (opts.fusion_grid) {
    for (const char* v : {"lpw", "uw", "luw", "rf"}) grid.emplace_back("fusion", v);
  }
  if (grid.empty()) throw ConfigError("ablation grid is empty");

  const int top = cfg.pipeline[1].resolution;
  const std::vector<EvalPair> pairs = eval_pairs_for(opts.data_dir, top);
  std::map<std::string, AblationRow> cache;  // identical stage-2 configs train once per seed
  std::vector<AblationRow> rows;
  for (std::uint64_t seed : cfg.eval.ablation_seeds) {
    RunConfig base = cfg;
    base.seed = seed;
    base.train.seed = seed;
    base.pipeline.resize(2);
    const fs::path seed_dir = opts.out_dir / ("seed_" + std::to_string(seed));
    StageRunOptions s1;
    s1.stage = 1;
    s1.data_dir = opts.data_dir;
    s1.out_dir = seed_dir;
    s1.force = opts.force;
    s1.save_epoch_checkpoints = false;
    if (log != nullptr) *log << "ablation seed " << seed << ": stage 1\n";
    run_training(base, s1, log);
    cache.clear();
    for (const auto& [grid_name, variant] : grid) {
      RunConfig vc = base;
      vc.pipeline[1] = ablation_stage(base.pipeline[1], variant);
      const std::string key = to_json(vc).dump();
      AblationRow row;
      if (auto it = cache.find(key); it != cache.end()) {
        row = it->second;
      } else {
        StageRunOptions s2;
        s2.stage = 2;
        s2.data_dir = opts.data_dir;
        s2.out_dir = seed_dir / variant;
        s2.previous = final_checkpoint(stage_dir(seed_dir, 1));
        s2.force = opts.force;
        s2.save_epoch_checkpoints = false;
        if (log != nullptr) *log << "ablation seed " << seed << ": stage 2 " << variant << "\n";
        run_training(vc, s2, log);
        const LoadedCheckpoint ck = load_checkpoint(final_checkpoint(stage_dir(s2.out_dir, 2)));
        const EvalResult ev = evaluate_pairs(ck.pipeline.get(), pairs, cfg.eval.direction, EvalSource::pipeline);
        const ImageMetrics m = ev.report.aggregate();
        row.psnr = m.psnr;
        row.ssim = m.ssim;
        row.pixel_acc = m.pixel_acc;
        row.class_acc = m.class_acc;
        row.iou = m.iou;
        // UW's scheduled weight reaches exactly 1, outside the histogram's domain.
        if (!ev.alphas.empty()) row.alpha_mean = mean_value(ev.alphas);
        write_text_file(s2.out_dir / "report.csv", ev.report.csv());
        cache[key] = row;
      }
      row.grid = grid_name;
      row.variant = variant;
      row.seed = std::to_string(seed);
      rows.push_back(row);
    }
  }

  std::vector<AblationRow> sorted;
  for (const auto& [grid_name, variant] : grid) {
    std::vector<AblationRow> mine;
    for (const AblationRow& r : rows) {
      if (r.grid == grid_name && r.variant == variant) mine.push_back(r);
    }
    AblationRow med;
    med.grid = grid_name;
    med.variant = variant;
    med.seed = "median";
    std::vector<double> ps, ss;
    std::vector<std::optional<double>> pa, ca, io, al;
    for (const AblationRow& r : mine) {
      ps.push_back(r.psnr);
      ss.push_back(r.ssim);
      pa.push_back(r.pixel_acc);
      ca.push_back(r.class_acc);
      io.push_back(r.iou);
      al.push_back(r.alpha_mean);
    }
    med.psnr = median(ps);
    med.ssim = median(ss);
    med.pixel_acc = optional_median(pa);
    med.class_acc = optional_median(ca);
    med.iou = optional_median(io);
    med.alpha_mean = optional_median(al);
    sorted.insert(sorted.end(), mine.begin(), mine.end());
    sorted.push_back(med);
  }
  return sorted;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "grid,variant,seed,psnr,ssim,pixel_acc,class_acc,iou,alpha_mean\n";
  for (const AblationRow& r : rows) {
    char head[96];
    std::snprintf(head, sizeof head, ",%.6f,%.6f,", r.psnr, r.ssim);
    out << r.grid << "," << r.variant << "," << r.seed << head << cell(r.pixel_acc) << "," << cell(r.class_acc) << ","
        << cell(r.iou) << "," << cell(r.alpha_mean) << "\n";
  }
  return out.str();
}

std::vector<EpochHistogram> fusion_histograms(const fs::path& dir, std::vector<int> epochs,
                                              const std::vector<EvalPair>& pairs, Direction d, int bins) {
  if (epochs.empty()) {
    std::error_code ec;
    for (const auto& e : fs::directory_iterator(dir, ec)) {
      const std::string name = e.path().filename().string();
      if (e.is_directory() && name.rfind("epoch_", 0) == 0) epochs.push_back(std::stoi(name.substr(6)));
    }
    if (ec) throw UsageError("cannot list " + dir.string() + ": " + ec.message());
    std::sort(epochs.begin(), epochs.end());
    if (epochs.empty()) throw UsageError("no epoch checkpoints under " + dir.string());
  }
  for (int e : epochs) {
    if (!fs::exists(epoch_checkpoint(dir, e) / "manifest.json")) {
      throw UsageError("missing checkpoint for epoch " + std::to_string(e) + " (" + epoch_checkpoint(dir, e).string() + ")");
    }
  }
  std::vector<EpochHistogram> out;
  for (int e : epochs) {
    const LoadedCheckpoint ck = load_checkpoint(epoch_checkpoint(dir, e));
    const EvalResult ev = evaluate_pairs(ck.pipeline.get(), pairs, d, EvalSource::pipeline);
    if (ev.alphas.empty()) throw UsageError("the pipeline of epoch " + std::to_string(e) + " has no fusion weight maps");
    out.push_back({e, fusion_weight_histogram(ev.alphas, bins)});
  }
  return out;
}

}  // namespace scan
