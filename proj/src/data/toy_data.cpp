#include "scan/toy_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <numbers>
#include <random>

#include "json.hpp"
#include "scan/error.hpp"
#include "scan/image_io.hpp"

namespace scan {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Distribution algorithms of <random> differ between standard libraries; these
// keep datasets identical wherever the engine is.
class Draw {
 public:
  explicit Draw(std::initializer_list<std::uint64_t> key) {
    std::vector<std::uint32_t> words;
    for (std::uint64_t k : key) {
      words.push_back(static_cast<std::uint32_t>(k));
      words.push_back(static_cast<std::uint32_t>(k >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    engine_.seed(seq);
  }

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int integer(int lo, int hi) { return lo + static_cast<int>(uniform() * (hi - lo + 1)); }

  double normal() {
    if (spare_) {
      spare_ = false;
      return next_;
    }
    double u1 = 0.0;
    while (u1 == 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    next_ = r * std::sin(2.0 * std::numbers::pi * u2);
    spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 engine_;
  bool spare_ = false;
  double next_ = 0.0;
};

constexpr std::uint64_t kSceneStream = 0x5343454e45ULL;
constexpr std::uint64_t kNoiseStream = 0x4e4f495345ULL;

bool covers(const SceneShape& s, double px, double py) {
  const double dx = px - s.cx;
  const double dy = py - s.cy;
  if (s.kind == ShapeKind::circle) return dx * dx + dy * dy <= s.half_w * s.half_w;
  return std::abs(dx) <= s.half_w && std::abs(dy) <= s.half_h;
}

void require_resolution(int resolution) {
  if (resolution < 1) throw UsageError("render resolution must be positive, got " + std::to_string(resolution));
}

std::string split_name(Split s) { return s == Split::train ? "train" : "eval"; }

json range_json(const IdRange& r) { return {{"first", r.first}, {"count", r.count}}; }

IdRange range_from(const json& m, const char* key) {
  try {
    const json& r = m.at(key);
    return {r.at("first").get<std::int64_t>(), r.at("count").get<std::int64_t>()};
  } catch (const json::exception&) {
    throw ParseError(std::string("dataset manifest: bad or missing id range '") + key + "'");
  }
}

}  // namespace

std::vector<std::array<real, 3>> label_palette() {
  std::vector<std::array<real, 3>> out;
  for (const Rgb8& c : kLabelPalette) out.push_back({from_byte(c[0]), from_byte(c[1]), from_byte(c[2])});
  return out;
}

SceneSpec generate_scene(std::uint64_t seed, std::int64_t scene_id) {
  Draw draw({kSceneStream, seed, static_cast<std::uint64_t>(scene_id)});
  SceneSpec spec;
  spec.scene_id = scene_id;
  const int n = draw.integer(1, 4);
  for (int i = 0; i < n; ++i) {
    SceneShape s;
    s.kind = draw.uniform() < 0.5 ? ShapeKind::circle : ShapeKind::rectangle;
    if (s.kind == ShapeKind::circle) {
      s.class_id = 1;
      s.half_w = s.half_h = draw.uniform(0.1, 0.25);
    } else {
      s.class_id = 2;
      s.half_w = draw.uniform(0.1, 0.3);
      s.half_h = draw.uniform(0.1, 0.3);
    }
    s.cx = draw.uniform(s.half_w, 1.0 - s.half_w);
    s.cy = draw.uniform(s.half_h, 1.0 - s.half_h);
    spec.shapes.push_back(s);
  }
  return spec;
}

std::vector<int> rasterize_classes(const SceneSpec& spec, int resolution) {
  require_resolution(resolution);
  std::vector<int> classes(static_cast<std::size_t>(resolution) * resolution, 0);
  for (int i = 0; i < resolution; ++i) {
    const double py = (i + 0.5) / resolution;
    for (int j = 0; j < resolution; ++j) {
      const double px = (j + 0.5) / resolution;
      for (const SceneShape& s : spec.shapes) {
        if (covers(s, px, py)) classes[static_cast<std::size_t>(i) * resolution + j] = s.class_id;
      }
    }
  }
  return classes;
}

Tensor render_label_map(const SceneSpec& spec, int resolution) {
  const auto classes = rasterize_classes(spec, resolution);
  const auto palette = label_palette();
  Tensor out({1, 3, resolution, resolution});
  auto o = out.data_mut();
  const std::size_t plane = classes.size();
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) o[c * plane + p] = palette[static_cast<std::size_t>(classes[p])][c];
  }
  return out;
}

Tensor box_blur3(const Tensor& image) {
  const Shape& s = image.shape();
  Tensor out(s);
  const auto d = image.data();
  auto o = out.data_mut();
  for (int n = 0; n < s.n * s.c; ++n) {
    const std::size_t base = static_cast<std::size_t>(n) * s.plane();
    for (int i = 0; i < s.h; ++i) {
      for (int j = 0; j < s.w; ++j) {
        double acc = 0.0;
        for (int di = -1; di <= 1; ++di) {
          const int ii = std::clamp(i + di, 0, s.h - 1);
          for (int dj = -1; dj <= 1; ++dj) {
            const int jj = std::clamp(j + dj, 0, s.w - 1);
            acc += d[base + static_cast<std::size_t>(ii) * s.w + jj];
          }
        }
        o[base + static_cast<std::size_t>(i) * s.w + j] = static_cast<real>(acc / 9.0);
      }
    }
  }
  return out;
}

Tensor render_photo(const SceneSpec& spec, int resolution, std::uint64_t noise_seed, const PhotoStyle& style) {
  const auto classes = rasterize_classes(spec, resolution);
  Draw draw({kNoiseStream, noise_seed});
  Tensor img({1, 3, resolution, resolution});
  auto o = img.data_mut();
  const std::size_t plane = classes.size();
  for (int i = 0; i < resolution; ++i) {
    const double light = 1.0 + style.illumination * (1.0 - 2.0 * (i + 0.5) / resolution);
    for (int j = 0; j < resolution; ++j) {
      const std::size_t p = static_cast<std::size_t>(i) * resolution + j;
      const auto& base = style.base[static_cast<std::size_t>(classes[p])];
      for (std::size_t c = 0; c < 3; ++c) o[c * plane + p] = static_cast<real>(2.0 * base[c] * light - 1.0);
    }
  }
  // Noise is drawn channel-major so the draw order does not depend on layout tricks.
  if (style.noise_sigma > 0.0) {
    for (real& v : o) v = static_cast<real>(v + style.noise_sigma * draw.normal());
  }
  Tensor out = style.blur ? box_blur3(img) : img;
  for (real& v : out.data_mut()) v = std::clamp(v, real(-1), real(1));
  return out;
}

std::vector<std::int64_t> IdRange::ids() const {
  std::vector<std::int64_t> out;
  for (std::int64_t i = 0; i < count; ++i) out.push_back(first + i);
  return out;
}

std::string sample_path(Domain d, Split s, std::int64_t scene_id, int resolution) {
  char name[64];
  std::snprintf(name, sizeof name, "%06lld_%d.ppm", static_cast<long long>(scene_id), resolution);
  return std::string(d == Domain::X ? "X/" : "Y/") + split_name(s) + "/" + name;
}

std::uint64_t photo_noise_seed(std::uint64_t seed, std::int64_t scene_id, int resolution) {
  Draw draw({kNoiseStream, seed, static_cast<std::uint64_t>(scene_id), static_cast<std::uint64_t>(resolution)});
  return static_cast<std::uint64_t>(draw.uniform() * 0x1.0p53);
}

DatasetManifest build_dataset(const DatasetRequest& request, const fs::path& dir, bool force) {
  if (request.n_train_per_domain < 1 || request.n_eval < 1) {
    throw ConfigError("dataset counts must be at least 1");
  }
  if (request.resolutions.empty()) throw ConfigError("dataset needs at least one resolution");
  for (int r : request.resolutions) {
    if (r < 1) throw ConfigError("dataset resolution must be positive, got " + std::to_string(r));
  }
  std::error_code ec;
  if (fs::exists(dir, ec)) {
    if (!force) throw IoError("output directory " + dir.string() + " exists (use --force to overwrite)");
    fs::remove_all(dir / "X", ec);
    fs::remove_all(dir / "Y", ec);
    fs::remove(dir / "manifest.json", ec);
  }
  for (const char* sub : {"X/train", "Y/train", "X/eval", "Y/eval"}) {
    fs::create_directories(dir / sub, ec);
    if (ec) throw IoError("cannot create " + (dir / sub).string() + ": " + ec.message());
  }

  DatasetManifest m;
  m.format_version = kDatasetFormatVersion;
  m.seed = request.seed;
  m.train_x = {0, request.n_train_per_domain};
  m.train_y = {m.train_x.first + m.train_x.count, request.n_train_per_domain};
  m.eval = {m.train_y.first + m.train_y.count, request.n_eval};
  m.resolutions = request.resolutions;

  struct Job {
    std::int64_t id;
    Domain domain;
    Split split;
  };
  std::vector<Job> jobs;
  for (auto id : m.train_x.ids()) jobs.push_back({id, Domain::X, Split::train});
  for (auto id : m.train_y.ids()) jobs.push_back({id, Domain::Y, Split::train});
  for (auto id : m.eval.ids()) {
    jobs.push_back({id, Domain::X, Split::eval});
    jobs.push_back({id, Domain::Y, Split::eval});
  }

  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    try {
      const Job& job = jobs[j];
      const SceneSpec spec = generate_scene(m.seed, job.id);
      for (int r : m.resolutions) {
        const Tensor img = job.domain == Domain::X ? render_label_map(spec, r)
                                                   : render_photo(spec, r, photo_noise_seed(m.seed, job.id, r));
        write_image(img, dir / sample_path(job.domain, job.split, job.id, r));
      }
    } catch (...) {
#pragma omp critical(scan_dataset_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  json palette = json::array();
  for (const Rgb8& c : kLabelPalette) palette.push_back({c[0], c[1], c[2]});
  json files = json::array();
  for (const Job& job : jobs) {
    for (int r : m.resolutions) {
      files.push_back({{"scene_id", job.id},
                       {"domain", job.domain == Domain::X ? "X" : "Y"},
                       {"split", split_name(job.split)},
                       {"resolution", r},
                       {"path", sample_path(job.domain, job.split, job.id, r)}});
    }
  }
  const json manifest = {{"format_version", m.format_version},
                         {"seed", m.seed},
                         {"palette", palette},
                         {"classes", {"background", "circle", "rectangle"}},
                         {"train_X", range_json(m.train_x)},
                         {"train_Y", range_json(m.train_y)},
                         {"eval_pairs", range_json(m.eval)},
                         {"resolutions", m.resolutions},
                         {"files", files}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError("write failed for " + (dir / "manifest.json").string());
  return m;
}

DatasetManifest load_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset manifest " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + " is not valid JSON: " + e.what());
  }
  DatasetManifest m;
  try {
    m.format_version = j.at("format_version").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.resolutions = j.at("resolutions").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (m.format_version != kDatasetFormatVersion) {
    throw ParseError(path.string() + ": unsupported format_version " + std::to_string(m.format_version));
  }
  m.train_x = range_from(j, "train_X");
  m.train_y = range_from(j, "train_Y");
  m.eval = range_from(j, "eval_pairs");
  return m;
}

namespace {

void require_listed(const DatasetManifest& m, int resolution) {
  if (std::find(m.resolutions.begin(), m.resolutions.end(), resolution) == m.resolutions.end()) {
    throw UsageError("dataset has no " + std::to_string(resolution) + " px renders");
  }
}

}  // namespace

TrainingData load_training_data(const fs::path& dir, const DatasetManifest& m, int resolution) {
  require_listed(m, resolution);
  TrainingData data;
  for (auto id : m.train_x.ids()) data.x.push_back(read_image(dir / sample_path(Domain::X, Split::train, id, resolution)));
  for (auto id : m.train_y.ids()) data.y.push_back(read_image(dir / sample_path(Domain::Y, Split::train, id, resolution)));
  return data;
}

std::vector<EvalPair> load_eval_pairs(const fs::path& dir, const DatasetManifest& m, int resolution) {
  require_listed(m, resolution);
  std::vector<EvalPair> out;
  for (auto id : m.eval.ids()) {
    out.push_back({id, read_image(dir / sample_path(Domain::X, Split::eval, id, resolution)),
                   read_image(dir / sample_path(Domain::Y, Split::eval, id, resolution))});
  }
  return out;
}

}  // namespace scan
