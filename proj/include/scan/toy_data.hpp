#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scan/tensor.hpp"
#include "scan/trainer.hpp"

namespace scan {

enum class ShapeKind { circle, rectangle };

/// Geometry is in canvas units ([0,1] on both axes) so one scene renders at
/// any resolution. For circles half_w == half_h is the radius.
struct SceneShape {
  ShapeKind kind = ShapeKind::circle;
  double cx = 0.5;
  double cy = 0.5;
  double half_w = 0.1;
  double half_h = 0.1;
  int class_id = 1;  // 1 circle, 2 rectangle

  friend bool operator==(const SceneShape&, const SceneShape&) = default;
};

struct SceneSpec {
  std::int64_t scene_id = 0;
  std::vector<SceneShape> shapes;  // later shapes occlude earlier ones

  friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

inline constexpr int kNumClasses = 3;

using Rgb8 = std::array<std::uint8_t, 3>;

/// Label-domain colors for background, circle, rectangle. Bytes 0/255 map to
/// exactly -1/+1, so renders survive a PPM round trip unchanged.
inline constexpr std::array<Rgb8, kNumClasses> kLabelPalette = {{{0, 0, 0}, {255, 0, 0}, {0, 255, 0}}};

/// Palette in tensor units, one (r,g,b) triple per class.
std::vector<std::array<real, 3>> label_palette();

SceneSpec generate_scene(std::uint64_t seed, std::int64_t scene_id);

/// Per-pixel class ids (row-major R*R) of the scene sampled at pixel centres.
std::vector<int> rasterize_classes(const SceneSpec& spec, int resolution);

Tensor render_label_map(const SceneSpec& spec, int resolution);

struct PhotoStyle {
  /// Base colors per class in [0,1] intensity units.
  std::array<std::array<double, 3>, kNumClasses> base = {{{0.55, 0.55, 0.50}, {0.75, 0.35, 0.25}, {0.25, 0.40, 0.70}}};
  double illumination = 0.15;  // top row brighter by this factor, bottom darker
  double noise_sigma = 0.05;   // in tensor units, per pixel and channel
  bool blur = true;            // 3x3 box blur, edges replicated
};

/// Noise is added before the blur; the result is clamped to [-1, 1].
Tensor render_photo(const SceneSpec& spec, int resolution, std::uint64_t noise_seed, const PhotoStyle& style = {});

/// 3x3 box blur with edge replication on a (1,C,H,W) tensor.
Tensor box_blur3(const Tensor& image);

struct IdRange {
  std::int64_t first = 0;
  std::int64_t count = 0;

  std::vector<std::int64_t> ids() const;
};

struct DatasetManifest {
  int format_version = 1;
  std::uint64_t seed = 0;
  IdRange train_x;
  IdRange train_y;
  IdRange eval;
  std::vector<int> resolutions;
};

inline constexpr int kDatasetFormatVersion = 1;

enum class Domain { X, Y };
enum class Split { train, eval };

/// Relative path of one rendered sample, e.g. "X/train/000123_32.ppm".
std::string sample_path(Domain d, Split s, std::int64_t scene_id, int resolution);

/// Noise seed of the photo render of a scene at one resolution.
std::uint64_t photo_noise_seed(std::uint64_t seed, std::int64_t scene_id, int resolution);

struct DatasetRequest {
  std::uint64_t seed = 0;
  int n_train_per_domain = 100;
  int n_eval = 30;
  std::vector<int> resolutions = {16, 32, 64};
};

/// Renders every sample at every resolution under `dir` and writes
/// manifest.json. Fails with IoError if `dir` exists, unless `force`, in which
/// case only the files this function owns are replaced.
DatasetManifest build_dataset(const DatasetRequest& request, const std::filesystem::path& dir, bool force = false);

DatasetManifest load_manifest(const std::filesystem::path& dir);

/// Unpaired training images at one resolution.
TrainingData load_training_data(const std::filesystem::path& dir, const DatasetManifest& m, int resolution);

struct EvalPair {
  std::int64_t scene_id = 0;
  Tensor label;  // domain X
  Tensor photo;  // domain Y
};

std::vector<EvalPair> load_eval_pairs(const std::filesystem::path& dir, const DatasetManifest& m, int resolution);

}  // namespace scan
