#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "scan/tensor.hpp"

namespace scan {

/// Images are in [-1, 1]; both metrics map them to [0, 1] first, so a
/// full-range error is a = -1, b = +1.
inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE), at most 99 dB (exactly 99 when MSE < 1e-10).
double psnr(const Tensor& a, const Tensor& b);

/// Mean local SSIM over valid 11x11 windows (Gaussian, sigma 1.5) of the
/// grayscale images (0.299 R + 0.587 G + 0.114 B; single-channel inputs are
/// used as they are). K1 = 0.01, K2 = 0.03, L = 1. Batches average over all
/// windows of all images.
double ssim(const Tensor& a, const Tensor& b);

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

/// Normalized 1-D Gaussian taps of the SSIM window; the 2-D window is their
/// outer product.
std::array<double, kSsimWindow> ssim_taps();

struct LabelGrid {
  int height = 0;
  int width = 0;
  std::vector<int> labels;  // row-major

  friend bool operator==(const LabelGrid&, const LabelGrid&) = default;
};

using Palette = std::vector<std::array<real, 3>>;

/// Nearest palette color per pixel by Euclidean RGB distance; ties go to the
/// lowest class index. `image` is (1,3,H,W).
LabelGrid quantize_to_labels(const Tensor& image, const Palette& palette);

struct SegmentationScores {
  double pixel_acc = 0.0;
  double class_acc = 0.0;  // mean recall over classes present in the ground truth
  double mean_iou = 0.0;   // mean IoU over the same classes
  /// Per class; empty when the class has no ground-truth pixels.
  std::vector<std::optional<double>> class_recall;
  std::vector<std::optional<double>> class_iou;
};

SegmentationScores segmentation_scores(const LabelGrid& pred, const LabelGrid& gt, int num_classes);

struct FusionHistogram {
  std::vector<double> bin_lo;
  std::vector<double> bin_hi;
  std::vector<double> mass;  // sums to 1
  double mean = 0.0;
  std::int64_t count = 0;
};

/// Histogram over [0, 1] with right-open bins except the last. Every value
/// must lie in (0, 1).
FusionHistogram fusion_weight_histogram(const std::vector<Tensor>& alpha_maps, int bins);

std::string histogram_csv(const FusionHistogram& h);

struct ImageMetrics {
  std::string image_id;
  double psnr = 0.0;
  double ssim = 0.0;
  /// Segmentation scores exist only for label-domain outputs.
  std::optional<double> pixel_acc;
  std::optional<double> class_acc;
  std::optional<double> iou;
  std::vector<std::optional<double>> class_iou;
};

struct MetricReport {
  std::string checkpoint_id;
  std::string dataset_id;
  std::vector<ImageMetrics> images;

  /// Arithmetic mean of the per-image values, in image order. Segmentation
  /// means cover the images that have them.
  ImageMetrics aggregate() const;
  std::string csv() const;
  std::string json_summary() const;
};

}  // namespace scan
