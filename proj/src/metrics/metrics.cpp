#include "scan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "scan/error.hpp"

namespace scan {

namespace {

double unit(real v) { return (static_cast<double>(v) + 1.0) * 0.5; }

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) throw ShapeError(std::string(what) + ": " + a.shape().str() + " vs " + b.shape().str());
}

// Grayscale planes in [0,1], one per batch item.
std::vector<std::vector<double>> gray_planes(const Tensor& t) {
  const Shape& s = t.shape();
  if (s.c != 3 && s.c != 1) throw ShapeError("ssim expects 1 or 3 channels, got " + s.str());
  const std::size_t plane = static_cast<std::size_t>(s.plane());
  const auto d = t.data();
  std::vector<std::vector<double>> out(static_cast<std::size_t>(s.n), std::vector<double>(plane));
  for (int n = 0; n < s.n; ++n) {
    const std::size_t base = static_cast<std::size_t>(n) * s.c * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      out[static_cast<std::size_t>(n)][p] =
          s.c == 1 ? unit(d[base + p])
                   : 0.299 * unit(d[base + p]) + 0.587 * unit(d[base + plane + p]) + 0.114 * unit(d[base + 2 * plane + p]);
    }
  }
  return out;
}

// Valid-window Gaussian filter, rows then columns.
std::vector<double> filter_valid(const std::vector<double>& x, int h, int w, const std::array<double, kSsimWindow>& k) {
  const int ow = w - kSsimWindow + 1;
  const int oh = h - kSsimWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < ow; ++j) {
      double acc = 0.0;
      for (int t = 0; t < kSsimWindow; ++t) acc += k[static_cast<std::size_t>(t)] * x[static_cast<std::size_t>(i) * w + j + t];
      rows[static_cast<std::size_t>(i) * ow + j] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int i = 0; i < oh; ++i) {
    for (int j = 0; j < ow; ++j) {
      double acc = 0.0;
      for (int t = 0; t < kSsimWindow; ++t) acc += k[static_cast<std::size_t>(t)] * rows[static_cast<std::size_t>(i + t) * ow + j];
      out[static_cast<std::size_t>(i) * ow + j] = acc;
    }
  }
  return out;
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b) {
  require_same(a, b, "psnr");
  const auto da = a.data();
  const auto db = b.data();
  if (da.empty()) throw UsageError("psnr of empty images");
  double sum = 0.0;
  for (std::size_t i = 0; i < da.size(); ++i) {
    const double e = unit(da[i]) - unit(db[i]);
    sum += e * e;
  }
  const double mse = sum / static_cast<double>(da.size());
  if (mse < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

std::array<double, kSsimWindow> ssim_taps() {
  std::array<double, kSsimWindow> k{};
  double total = 0.0;
  for (int t = 0; t < kSsimWindow; ++t) {
    const double d = t - kSsimWindow / 2;
    k[static_cast<std::size_t>(t)] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    total += k[static_cast<std::size_t>(t)];
  }
  for (double& v : k) v /= total;
  return k;
}

double ssim(const Tensor& a, const Tensor& b) {
  require_same(a, b, "ssim");
  const Shape& s = a.shape();
  if (s.h < kSsimWindow || s.w < kSsimWindow) {
    throw UsageError("ssim needs images of at least 11x11, got " + s.str());
  }
  constexpr double C1 = 0.01 * 0.01;
  constexpr double C2 = 0.03 * 0.03;
  const auto k = ssim_taps();
  const auto ga = gray_planes(a);
  const auto gb = gray_planes(b);
  double total = 0.0;
  std::size_t windows = 0;
  for (std::size_t n = 0; n < ga.size(); ++n) {
    const auto& x = ga[n];
    const auto& y = gb[n];
    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (std::size_t p = 0; p < x.size(); ++p) {
      xx[p] = x[p] * x[p];
      yy[p] = y[p] * y[p];
      xy[p] = x[p] * y[p];
    }
    const auto mx = filter_valid(x, s.h, s.w, k);
    const auto my = filter_valid(y, s.h, s.w, k);
    const auto exx = filter_valid(xx, s.h, s.w, k);
    const auto eyy = filter_valid(yy, s.h, s.w, k);
    const auto exy = filter_valid(xy, s.h, s.w, k);
    for (std::size_t p = 0; p < mx.size(); ++p) {
      const double vx = exx[p] - mx[p] * mx[p];
      const double vy = eyy[p] - my[p] * my[p];
      const double mxy = mx[p] * my[p];
      const double cxy = exy[p] - mxy;
      total += ((2.0 * mxy + C1) * (2.0 * cxy + C2)) /
               ((mx[p] * mx[p] + my[p] * my[p] + C1) * (vx + vy + C2));
    }
    windows += mx.size();
  }
  return total / static_cast<double>(windows);
}

LabelGrid quantize_to_labels(const Tensor& image, const Palette& palette) {
  if (palette.empty()) throw UsageError("quantize_to_labels: empty palette");
  const Shape& s = image.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("quantize_to_labels expects (1,3,H,W), got " + s.str());
  const std::size_t plane = static_cast<std::size_t>(s.plane());
  const auto d = image.data();
  LabelGrid out{s.h, s.w, std::vector<int>(plane)};
  for (std::size_t p = 0; p < plane; ++p) {
    int best = 0;
    double best_d = 0.0;
    for (std::size_t k = 0; k < palette.size(); ++k) {
      double dist = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double e = static_cast<double>(d[c * plane + p]) - static_cast<double>(palette[k][c]);
        dist += e * e;
      }
      if (k == 0 || dist < best_d) {
        best = static_cast<int>(k);
        best_d = dist;
      }
    }
    out.labels[p] = best;
  }
  return out;
}

SegmentationScores segmentation_scores(const LabelGrid& pred, const LabelGrid& gt, int num_classes) {
  if (num_classes < 1) throw UsageError("segmentation_scores: need at least one class");
  if (pred.height != gt.height || pred.width != gt.width || pred.labels.size() != gt.labels.size()) {
    throw ShapeError("segmentation_scores: prediction and ground truth grids differ in shape");
  }
  if (gt.labels.empty()) throw UsageError("segmentation_scores: empty grids");
  const auto K = static_cast<std::size_t>(num_classes);
  std::vector<std::int64_t> confusion(K * K, 0);  // [gt][pred]
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const int g = gt.labels[i];
    const int q = pred.labels[i];
    if (g < 0 || g >= num_classes || q < 0 || q >= num_classes) {
      throw DataError("segmentation_scores: label out of range [0, " + std::to_string(num_classes) + ")");
    }
    ++confusion[static_cast<std::size_t>(g) * K + static_cast<std::size_t>(q)];
  }
  SegmentationScores out;
  out.class_recall.resize(K);
  out.class_iou.resize(K);
  std::int64_t correct = 0;
  double recall_sum = 0.0;
  double iou_sum = 0.0;
  int present = 0;
  for (std::size_t c = 0; c < K; ++c) {
    const std::int64_t tp = confusion[c * K + c];
    correct += tp;
    std::int64_t gt_count = 0;
    std::int64_t pred_count = 0;
    for (std::size_t o = 0; o < K; ++o) {
      gt_count += confusion[c * K + o];
      pred_count += confusion[o * K + c];
    }
    if (gt_count == 0) continue;
    const double recall = static_cast<double>(tp) / static_cast<double>(gt_count);
    const double iou = static_cast<double>(tp) / static_cast<double>(gt_count + pred_count - tp);
    out.class_recall[c] = recall;
    out.class_iou[c] = iou;
    recall_sum += recall;
    iou_sum += iou;
    ++present;
  }
  out.pixel_acc = static_cast<double>(correct) / static_cast<double>(gt.labels.size());
  out.class_acc = recall_sum / present;
  out.mean_iou = iou_sum / present;
  return out;
}

FusionHistogram fusion_weight_histogram(const std::vector<Tensor>& alpha_maps, int bins) {
  if (bins < 2) throw UsageError("fusion_weight_histogram: need at least 2 bins, got " + std::to_string(bins));
  FusionHistogram h;
  std::vector<std::int64_t> counts(static_cast<std::size_t>(bins), 0);
  double sum = 0.0;
  for (const Tensor& t : alpha_maps) {
    for (real v : t.data()) {
      if (!(v > 0.0f && v < 1.0f)) {
        throw DataError("fusion weight " + std::to_string(v) + " is outside (0, 1); the fusion block is broken");
      }
      const int b = std::min(bins - 1, static_cast<int>(static_cast<double>(v) * bins));
      ++counts[static_cast<std::size_t>(b)];
      sum += v;
      ++h.count;
    }
  }
  if (h.count == 0) throw UsageError("fusion_weight_histogram: no fusion weights given");
  for (int b = 0; b < bins; ++b) {
    h.bin_lo.push_back(static_cast<double>(b) / bins);
    h.bin_hi.push_back(static_cast<double>(b + 1) / bins);
    h.mass.push_back(static_cast<double>(counts[static_cast<std::size_t>(b)]) / static_cast<double>(h.count));
  }
  h.mean = sum / static_cast<double>(h.count);
  return h;
}

std::string histogram_csv(const FusionHistogram& h) {
  std::ostringstream out;
  out << "bin_lo,bin_hi,mass\n";
  char line[96];
  for (std::size_t b = 0; b < h.mass.size(); ++b) {
    std::snprintf(line, sizeof line, "%.6g,%.6g,%.9g\n", h.bin_lo[b], h.bin_hi[b], h.mass[b]);
    out << line;
  }
  return out.str();
}

namespace {

void accumulate(std::optional<double>& total, int& n, const std::optional<double>& v) {
  if (!v) return;
  total = total.value_or(0.0) + *v;
  ++n;
}

std::string cell(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10f", *v);
  return buf;
}

nlohmann::json json_value(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

ImageMetrics MetricReport::aggregate() const {
  ImageMetrics m;
  m.image_id = "mean";
  if (images.empty()) return m;
  int n_pix = 0, n_cls = 0, n_iou = 0;
  for (const ImageMetrics& i : images) {
    m.psnr += i.psnr;
    m.ssim += i.ssim;
    accumulate(m.pixel_acc, n_pix, i.pixel_acc);
    accumulate(m.class_acc, n_cls, i.class_acc);
    accumulate(m.iou, n_iou, i.iou);
  }
  const double n = static_cast<double>(images.size());
  m.psnr /= n;
  m.ssim /= n;
  if (m.pixel_acc) *m.pixel_acc /= n_pix;
  if (m.class_acc) *m.class_acc /= n_cls;
  if (m.iou) *m.iou /= n_iou;
  return m;
}

std::string MetricReport::csv() const {
  std::ostringstream out;
  out << "image_id,psnr,ssim,pixel_acc,class_acc,iou\n";
  char line[128];
  for (const ImageMetrics& i : images) {
    std::snprintf(line, sizeof line, "%s,%.10f,%.10f,", i.image_id.c_str(), i.psnr, i.ssim);
    out << line << cell(i.pixel_acc) << "," << cell(i.class_acc) << "," << cell(i.iou) << "\n";
  }
  return out.str();
}

std::string MetricReport::json_summary() const {
  using nlohmann::json;
  const ImageMetrics a = aggregate();
  // Per-class IoU averaged over the images where the class is present.
  json per_class = json::array();
  std::size_t K = 0;
  for (const ImageMetrics& i : images) K = std::max(K, i.class_iou.size());
  for (std::size_t c = 0; c < K; ++c) {
    double s = 0.0;
    int n = 0;
    for (const ImageMetrics& i : images) {
      if (c < i.class_iou.size() && i.class_iou[c]) {
        s += *i.class_iou[c];
        ++n;
      }
    }
    per_class.push_back(n > 0 ? json(s / n) : json(nullptr));
  }
  const json j = {{"checkpoint", checkpoint_id},
                  {"dataset", dataset_id},
                  {"count", images.size()},
                  {"psnr", a.psnr},
                  {"ssim", a.ssim},
                  {"pixel_acc", json_value(a.pixel_acc)},
                  {"class_acc", json_value(a.class_acc)},
                  {"iou", json_value(a.iou)},
                  {"class_iou", per_class}};
  return j.dump(2) + "\n";
}

}  // namespace scan
