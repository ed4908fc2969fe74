#include "derm/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "derm/augment.hpp"
#include "derm/error.hpp"

namespace derm {

namespace fs = std::filesystem;

std::vector<double> gradcam_raw(Model& model, const Image& image, int target_class, int& height, int& width) {
  const Model::ClassScoreGradient g = model.class_score_gradient(to_batch(preprocess_eval(image)), target_class);
  const int channels = g.features.dim(1);
  height = g.features.dim(2);
  width = g.features.dim(3);
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  std::vector<double> cam(plane, 0.0);
  for (int k = 0; k < channels; ++k) {
    const float* a = g.features.data() + k * plane;
    const float* d = g.gradient.data() + k * plane;
    double alpha = 0;
    for (std::size_t i = 0; i < plane; ++i) alpha += d[i];
    alpha /= static_cast<double>(plane);
    for (std::size_t i = 0; i < plane; ++i) cam[i] += alpha * a[i];
  }
  for (double& v : cam) v = std::max(v, 0.0);
  return cam;
}

Heatmap gradcam(Model& model, const Image& image, int target_class) {
  if (model.backbone().empty()) throw ModelError("model has no convolutional backbone");
  int h = 0, w = 0;
  std::vector<double> raw = gradcam_raw(model, image, target_class, h, w);

  cv::Mat src(h, w, CV_64F, raw.data());
  cv::Mat up;
  cv::resize(src, up, cv::Size(kHeatmapSize, kHeatmapSize), 0, 0, cv::INTER_LINEAR);
  double lo = 0, hi = 0;
  cv::minMaxLoc(up, &lo, &hi);

  Heatmap out;
  out.height = out.width = kHeatmapSize;
  out.target_class = target_class;
  out.source_layer = "backbone." + std::to_string(model.backbone().size() - 1);
  out.values.resize(static_cast<std::size_t>(kHeatmapSize) * kHeatmapSize);
  // Float32 features: spread below single-precision resolution counts as flat.
  if (hi - lo <= 1e-6 * hi || hi <= 0.0) {
    out.degenerate = true;
    std::fill(out.values.begin(), out.values.end(), hi > 0 ? 1.0f : 0.0f);
    return out;
  }
  for (int y = 0; y < kHeatmapSize; ++y)
    for (int x = 0; x < kHeatmapSize; ++x)
      out.values[static_cast<std::size_t>(y) * kHeatmapSize + x] =
          static_cast<float>((up.at<double>(y, x) - lo) / (hi - lo));
  return out;
}

OverlayFiles write_overlay(const Image& image, const Heatmap& heatmap, const fs::path& out_path) {
  if (heatmap.height != kHeatmapSize || heatmap.width != kHeatmapSize ||
      heatmap.values.size() != static_cast<std::size_t>(kHeatmapSize) * kHeatmapSize)
    throw std::invalid_argument("heatmap must be 224x224");
  const Image base = preprocess_eval(image);
  cv::Mat gray(kHeatmapSize, kHeatmapSize, CV_8UC1);
  for (int y = 0; y < kHeatmapSize; ++y)
    for (int x = 0; x < kHeatmapSize; ++x)
      gray.at<unsigned char>(y, x) =
          static_cast<unsigned char>(std::lround(std::clamp(heatmap.at(y, x), 0.0f, 1.0f) * 255.0f));
  cv::Mat jet;
  cv::applyColorMap(gray, jet, cv::COLORMAP_JET);

  Image blend(kHeatmapSize, kHeatmapSize);
  for (int y = 0; y < kHeatmapSize; ++y)
    for (int x = 0; x < kHeatmapSize; ++x) {
      const cv::Vec3b bgr = jet.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c) {
        const double colour = bgr[2 - c] / 255.0;
        blend.at(y, x, c) = static_cast<float>((1.0 - kOverlayAlpha) * base.at(y, x, c) + kOverlayAlpha * colour);
      }
    }
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  OverlayFiles files;
  files.overlay = out_path;
  files.sidecar = out_path.parent_path() / (out_path.stem().string() + "_cam.png");
  write_png(blend, files.overlay);
  write_gray_png(heatmap.values, heatmap.height, heatmap.width, files.sidecar);
  return files;
}

Localization localization(const Heatmap& heatmap, const std::array<int, 4>& box, int src_width, int src_height) {
  const double sx = static_cast<double>(heatmap.width) / src_width;
  const double sy = static_cast<double>(heatmap.height) / src_height;
  const int x0 = std::clamp(static_cast<int>(std::floor(box[0] * sx)), 0, heatmap.width);
  const int x1 = std::clamp(static_cast<int>(std::ceil(box[2] * sx)), 0, heatmap.width);
  const int y0 = std::clamp(static_cast<int>(std::floor(box[1] * sy)), 0, heatmap.height);
  const int y1 = std::clamp(static_cast<int>(std::ceil(box[3] * sy)), 0, heatmap.height);
  double in = 0, out = 0;
  std::size_t n_in = 0, n_out = 0;
  for (int y = 0; y < heatmap.height; ++y)
    for (int x = 0; x < heatmap.width; ++x) {
      const bool inside = x >= x0 && x < x1 && y >= y0 && y < y1;
      (inside ? in : out) += heatmap.at(y, x);
      ++(inside ? n_in : n_out);
    }
  Localization l;
  l.mean_inside = n_in ? in / static_cast<double>(n_in) : 0.0;
  l.mean_outside = n_out ? out / static_cast<double>(n_out) : 0.0;
  return l;
}

namespace {

std::optional<std::array<int, 4>> bbox_of(const LesionRecord& r) {
  static const char* keys[] = {"bbox_x0", "bbox_y0", "bbox_x1", "bbox_y1"};
  std::array<int, 4> box{};
  for (int i = 0; i < 4; ++i) {
    const auto it = r.metadata.find(keys[i]);
    if (it == r.metadata.end() || it->second.empty()) return std::nullopt;
    try {
      box[static_cast<std::size_t>(i)] = std::stoi(it->second);
    } catch (const std::exception&) {
      throw CatalogError("bad " + std::string(keys[i]) + " for " + r.image_id);
    }
  }
  return box;
}

}  // namespace

std::vector<GradcamItem> gradcam_batch(Model& model, const FileDataset& data, const fs::path& out_dir) {
  std::vector<GradcamItem> items;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Image img = data.image(i);
    GradcamItem item;
    item.image_id = data.id(i);
    item.label = data.label(i);
    const Tensor logits = model.logits(to_batch(preprocess_eval(img)));
    int best = 0;
    for (int c = 1; c < logits.dim(1); ++c)
      if (logits[static_cast<std::size_t>(c)] > logits[static_cast<std::size_t>(best)]) best = c;
    item.predicted = best;
    const Heatmap h = gradcam(model, img, best);
    item.files = write_overlay(img, h, out_dir / (item.image_id + "_" + std::string(code_of(class_from_index(best))) + ".png"));
    if (const auto box = bbox_of(data.record(i))) item.localization = localization(h, *box, img.width, img.height);
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace derm
