#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "derm/dataset.hpp"
#include "derm/image.hpp"
#include "derm/model.hpp"

namespace derm {

inline constexpr int kHeatmapSize = 224;
inline constexpr double kOverlayAlpha = 0.4;

struct Heatmap {
  int height = 0, width = 0;
  std::vector<float> values;  // row-major, in [0, 1]
  int target_class = 0;
  std::string source_layer;  // backbone layer whose output was used
  // Pre-normalization map was constant: values are then all 1 (positive
  // map) or all 0 (zero map).
  bool degenerate = false;

  float at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

// Gradient-weighted class activation map of the backbone's final feature
// map, taken on preprocess_eval(image) with respect to the pre-softmax score
// of target_class.
Heatmap gradcam(Model& model, const Image& image, int target_class);

// The unnormalized rectified map sum_k alpha_k A^k at feature resolution,
// exposed for testing. Row-major [h][w].
std::vector<double> gradcam_raw(Model& model, const Image& image, int target_class, int& height, int& width);

struct OverlayFiles {
  std::filesystem::path overlay;  // the image blended with the JET heatmap
  std::filesystem::path sidecar;  // <stem>_cam.png, 8-bit heatmap
};

// 224x224 PNG of preprocess_eval(image) * (1 - 0.4) + jet(heatmap) * 0.4.
OverlayFiles write_overlay(const Image& image, const Heatmap& heatmap, const std::filesystem::path& out_path);

// Mean heatmap value inside and outside a box given in the source image's
// pixel frame (x0, y0, x1, y1 exclusive) of size src_width x src_height.
struct Localization {
  double mean_inside = 0;
  double mean_outside = 0;
  bool inside_wins() const { return mean_inside > mean_outside; }
};
Localization localization(const Heatmap& heatmap, const std::array<int, 4>& box, int src_width, int src_height);

struct GradcamItem {
  std::string image_id;
  int label = 0;
  int predicted = 0;
  OverlayFiles files;
  std::optional<Localization> localization;  // when the record carries a bbox
};

// One overlay per image, for its predicted class: <out_dir>/<image_id>_<class>.png.
// Records with bbox_x0..bbox_y1 metadata also get a localization score.
std::vector<GradcamItem> gradcam_batch(Model& model, const FileDataset& data, const std::filesystem::path& out_dir);

}  // namespace derm
