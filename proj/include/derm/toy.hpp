#pragma once

#include <array>
#include <cstdint>
#include <filesystem>

#include "derm/classes.hpp"
#include "derm/image.hpp"

namespace derm {

// Synthetic stand-in for a dermoscopy catalog: one coloured shape per class
// on a noisy skin-tone background. Extra images of a lesion re-render the
// same shape at another position and angle.
struct ToyOptions {
  PerClass<int> lesions{50, 55, 60, 40, 65, 180, 40};
  int images = 700;  // >= total lesions; the surplus become duplicates
  int width = 256;
  int height = 192;
  std::uint64_t seed = 0;
};

struct ToySample {
  Image image;
  int label = 0;
  std::array<int, 4> bbox{};  // x0, y0, x1, y1 (exclusive) in image pixels
};

// Shape parameters come from `lesion_seed`, placement and noise from
// `view_seed`.
ToySample render_toy_sample(int label, std::uint64_t lesion_seed, std::uint64_t view_seed, int height = 192,
                            int width = 256);

struct ToyDataset {
  std::filesystem::path metadata;    // metadata.csv
  std::filesystem::path images_dir;  // <image_id>.jpg files
  int images = 0;
  int lesions = 0;
};

// Writes metadata.csv (lesion_id, image_id, dx, dx_type, bbox_x0, bbox_y0,
// bbox_x1, bbox_y1) and images/ under out_dir.
ToyDataset generate_toy_dataset(const std::filesystem::path& out_dir, const ToyOptions& options = {});

}  // namespace derm
