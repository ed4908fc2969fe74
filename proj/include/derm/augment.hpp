#pragma once

#include <cstdint>
#include <vector>

#include "derm/image.hpp"

namespace derm {

inline constexpr int kInputSize = 224;
// Shorter side of the working frame in which geometric augmentation happens.
inline constexpr int kWorkingFrame = 256;

struct TransformSpec {
  bool rotate = true;
  double max_degrees = 180.0;
  bool hflip = true;
  bool vflip = true;
  bool crop = true;
  double crop_scale_min = 0.8;  // fraction of area, aspect ratio preserved
  double crop_scale_max = 1.0;
  bool cutout = true;
  int cutout_side = 32;
  int cutout_count = 1;
  int output_size = kInputSize;

  bool any_enabled() const { return rotate || hflip || vflip || crop || cutout; }
  // Throws ConfigError on out-of-range settings.
  void validate() const;

  bool operator==(const TransformSpec&) const = default;
};

// Light variant used for test-time augmentation: flips and rotation only.
TransformSpec tta_spec();

Image resize_bilinear(const Image& img, int height, int width);
Image preprocess_eval(const Image& img);

// Training pipeline, in order: working-frame rescale, rotation, flips, area
// crop, cutout, resize to output_size. With every toggle off this is exactly
// preprocess_eval. Deterministic in (img, spec, seed).
Image augment_train(const Image& img, const TransformSpec& spec, std::uint64_t seed);

// Variant 0 is preprocess_eval(img); the others run tta_spec() under seeds
// derived from `seed`.
std::vector<Image> tta_variants(const Image& img, int n, std::uint64_t seed);

// Primitive operations, exposed for testing.
Image flip_horizontal(const Image& img);
Image flip_vertical(const Image& img);
// Rotation about the centre; uncovered corners are filled by reflecting the
// image at its border.
Image rotate(const Image& img, double degrees);
Image crop(const Image& img, int top, int left, int height, int width);
// Zeroes the side x side square with top-left corner (top, left); the square
// must lie inside the image.
void apply_cutout(Image& img, int top, int left, int side);

}  // namespace derm
