#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "derm/tensor.hpp"

namespace derm {

// Interleaved RGB image with values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;  // height * width * 3, row-major, RGB

  Image() = default;
  Image(int h, int w, float fill = 0.0f)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

  bool empty() const { return height <= 0 || width <= 0; }
  float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  bool operator==(const Image& other) const = default;
};

// Decodes any format OpenCV reads. Throws ImageReadError tagged with image_id.
Image read_image(const std::filesystem::path& path, const std::string& image_id = {});

void write_png(const Image& img, const std::filesystem::path& path);
void write_jpeg(const Image& img, const std::filesystem::path& path, int quality = 95);

// Single-channel 8-bit PNG from values in [0, 1] (rounded to 1/255 steps).
void write_gray_png(const std::vector<float>& values, int height, int width, const std::filesystem::path& path);
std::vector<float> read_gray_png(const std::filesystem::path& path, int& height, int& width);

// Stacks equally sized images into an NCHW batch.
Tensor to_batch(const std::vector<Image>& images);
Tensor to_batch(const Image& image);

}  // namespace derm
