#include "derm/image.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <stdexcept>

#include "derm/error.hpp"

namespace derm {

namespace fs = std::filesystem;

namespace {

cv::Mat to_bgr8(const Image& img) {
  cv::Mat out(img.height, img.width, CV_8UC3);
  for (int y = 0; y < img.height; ++y) {
    auto* row = out.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(img.at(y, x, c), 0.0f, 1.0f);
        row[x][2 - c] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
  }
  return out;
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

void write_mat(const cv::Mat& m, const fs::path& path, const std::vector<int>& params) {
  ensure_parent(path);
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), m, params);
  } catch (const cv::Exception& e) {
    throw Error("cannot write image " + path.string() + ": " + e.what());
  }
  if (!ok) throw Error("cannot write image " + path.string());
}

}  // namespace

Image read_image(const fs::path& path, const std::string& image_id) {
  const std::string id = image_id.empty() ? path.stem().string() : image_id;
  if (!fs::exists(path)) throw ImageReadError(id, "image " + id + " not found at " + path.string());
  cv::Mat bgr;
  try {
    bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    throw ImageReadError(id, "image " + id + " unreadable (" + path.string() + "): " + e.what());
  }
  if (bgr.empty() || bgr.rows <= 0 || bgr.cols <= 0)
    throw ImageReadError(id, "image " + id + " unreadable (" + path.string() + ")");
  Image img(bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(row[x][2 - c]) / 255.0f;
  }
  return img;
}

void write_png(const Image& img, const fs::path& path) { write_mat(to_bgr8(img), path, {}); }

void write_jpeg(const Image& img, const fs::path& path, int quality) {
  write_mat(to_bgr8(img), path, {cv::IMWRITE_JPEG_QUALITY, quality});
}

void write_gray_png(const std::vector<float>& values, int height, int width, const fs::path& path) {
  if (values.size() != static_cast<std::size_t>(height) * width)
    throw std::invalid_argument("gray image size does not match dimensions");
  cv::Mat m(height, width, CV_8UC1);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const float v = std::clamp(values[static_cast<std::size_t>(y) * width + x], 0.0f, 1.0f);
      m.at<unsigned char>(y, x) = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
  write_mat(m, path, {});
}

std::vector<float> read_gray_png(const fs::path& path, int& height, int& width) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw DataError("cannot read " + path.string());
  height = m.rows;
  width = m.cols;
  std::vector<float> out(static_cast<std::size_t>(height) * width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      out[static_cast<std::size_t>(y) * width + x] = static_cast<float>(m.at<unsigned char>(y, x)) / 255.0f;
  return out;
}

Tensor to_batch(const std::vector<Image>& images) {
  if (images.empty()) throw std::invalid_argument("cannot batch zero images");
  const int h = images.front().height;
  const int w = images.front().width;
  Tensor t({static_cast<int>(images.size()), 3, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = images[n];
    if (img.height != h || img.width != w) throw std::invalid_argument("images in a batch must share one size");
    float* dst = t.data() + n * 3 * plane;
    for (std::size_t i = 0; i < plane; ++i)
      for (int c = 0; c < 3; ++c) dst[static_cast<std::size_t>(c) * plane + i] = img.pixels[i * 3 + c];
  }
  return t;
}

Tensor to_batch(const Image& image) { return to_batch(std::vector<Image>{image}); }

}  // namespace derm
