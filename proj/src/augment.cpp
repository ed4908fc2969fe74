#include "derm/augment.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "derm/error.hpp"
#include "derm/rng.hpp"

namespace derm {

namespace {

cv::Mat view(const Image& img) {
  return cv::Mat(img.height, img.width, CV_32FC3, const_cast<float*>(img.pixels.data()));
}

Image from_mat(const cv::Mat& m) {
  Image out(m.rows, m.cols);
  cv::Mat dst(m.rows, m.cols, CV_32FC3, out.pixels.data());
  m.copyTo(dst);
  return out;
}

void clamp_unit(Image& img) {
  for (float& v : img.pixels) v = std::clamp(v, 0.0f, 1.0f);
}

void require_nonempty(const Image& img) {
  if (img.empty() || img.pixels.size() != static_cast<std::size_t>(img.height) * img.width * 3)
    throw DataError("empty or malformed image");
}

}  // namespace

void TransformSpec::validate() const {
  if (output_size != kInputSize)
    throw ConfigError("output_size is fixed at " + std::to_string(kInputSize) + ", got " +
                      std::to_string(output_size));
  if (rotate && !(max_degrees >= 0.0 && max_degrees <= 180.0))
    throw ConfigError("max_degrees must lie in [0, 180]");
  if (crop && !(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0))
    throw ConfigError("crop scale range must satisfy 0 < min <= max <= 1");
  if (cutout) {
    if (cutout_side <= 0) throw ConfigError("cutout side must be positive");
    if (cutout_side >= output_size)
      throw ConfigError("cutout side " + std::to_string(cutout_side) + " must be smaller than the output side " +
                        std::to_string(output_size));
    if (cutout_count < 1) throw ConfigError("cutout count must be at least 1");
  }
}

TransformSpec tta_spec() {
  TransformSpec s;
  s.crop = false;
  s.cutout = false;
  return s;
}

Image resize_bilinear(const Image& img, int height, int width) {
  require_nonempty(img);
  if (height <= 0 || width <= 0) throw std::invalid_argument("resize target must be positive");
  if (height == img.height && width == img.width) return img;
  cv::Mat dst;
  cv::resize(view(img), dst, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
  Image out = from_mat(dst);
  clamp_unit(out);
  return out;
}

Image preprocess_eval(const Image& img) { return resize_bilinear(img, kInputSize, kInputSize); }

Image flip_horizontal(const Image& img) {
  Image out(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
  return out;
}

Image flip_vertical(const Image& img) {
  Image out(img.height, img.width);
  const std::size_t row = static_cast<std::size_t>(img.width) * 3;
  for (int y = 0; y < img.height; ++y)
    std::copy_n(img.pixels.begin() + static_cast<std::ptrdiff_t>((img.height - 1 - y) * row), row,
                out.pixels.begin() + static_cast<std::ptrdiff_t>(y * row));
  return out;
}

Image rotate(const Image& img, double degrees) {
  require_nonempty(img);
  const cv::Point2f centre(static_cast<float>(img.width - 1) / 2.0f, static_cast<float>(img.height - 1) / 2.0f);
  const cv::Mat m = cv::getRotationMatrix2D(centre, degrees, 1.0);
  cv::Mat dst;
  cv::warpAffine(view(img), dst, m, cv::Size(img.width, img.height), cv::INTER_LINEAR, cv::BORDER_REFLECT_101);
  Image out = from_mat(dst);
  clamp_unit(out);
  return out;
}

Image crop(const Image& img, int top, int left, int height, int width) {
  if (top < 0 || left < 0 || height <= 0 || width <= 0 || top + height > img.height || left + width > img.width)
    throw std::invalid_argument("crop window outside the image");
  Image out(height, width);
  for (int y = 0; y < height; ++y)
    std::copy_n(&img.pixels[(static_cast<std::size_t>(top + y) * img.width + left) * 3],
                static_cast<std::size_t>(width) * 3, &out.pixels[static_cast<std::size_t>(y) * width * 3]);
  return out;
}

void apply_cutout(Image& img, int top, int left, int side) {
  if (top < 0 || left < 0 || side <= 0 || top + side > img.height || left + side > img.width)
    throw std::invalid_argument("cutout square outside the image");
  for (int y = top; y < top + side; ++y)
    std::fill_n(&img.pixels[(static_cast<std::size_t>(y) * img.width + left) * 3], static_cast<std::size_t>(side) * 3,
                0.0f);
}

Image augment_train(const Image& img, const TransformSpec& spec, std::uint64_t seed) {
  spec.validate();
  require_nonempty(img);
  if (!spec.any_enabled()) return preprocess_eval(img);

  Rng rng(seed);
  const double scale = static_cast<double>(kWorkingFrame) / std::min(img.height, img.width);
  Image frame = resize_bilinear(img, std::max(1, static_cast<int>(std::lround(img.height * scale))),
                                std::max(1, static_cast<int>(std::lround(img.width * scale))));

  if (spec.rotate) frame = rotate(frame, rng.uniform(-spec.max_degrees, spec.max_degrees));
  if (spec.hflip && rng.bernoulli(0.5)) frame = flip_horizontal(frame);
  if (spec.vflip && rng.bernoulli(0.5)) frame = flip_vertical(frame);
  if (spec.crop) {
    const double area = rng.uniform(spec.crop_scale_min, spec.crop_scale_max);
    const double side_scale = std::sqrt(area);
    const int h = std::clamp(static_cast<int>(std::lround(frame.height * side_scale)), 1, frame.height);
    const int w = std::clamp(static_cast<int>(std::lround(frame.width * side_scale)), 1, frame.width);
    const int top = static_cast<int>(rng.below(static_cast<std::uint64_t>(frame.height - h + 1)));
    const int left = static_cast<int>(rng.below(static_cast<std::uint64_t>(frame.width - w + 1)));
    frame = crop(frame, top, left, h, w);
  }
  if (spec.cutout) {
    const int side = spec.cutout_side;
    if (side <= frame.height && side <= frame.width) {
      for (int i = 0; i < spec.cutout_count; ++i) {
        const int top = static_cast<int>(rng.below(static_cast<std::uint64_t>(frame.height - side + 1)));
        const int left = static_cast<int>(rng.below(static_cast<std::uint64_t>(frame.width - side + 1)));
        apply_cutout(frame, top, left, side);
      }
    }
  }
  return resize_bilinear(frame, spec.output_size, spec.output_size);
}

std::vector<Image> tta_variants(const Image& img, int n, std::uint64_t seed) {
  if (n < 1) throw ConfigError("TTA needs at least one variant, got " + std::to_string(n));
  std::vector<Image> out;
  out.reserve(static_cast<std::size_t>(n));
  out.push_back(preprocess_eval(img));
  const TransformSpec spec = tta_spec();
  for (int i = 1; i < n; ++i) out.push_back(augment_train(img, spec, mix_seed(seed, {static_cast<std::uint64_t>(i)})));
  return out;
}

}  // namespace derm
