#include "derm/toy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <vector>

#include "derm/error.hpp"
#include "derm/rng.hpp"

namespace derm {

namespace fs = std::filesystem;

namespace {

enum class Glyph { square, circle, triangle, cross, ring, ellipse, diamond };

struct Style {
  Glyph shape;
  cv::Scalar rgb;
};

// Indexed by class: akiec, bcc, bkl, df, mel, nv, vasc.
const std::array<Style, kNumClasses> kStyles = {{
    {Glyph::square, {200, 30, 30}},
    {Glyph::circle, {40, 70, 210}},
    {Glyph::triangle, {230, 200, 30}},
    {Glyph::cross, {30, 160, 60}},
    {Glyph::ring, {60, 20, 80}},
    {Glyph::ellipse, {120, 70, 30}},
    {Glyph::diamond, {220, 40, 200}},
}};

std::vector<cv::Point> polygon(const std::vector<cv::Point2d>& unit, cv::Point2d centre, double radius, double angle) {
  std::vector<cv::Point> out;
  const double c = std::cos(angle), s = std::sin(angle);
  for (const auto& p : unit)
    out.emplace_back(static_cast<int>(std::lround(centre.x + radius * (c * p.x - s * p.y))),
                     static_cast<int>(std::lround(centre.y + radius * (s * p.x + c * p.y))));
  return out;
}

}  // namespace

ToySample render_toy_sample(int label, std::uint64_t lesion_seed, std::uint64_t view_seed, int height, int width) {
  if (label < 0 || label >= kNumClasses) throw std::invalid_argument("toy label out of range");
  Rng lesion(lesion_seed);
  Rng view(view_seed);
  const Style& style = kStyles[static_cast<std::size_t>(label)];
  const double radius = lesion.uniform(0.16, 0.24) * std::min(height, width);
  const double tint = lesion.uniform(-12, 12);
  cv::Scalar colour = style.rgb;
  for (int c = 0; c < 3; ++c) colour[c] = std::clamp(colour[c] + tint, 0.0, 255.0);

  // Skin-tone background with a soft vertical gradient.
  const cv::Scalar skin(view.uniform(205, 235), view.uniform(160, 185), view.uniform(130, 155));
  cv::Mat rgb(height, width, CV_8UC3);
  const double shade = view.uniform(-15, 15);
  for (int y = 0; y < height; ++y) {
    const double g = shade * (static_cast<double>(y) / height - 0.5);
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c)
        rgb.at<cv::Vec3b>(y, x)[c] = cv::saturate_cast<uchar>(skin[c] + g + view.normal() * 6.0);
  }

  const double margin = radius * 1.05;
  const cv::Point2d centre(view.uniform(margin, width - margin), view.uniform(margin, height - margin));
  const double angle = view.uniform(0, 2 * std::numbers::pi);
  cv::Mat mask = cv::Mat::zeros(height, width, CV_8UC1);
  switch (style.shape) {
    case Glyph::square:
      cv::fillPoly(mask, std::vector{polygon({{-0.75, -0.75}, {0.75, -0.75}, {0.75, 0.75}, {-0.75, 0.75}}, centre,
                                             radius, angle)},
                   255, cv::LINE_AA);
      break;
    case Glyph::circle:
      cv::circle(mask, centre, static_cast<int>(radius * 0.9), 255, cv::FILLED, cv::LINE_AA);
      break;
    case Glyph::triangle:
      cv::fillPoly(mask, std::vector{polygon({{0, -1}, {0.87, 0.5}, {-0.87, 0.5}}, centre, radius, angle)}, 255,
                   cv::LINE_AA);
      break;
    case Glyph::cross:
      cv::fillPoly(mask,
                   std::vector{polygon({{-0.3, -1}, {0.3, -1}, {0.3, -0.3}, {1, -0.3}, {1, 0.3}, {0.3, 0.3}, {0.3, 1},
                                        {-0.3, 1}, {-0.3, 0.3}, {-1, 0.3}, {-1, -0.3}, {-0.3, -0.3}},
                                       centre, radius, angle)},
                   255, cv::LINE_AA);
      break;
    case Glyph::ring:
      cv::circle(mask, centre, static_cast<int>(radius * 0.9), 255, static_cast<int>(radius * 0.35), cv::LINE_AA);
      break;
    case Glyph::ellipse:
      cv::ellipse(mask, cv::RotatedRect(centre, cv::Size2f(static_cast<float>(radius * 1.9), static_cast<float>(radius * 1.2)),
                                        static_cast<float>(angle * 180 / std::numbers::pi)),
                  255, cv::FILLED, cv::LINE_AA);
      break;
    case Glyph::diamond:
      cv::fillPoly(mask, std::vector{polygon({{0, -1}, {0.6, 0}, {0, 1}, {-0.6, 0}}, centre, radius, angle)}, 255,
                   cv::LINE_AA);
      break;
  }
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double a = mask.at<uchar>(y, x) / 255.0;
      if (a == 0) continue;
      auto& px = rgb.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c)
        px[c] = cv::saturate_cast<uchar>((1 - a) * px[c] + a * (colour[c] + view.normal() * 8.0));
    }

  ToySample out;
  out.label = label;
  const cv::Rect box = cv::boundingRect(mask);
  out.bbox = {box.x, box.y, box.x + box.width, box.y + box.height};
  out.image = Image(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = rgb.at<cv::Vec3b>(y, x)[c] / 255.0f;
  return out;
}

ToyDataset generate_toy_dataset(const fs::path& out_dir, const ToyOptions& options) {
  int lesion_total = 0;
  for (int n : options.lesions) {
    if (n < 0) throw ConfigError("toy lesion counts must be non-negative");
    lesion_total += n;
  }
  if (lesion_total == 0) throw ConfigError("toy dataset needs at least one lesion");
  if (options.images < lesion_total) throw ConfigError("toy image count must be at least the lesion count");

  ToyDataset ds;
  ds.metadata = out_dir / "metadata.csv";
  ds.images_dir = out_dir / "images";
  fs::create_directories(ds.images_dir);

  struct LesionSpec {
    int label;
    std::uint64_t seed;
    int views = 1;
  };
  std::vector<LesionSpec> lesions;
  for (int c = 0; c < kNumClasses; ++c)
    for (int i = 0; i < options.lesions[static_cast<std::size_t>(c)]; ++i)
      lesions.push_back({c, mix_seed(options.seed, {static_cast<std::uint64_t>(lesions.size()), 1})});
  Rng rng(mix_seed(options.seed, {2}));
  for (int extra = options.images - lesion_total; extra > 0; --extra)
    ++lesions[rng.below(lesions.size())].views;
  // Interleave classes in the id sequence.
  rng.shuffle(lesions);

  std::ofstream meta(ds.metadata);
  if (!meta) throw Error("cannot write " + ds.metadata.string());
  meta << "lesion_id,image_id,dx,dx_type,bbox_x0,bbox_y0,bbox_x1,bbox_y1\n";
  int image_no = 0;
  for (std::size_t l = 0; l < lesions.size(); ++l) {
    char lesion_id[32];
    std::snprintf(lesion_id, sizeof lesion_id, "TOYL_%07zu", l);
    for (int v = 0; v < lesions[l].views; ++v) {
      char image_id[32];
      std::snprintf(image_id, sizeof image_id, "TOY_%07d", image_no++);
      const ToySample s = render_toy_sample(lesions[l].label, lesions[l].seed,
                                            mix_seed(lesions[l].seed, {static_cast<std::uint64_t>(v), 3}),
                                            options.height, options.width);
      write_jpeg(s.image, ds.images_dir / (std::string(image_id) + ".jpg"), 95);
      meta << lesion_id << ',' << image_id << ',' << code_of(class_from_index(s.label)) << ",synthetic," << s.bbox[0]
           << ',' << s.bbox[1] << ',' << s.bbox[2] << ',' << s.bbox[3] << '\n';
    }
  }
  if (!meta) throw Error("failed writing " + ds.metadata.string());
  ds.images = image_no;
  ds.lesions = static_cast<int>(lesions.size());
  return ds;
}

}  // namespace derm
