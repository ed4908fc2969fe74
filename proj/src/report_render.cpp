#include <cstdio>
#include <fstream>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "derm/error.hpp"
#include "derm/metrics.hpp"

namespace derm {

namespace fs = std::filesystem;

namespace {

constexpr int kCell = 72;
constexpr int kMargin = 110;
const auto kFont = cv::FONT_HERSHEY_SIMPLEX;

// Distinct BGR colours: seven classes, then the macro curve in black.
const std::array<cv::Scalar, 8> kPalette = {
    cv::Scalar(180, 119, 31),  cv::Scalar(14, 127, 255), cv::Scalar(44, 160, 44), cv::Scalar(40, 39, 214),
    cv::Scalar(189, 103, 148), cv::Scalar(75, 86, 140),  cv::Scalar(194, 119, 227), cv::Scalar(0, 0, 0)};

void write_png_or_throw(const cv::Mat& img, const fs::path& path) {
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), img);
  } catch (const cv::Exception&) {
    ok = false;
  }
  if (!ok) throw Error("cannot write " + path.string());
}

void centred_text(cv::Mat& img, const std::string& text, cv::Point centre, double scale, cv::Scalar colour,
                  int thickness = 1) {
  int baseline = 0;
  const cv::Size size = cv::getTextSize(text, kFont, scale, thickness, &baseline);
  cv::putText(img, text, {centre.x - size.width / 2, centre.y + size.height / 2}, kFont, scale, colour, thickness,
              cv::LINE_AA);
}

int render_confusion(const ConfusionMatrix& cm, const fs::path& path) {
  const int side = kMargin + kNumClasses * kCell + 20;
  cv::Mat img(side, side, CV_8UC3, cv::Scalar(255, 255, 255));
  std::int64_t peak = 1;
  for (const auto& row : cm.counts)
    for (std::int64_t v : row) peak = std::max(peak, v);

  int annotated = 0;
  for (int t = 0; t < kNumClasses; ++t)
    for (int p = 0; p < kNumClasses; ++p) {
      const std::int64_t v = cm.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
      const double share = static_cast<double>(v) / static_cast<double>(peak);
      // White to dark blue.
      const cv::Scalar fill(255 - 120 * share, 255 - 200 * share, 255 - 230 * share);
      const cv::Rect cell(kMargin + p * kCell, kMargin + t * kCell, kCell, kCell);
      cv::rectangle(img, cell, fill, cv::FILLED);
      cv::rectangle(img, cell, cv::Scalar(160, 160, 160), 1);
      centred_text(img, std::to_string(v), {cell.x + kCell / 2, cell.y + kCell / 2}, 0.55,
                   share > 0.55 ? cv::Scalar(255, 255, 255) : cv::Scalar(0, 0, 0));
      ++annotated;
    }
  for (int c = 0; c < kNumClasses; ++c) {
    const std::string code(code_of(class_from_index(c)));
    centred_text(img, code, {kMargin + c * kCell + kCell / 2, kMargin - 14}, 0.5, cv::Scalar(0, 0, 0));
    centred_text(img, code, {kMargin - 32, kMargin + c * kCell + kCell / 2}, 0.5, cv::Scalar(0, 0, 0));
  }
  cv::putText(img, "predicted", {kMargin + kNumClasses * kCell / 2 - 40, 30}, kFont, 0.6, cv::Scalar(0, 0, 0), 1,
              cv::LINE_AA);
  cv::putText(img, "true", {8, kMargin + kNumClasses * kCell / 2}, kFont, 0.6, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  write_png_or_throw(img, path);
  return annotated;
}

int render_roc(const MetricsReport& r, const fs::path& path, std::vector<std::array<int, 3>>& colours) {
  const int plot = 480, left = 60, top = 30, legend = 190;
  cv::Mat img(top + plot + 50, left + plot + legend, CV_8UC3, cv::Scalar(255, 255, 255));
  const cv::Rect frame(left, top, plot, plot);
  cv::rectangle(img, frame, cv::Scalar(0, 0, 0), 1);
  auto to_px = [&](double fpr, double tpr) {
    return cv::Point(left + static_cast<int>(std::lround(fpr * plot)),
                     top + plot - static_cast<int>(std::lround(tpr * plot)));
  };
  cv::line(img, to_px(0, 0), to_px(1, 1), cv::Scalar(200, 200, 200), 1, cv::LINE_AA);
  for (int i = 0; i <= 4; ++i) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "%.2f", i / 4.0);
    cv::putText(img, buf, {to_px(i / 4.0, 0).x - 14, top + plot + 18}, kFont, 0.4, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    cv::putText(img, buf, {left - 40, to_px(0, i / 4.0).y + 4}, kFont, 0.4, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  }
  cv::putText(img, "false positive rate", {left + plot / 2 - 70, top + plot + 40}, kFont, 0.5, cv::Scalar(0, 0, 0), 1,
              cv::LINE_AA);

  int drawn = 0;
  for (std::size_t i = 0; i < r.roc.size() && i < kPalette.size(); ++i) {
    const RocCurve& c = r.roc[i];
    if (c.fpr.size() < 2) continue;
    std::vector<cv::Point> pts;
    for (std::size_t k = 0; k < c.fpr.size(); ++k) pts.push_back(to_px(c.fpr[k], c.tpr[k]));
    const int thickness = i == kNumClasses ? 3 : 2;
    cv::polylines(img, pts, false, kPalette[i], thickness, cv::LINE_8);

    std::string label = i < kNumClasses ? std::string(code_of(class_from_index(static_cast<int>(i)))) : "macro";
    const double auc = i < kNumClasses ? r.auc.per_class[i] : r.auc.macro;
    char buf[32];
    std::snprintf(buf, sizeof buf, " %.3f", auc);
    label += buf;
    const int y = top + 20 + drawn * 24;
    cv::rectangle(img, cv::Rect(left + plot + 15, y - 8, 22, 12), kPalette[i], cv::FILLED);
    cv::putText(img, label, {left + plot + 44, y + 3}, kFont, 0.45, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    colours.push_back({static_cast<int>(kPalette[i][0]), static_cast<int>(kPalette[i][1]),
                       static_cast<int>(kPalette[i][2])});
    ++drawn;
  }
  write_png_or_throw(img, path);
  return drawn;
}

void write_per_class_csv(const MetricsReport& r, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "class,precision,recall,f1,specificity,support,auc\n";
  char buf[256];
  for (int c = 0; c < kNumClasses; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    const ClassMetrics& m = r.per_class[ci];
    std::string auc = r.auc.defined[ci] ? "" : "nan";
    if (r.auc.defined[ci]) {
      std::snprintf(buf, sizeof buf, "%.6f", r.auc.per_class[ci]);
      auc = buf;
    }
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.6f,%lld,%s\n", std::string(code_of(class_from_index(c))).c_str(),
                  m.precision, m.recall, m.f1, m.specificity, static_cast<long long>(m.support), auc.c_str());
    out << buf;
  }
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace

RenderSummary render_report(const MetricsReport& report, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create " + out_dir.string() + ": " + ec.message());
  RenderSummary s;
  s.metrics_json = out_dir / "metrics.json";
  s.per_class_csv = out_dir / "per_class.csv";
  s.confusion_png = out_dir / "confusion.png";
  s.roc_png = out_dir / "roc.png";
  save_report_json(report, s.metrics_json);
  write_per_class_csv(report, s.per_class_csv);
  s.confusion_cell_px = kCell;
  s.annotated_cells = render_confusion(report.confusion, s.confusion_png);
  s.roc_curves = render_roc(report, s.roc_png, s.curve_colors);
  return s;
}

}  // namespace derm
