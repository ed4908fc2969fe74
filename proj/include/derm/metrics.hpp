#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "derm/classes.hpp"

namespace derm {

using ProbRow = PerClass<double>;

// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::array<std::array<std::int64_t, kNumClasses>, kNumClasses> counts{};

  std::int64_t total() const;
  std::int64_t row_sum(int c) const;
  std::int64_t column_sum(int c) const;
  bool operator==(const ConfusionMatrix&) const = default;
};

// Throws std::invalid_argument on empty input, length mismatch or a label
// outside [0, 7).
ConfusionMatrix confusion(std::span<const int> predictions, std::span<const int> truths);

// One-vs-rest counts and ratios for one class. A ratio whose denominator is
// zero is reported as 0 with its flag set.
struct ClassMetrics {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::int64_t support = 0;
  double precision = 0, recall = 0, f1 = 0, specificity = 0;
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;
  bool specificity_undefined = false;
  bool operator==(const ClassMetrics&) const = default;
};

PerClass<ClassMetrics> per_class_metrics(const ConfusionMatrix& cm);
// trace / total; throws std::invalid_argument for an empty matrix.
double accuracy(const ConfusionMatrix& cm);

// Highest-probability class, ties to the lower index.
int predicted_class(const ProbRow& probs);
// Fraction of rows whose true class ranks within the first k; classes with
// equal probability are ranked by index. Throws for k outside [1, 7].
double top_k_accuracy(std::span<const ProbRow> probs, std::span<const int> truths, int k);

struct AucResult {
  PerClass<double> per_class{};
  PerClass<bool> defined{};
  double macro = 0;        // mean over defined classes
  bool macro_defined = false;
  bool operator==(const AucResult&) const = default;
};
// One-vs-rest AUC through the rank statistic, tied scores counting one half.
// Classes lacking positives or negatives are left undefined.
AucResult roc_auc(std::span<const ProbRow> probs, std::span<const int> truths);

struct RocCurve {
  std::vector<double> fpr;
  std::vector<double> tpr;
  bool operator==(const RocCurve&) const = default;
};
// Step curve from (0, 0) to (1, 1) over the distinct score thresholds.
RocCurve roc_curve(std::span<const ProbRow> probs, std::span<const int> truths, int cls);

inline constexpr int kMetricsSchemaVersion = 1;

struct MetricsReport {
  int schema_version = kMetricsSchemaVersion;
  std::int64_t samples = 0;
  PerClass<ClassMetrics> per_class{};
  double accuracy = 0;
  double macro_precision = 0, macro_recall = 0, macro_f1 = 0, macro_specificity = 0;
  double micro_precision = 0, micro_recall = 0, micro_f1 = 0;
  std::map<int, double> top_k;  // k = 1, 2, 3
  AucResult auc;
  ConfusionMatrix confusion;
  // One curve per class followed by the macro-average curve. Empty when the
  // class has no positives or no negatives.
  std::vector<RocCurve> roc;
  bool operator==(const MetricsReport&) const = default;
};

MetricsReport evaluate_predictions(std::span<const ProbRow> probs, std::span<const int> truths);

// Every failed report invariant (metric bounds, top-k ordering, accuracy =
// trace / total, accuracy = support-weighted recall, consistent counts).
std::vector<std::string> report_violations(const MetricsReport& report);

nlohmann::json to_json(const MetricsReport& report);
MetricsReport metrics_report_from_json(const nlohmann::json& j);
void save_report_json(const MetricsReport& report, const std::filesystem::path& path);
MetricsReport load_report_json(const std::filesystem::path& path);

struct RenderSummary {
  std::filesystem::path metrics_json, per_class_csv, confusion_png, roc_png;
  int confusion_cell_px = 0;
  int annotated_cells = 0;
  int roc_curves = 0;
  std::vector<std::array<int, 3>> curve_colors;  // BGR, one per drawn curve
};

// Writes metrics.json, per_class.csv, confusion.png and roc.png into out_dir.
RenderSummary render_report(const MetricsReport& report, const std::filesystem::path& out_dir);

}  // namespace derm
