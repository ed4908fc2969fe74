#include "derm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <stdexcept>

#include "derm/error.hpp"

namespace derm {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void check_label(int v, const char* what) {
  if (v < 0 || v >= kNumClasses)
    throw std::invalid_argument(std::string(what) + " label " + std::to_string(v) + " outside [0, 7)");
}

void check_inputs(std::span<const ProbRow> probs, std::span<const int> truths) {
  if (probs.empty()) throw std::invalid_argument("no samples to evaluate");
  if (probs.size() != truths.size())
    throw std::invalid_argument("probabilities for " + std::to_string(probs.size()) + " samples but " +
                                std::to_string(truths.size()) + " labels");
  for (int t : truths) check_label(t, "true");
  for (const ProbRow& row : probs)
    for (double p : row)
      if (!std::isfinite(p)) throw std::invalid_argument("non-finite probability");
}

double ratio(std::int64_t num, std::int64_t den, bool& undefined) {
  undefined = den == 0;
  return undefined ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

std::int64_t ConfusionMatrix::total() const {
  std::int64_t s = 0;
  for (const auto& row : counts) s = std::accumulate(row.begin(), row.end(), s);
  return s;
}

std::int64_t ConfusionMatrix::row_sum(int c) const {
  const auto& row = counts[static_cast<std::size_t>(c)];
  return std::accumulate(row.begin(), row.end(), std::int64_t{0});
}

std::int64_t ConfusionMatrix::column_sum(int c) const {
  std::int64_t s = 0;
  for (const auto& row : counts) s += row[static_cast<std::size_t>(c)];
  return s;
}

ConfusionMatrix confusion(std::span<const int> predictions, std::span<const int> truths) {
  if (predictions.empty()) throw std::invalid_argument("confusion matrix of an empty prediction list");
  if (predictions.size() != truths.size())
    throw std::invalid_argument("prediction and label lists differ in length");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    check_label(predictions[i], "predicted");
    check_label(truths[i], "true");
    ++cm.counts[static_cast<std::size_t>(truths[i])][static_cast<std::size_t>(predictions[i])];
  }
  return cm;
}

PerClass<ClassMetrics> per_class_metrics(const ConfusionMatrix& cm) {
  PerClass<ClassMetrics> out;
  const std::int64_t total = cm.total();
  for (int c = 0; c < kNumClasses; ++c) {
    ClassMetrics& m = out[static_cast<std::size_t>(c)];
    m.tp = cm.counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
    m.fp = cm.column_sum(c) - m.tp;
    m.fn = cm.row_sum(c) - m.tp;
    m.tn = total - m.tp - m.fp - m.fn;
    m.support = m.tp + m.fn;
    m.precision = ratio(m.tp, m.tp + m.fp, m.precision_undefined);
    m.recall = ratio(m.tp, m.tp + m.fn, m.recall_undefined);
    m.f1 = ratio(2 * m.tp, 2 * m.tp + m.fp + m.fn, m.f1_undefined);
    m.specificity = ratio(m.tn, m.fp + m.tn, m.specificity_undefined);
  }
  return out;
}

double accuracy(const ConfusionMatrix& cm) {
  const std::int64_t total = cm.total();
  if (total == 0) throw std::invalid_argument("accuracy of an empty confusion matrix");
  std::int64_t trace = 0;
  for (int c = 0; c < kNumClasses; ++c) trace += cm.counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
  return static_cast<double>(trace) / static_cast<double>(total);
}

int predicted_class(const ProbRow& probs) {
  int best = 0;
  for (int c = 1; c < kNumClasses; ++c)
    if (probs[static_cast<std::size_t>(c)] > probs[static_cast<std::size_t>(best)]) best = c;
  return best;
}

double top_k_accuracy(std::span<const ProbRow> probs, std::span<const int> truths, int k) {
  if (k < 1 || k > kNumClasses) throw std::invalid_argument("top-k needs 1 <= k <= 7, got " + std::to_string(k));
  check_inputs(probs, truths);
  std::int64_t hits = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const int t = truths[i];
    const double pt = probs[i][static_cast<std::size_t>(t)];
    int ahead = 0;
    for (int j = 0; j < kNumClasses; ++j) {
      const double pj = probs[i][static_cast<std::size_t>(j)];
      if (pj > pt || (pj == pt && j < t)) ++ahead;
    }
    hits += ahead < k;
  }
  return static_cast<double>(hits) / static_cast<double>(probs.size());
}

AucResult roc_auc(std::span<const ProbRow> probs, std::span<const int> truths) {
  check_inputs(probs, truths);
  AucResult out;
  const std::size_t n = probs.size();
  std::vector<std::size_t> order(n);
  std::vector<double> rank(n);
  double sum = 0;
  int defined = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a][ci] < probs[b][ci]; });
    // Mid-ranks (1-based) over tie groups.
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j + 1 < n && probs[order[j + 1]][ci] == probs[order[i]][ci]) ++j;
      const double mid = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
      for (std::size_t m = i; m <= j; ++m) rank[order[m]] = mid;
      i = j + 1;
    }
    double pos = 0, rank_sum = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (truths[i] == c) {
        pos += 1;
        rank_sum += rank[i];
      }
    const double neg = static_cast<double>(n) - pos;
    if (pos == 0 || neg == 0) continue;
    out.defined[ci] = true;
    out.per_class[ci] = (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
    sum += out.per_class[ci];
    ++defined;
  }
  out.macro_defined = defined > 0;
  out.macro = defined > 0 ? sum / defined : 0.0;
  return out;
}

RocCurve roc_curve(std::span<const ProbRow> probs, std::span<const int> truths, int cls) {
  check_inputs(probs, truths);
  check_label(cls, "curve");
  const auto ci = static_cast<std::size_t>(cls);
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a][ci] > probs[b][ci]; });
  double pos = 0;
  for (int t : truths) pos += t == cls;
  const double neg = static_cast<double>(probs.size()) - pos;
  RocCurve curve;
  if (pos == 0 || neg == 0) return curve;
  curve.fpr.push_back(0);
  curve.tpr.push_back(0);
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && probs[order[j]][ci] == probs[order[i]][ci]) {
      (truths[order[j]] == cls ? tp : fp) += 1;
      ++j;
    }
    curve.fpr.push_back(fp / neg);
    curve.tpr.push_back(tp / pos);
    i = j;
  }
  return curve;
}

namespace {

// Mean of the per-class curves, each linearly interpolated onto the union of
// their false-positive rates.
RocCurve macro_curve(const std::vector<RocCurve>& curves) {
  std::vector<double> grid;
  for (const RocCurve& c : curves) grid.insert(grid.end(), c.fpr.begin(), c.fpr.end());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  RocCurve out;
  int used = 0;
  out.fpr = grid;
  out.tpr.assign(grid.size(), 0.0);
  for (const RocCurve& c : curves) {
    if (c.fpr.empty()) continue;
    ++used;
    for (std::size_t g = 0; g < grid.size(); ++g) {
      const double x = grid[g];
      // Last point at or before x, which takes the top of vertical segments.
      const auto it = std::upper_bound(c.fpr.begin(), c.fpr.end(), x);
      const std::size_t hi = static_cast<std::size_t>(it - c.fpr.begin());
      double y;
      if (hi == c.fpr.size()) {
        y = c.tpr.back();
      } else {
        const std::size_t lo = hi - 1;
        const double t = (x - c.fpr[lo]) / (c.fpr[hi] - c.fpr[lo]);
        y = c.tpr[lo] + t * (c.tpr[hi] - c.tpr[lo]);
      }
      out.tpr[g] += y;
    }
  }
  if (used == 0) return {};
  for (double& y : out.tpr) y /= used;
  return out;
}

}  // namespace

MetricsReport evaluate_predictions(std::span<const ProbRow> probs, std::span<const int> truths) {
  check_inputs(probs, truths);
  MetricsReport r;
  r.samples = static_cast<std::int64_t>(probs.size());
  std::vector<int> preds(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) preds[i] = predicted_class(probs[i]);
  r.confusion = confusion(preds, truths);
  r.per_class = per_class_metrics(r.confusion);
  r.accuracy = accuracy(r.confusion);
  for (const ClassMetrics& m : r.per_class) {
    r.macro_precision += m.precision / kNumClasses;
    r.macro_recall += m.recall / kNumClasses;
    r.macro_f1 += m.f1 / kNumClasses;
    r.macro_specificity += m.specificity / kNumClasses;
  }
  std::int64_t tp = 0, fp = 0, fn = 0;
  for (const ClassMetrics& m : r.per_class) {
    tp += m.tp;
    fp += m.fp;
    fn += m.fn;
  }
  bool unused;
  r.micro_precision = ratio(tp, tp + fp, unused);
  r.micro_recall = ratio(tp, tp + fn, unused);
  r.micro_f1 = ratio(2 * tp, 2 * tp + fp + fn, unused);
  for (int k = 1; k <= 3; ++k) r.top_k[k] = top_k_accuracy(probs, truths, k);
  r.auc = roc_auc(probs, truths);
  for (int c = 0; c < kNumClasses; ++c) r.roc.push_back(roc_curve(probs, truths, c));
  r.roc.push_back(macro_curve(r.roc));
  return r;
}

std::vector<std::string> report_violations(const MetricsReport& r) {
  std::vector<std::string> bad;
  auto unit = [&](double v, const std::string& name) {
    if (!(v >= 0.0 && v <= 1.0)) bad.push_back(name + " = " + std::to_string(v) + " outside [0, 1]");
  };
  unit(r.accuracy, "accuracy");
  unit(r.macro_precision, "macro_precision");
  unit(r.macro_recall, "macro_recall");
  unit(r.macro_f1, "macro_f1");
  unit(r.macro_specificity, "macro_specificity");
  unit(r.micro_precision, "micro_precision");
  unit(r.micro_recall, "micro_recall");
  unit(r.micro_f1, "micro_f1");
  unit(r.auc.macro, "macro_auc");
  for (int c = 0; c < kNumClasses; ++c) {
    const auto& m = r.per_class[static_cast<std::size_t>(c)];
    const std::string code(code_of(class_from_index(c)));
    unit(m.precision, code + ".precision");
    unit(m.recall, code + ".recall");
    unit(m.f1, code + ".f1");
    unit(m.specificity, code + ".specificity");
    unit(r.auc.per_class[static_cast<std::size_t>(c)], code + ".auc");
    if (m.tp + m.fp + m.fn + m.tn != r.samples) bad.push_back(code + " counts do not add up to the sample count");
    for (std::int64_t v : r.confusion.counts[static_cast<std::size_t>(c)])
      if (v < 0) bad.push_back("negative confusion entry");
  }
  for (const auto& [k, v] : r.top_k) unit(v, "top_" + std::to_string(k));
  for (auto it = r.top_k.begin(); it != r.top_k.end(); ++it) {
    auto next = std::next(it);
    if (next != r.top_k.end() && next->second < it->second) bad.push_back("top-k accuracy decreases with k");
  }
  if (r.confusion.total() != r.samples) bad.push_back("confusion total differs from the sample count");
  if (r.samples > 0) {
    if (std::abs(r.accuracy - accuracy(r.confusion)) > 1e-12) bad.push_back("accuracy differs from trace / total");
    double weighted = 0;
    for (const auto& m : r.per_class) weighted += m.recall * static_cast<double>(m.support);
    if (std::abs(weighted / static_cast<double>(r.samples) - r.accuracy) > 1e-12)
      bad.push_back("accuracy differs from support-weighted recall");
    if (r.top_k.contains(1) && std::abs(r.top_k.at(1) - r.accuracy) > 1e-12)
      bad.push_back("top-1 accuracy differs from accuracy");
  }
  return bad;
}

namespace {

json metrics_json(const ClassMetrics& m) {
  return {{"tp", m.tp},
          {"fp", m.fp},
          {"fn", m.fn},
          {"tn", m.tn},
          {"support", m.support},
          {"precision", m.precision},
          {"recall", m.recall},
          {"f1", m.f1},
          {"specificity", m.specificity},
          {"undefined",
           {{"precision", m.precision_undefined},
            {"recall", m.recall_undefined},
            {"f1", m.f1_undefined},
            {"specificity", m.specificity_undefined}}}};
}

ClassMetrics metrics_from(const json& j) {
  ClassMetrics m;
  m.tp = j.at("tp");
  m.fp = j.at("fp");
  m.fn = j.at("fn");
  m.tn = j.at("tn");
  m.support = j.at("support");
  m.precision = j.at("precision");
  m.recall = j.at("recall");
  m.f1 = j.at("f1");
  m.specificity = j.at("specificity");
  const json& u = j.at("undefined");
  m.precision_undefined = u.at("precision");
  m.recall_undefined = u.at("recall");
  m.f1_undefined = u.at("f1");
  m.specificity_undefined = u.at("specificity");
  return m;
}

}  // namespace

json to_json(const MetricsReport& r) {
  json per_class = json::object();
  json auc = json::object();
  for (int c = 0; c < kNumClasses; ++c) {
    const std::string code(code_of(class_from_index(c)));
    const auto ci = static_cast<std::size_t>(c);
    per_class[code] = metrics_json(r.per_class[ci]);
    auc[code] = r.auc.defined[ci] ? json(r.auc.per_class[ci]) : json(nullptr);
  }
  json top_k = json::object();
  for (const auto& [k, v] : r.top_k) top_k[std::to_string(k)] = v;
  json roc = json::array();
  for (std::size_t i = 0; i < r.roc.size(); ++i)
    roc.push_back({{"label", i < kNumClasses ? std::string(code_of(class_from_index(static_cast<int>(i)))) : "macro"},
                   {"fpr", r.roc[i].fpr},
                   {"tpr", r.roc[i].tpr}});
  json classes = json::array();
  for (ClassLabel c : kAllClasses) classes.push_back(code_of(c));
  return {{"schema_version", r.schema_version},
          {"classes", classes},
          {"samples", r.samples},
          {"accuracy", r.accuracy},
          {"macro", {{"precision", r.macro_precision}, {"recall", r.macro_recall}, {"f1", r.macro_f1},
                     {"specificity", r.macro_specificity}}},
          {"micro", {{"precision", r.micro_precision}, {"recall", r.micro_recall}, {"f1", r.micro_f1}}},
          {"top_k", top_k},
          {"auc", {{"per_class", auc}, {"macro", r.auc.macro_defined ? json(r.auc.macro) : json(nullptr)}}},
          {"per_class", per_class},
          {"confusion", r.confusion.counts},
          {"roc", roc}};
}

MetricsReport metrics_report_from_json(const json& j) {
  try {
    MetricsReport r;
    r.schema_version = j.at("schema_version");
    if (r.schema_version != kMetricsSchemaVersion)
      throw DataError("unsupported metrics schema version " + std::to_string(r.schema_version));
    r.samples = j.at("samples");
    r.accuracy = j.at("accuracy");
    const json& macro = j.at("macro");
    r.macro_precision = macro.at("precision");
    r.macro_recall = macro.at("recall");
    r.macro_f1 = macro.at("f1");
    r.macro_specificity = macro.at("specificity");
    const json& micro = j.at("micro");
    r.micro_precision = micro.at("precision");
    r.micro_recall = micro.at("recall");
    r.micro_f1 = micro.at("f1");
    for (const auto& [k, v] : j.at("top_k").items()) r.top_k[std::stoi(k)] = v.get<double>();
    for (int c = 0; c < kNumClasses; ++c) {
      const std::string code(code_of(class_from_index(c)));
      const auto ci = static_cast<std::size_t>(c);
      r.per_class[ci] = metrics_from(j.at("per_class").at(code));
      const json& a = j.at("auc").at("per_class").at(code);
      r.auc.defined[ci] = !a.is_null();
      r.auc.per_class[ci] = a.is_null() ? 0.0 : a.get<double>();
    }
    const json& m = j.at("auc").at("macro");
    r.auc.macro_defined = !m.is_null();
    r.auc.macro = m.is_null() ? 0.0 : m.get<double>();
    r.confusion.counts = j.at("confusion");
    for (const json& c : j.at("roc")) r.roc.push_back({c.at("fpr"), c.at("tpr")});
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed metrics report: ") + e.what());
  }
}

void save_report_json(const MetricsReport& report, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json(report).dump(2) << '\n';
  if (!out) throw Error("failed writing " + path.string());
}

MetricsReport load_report_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return metrics_report_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + " is not valid JSON: " + e.what());
  }
}

}  // namespace derm
