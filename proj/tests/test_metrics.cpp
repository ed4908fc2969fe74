#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <opencv2/imgcodecs.hpp>

#include "derm/metrics.hpp"
#include "derm/rng.hpp"
#include "test_util.hpp"

using namespace derm;

namespace {

ProbRow random_row(Rng& rng, bool coarse) {
  ProbRow r{};
  double s = 0;
  for (double& v : r) {
    // Coarse values provoke ties.
    v = coarse ? static_cast<double>(rng.below(4)) : rng.uniform();
    s += v;
  }
  if (s == 0) r[0] = s = 1;
  for (double& v : r) v /= s;
  return r;
}

// Pair-counting AUC.
double brute_auc(const std::vector<ProbRow>& p, const std::vector<int>& t, int c, bool& defined) {
  double good = 0, pairs = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (t[i] != c || t[j] == c) continue;
      pairs += 1;
      const double a = p[i][static_cast<std::size_t>(c)], b = p[j][static_cast<std::size_t>(c)];
      good += a > b ? 1.0 : a == b ? 0.5 : 0.0;
    }
  defined = pairs > 0;
  return defined ? good / pairs : 0.0;
}

}  // namespace

TEST(Confusion, Fixtures) {
  std::vector<int> all;
  for (int c = 0; c < 7; ++c) all.insert(all.end(), {c, c});
  const auto diag = confusion(all, all);
  for (int a = 0; a < 7; ++a)
    for (int b = 0; b < 7; ++b) EXPECT_EQ(diag.counts[a][b], a == b ? 2 : 0);
  EXPECT_DOUBLE_EQ(accuracy(diag), 1.0);
  for (const auto& m : per_class_metrics(diag)) {
    EXPECT_EQ(m.precision, 1.0);
    EXPECT_EQ(m.recall, 1.0);
    EXPECT_EQ(m.f1, 1.0);
    EXPECT_EQ(m.specificity, 1.0);
  }

  const int nv = index_of(ClassLabel::nv), mel = index_of(ClassLabel::mel);
  const std::vector<int> truths{nv, mel, mel}, preds{nv, nv, mel};
  const auto cm = confusion(preds, truths);
  EXPECT_EQ(cm.counts[nv][nv], 1);
  EXPECT_EQ(cm.counts[mel][nv], 1);
  EXPECT_EQ(cm.counts[mel][mel], 1);
  EXPECT_NEAR(accuracy(cm), 2.0 / 3.0, 1e-12);
  EXPECT_THROW(confusion(std::vector<int>{}, std::vector<int>{}), std::invalid_argument);
  EXPECT_THROW(confusion(std::vector<int>{1}, std::vector<int>{1, 2}), std::invalid_argument);
  EXPECT_THROW(accuracy(ConfusionMatrix{}), std::invalid_argument);
}

TEST(PerClass, HandArithmeticAndZeroDenominators) {
  // Class 0: TP 3, FP 1, FN 1, TN 5.
  ConfusionMatrix cm;
  cm.counts[0][0] = 3;
  cm.counts[1][0] = 1;
  cm.counts[0][1] = 1;
  cm.counts[1][1] = 5;
  const auto m = per_class_metrics(cm);
  EXPECT_DOUBLE_EQ(m[0].precision, 0.75);
  EXPECT_DOUBLE_EQ(m[0].recall, 0.75);
  EXPECT_DOUBLE_EQ(m[0].f1, 0.75);
  EXPECT_NEAR(m[0].specificity, 5.0 / 6.0, 1e-15);
  EXPECT_EQ(m[3].precision, 0.0);
  EXPECT_TRUE(m[3].precision_undefined);
  EXPECT_TRUE(m[3].recall_undefined);
  EXPECT_TRUE(m[3].f1_undefined);
  EXPECT_FALSE(m[3].specificity_undefined);
}

TEST(TopK, FixturesAndTies) {
  std::vector<ProbRow> p(4);
  std::vector<int> t(4);
  for (int i = 0; i < 4; ++i) {
    p[i].fill(0.05);
    p[i][static_cast<std::size_t>(i)] = 0.5;
    t[i] = i + 1;
    p[i][static_cast<std::size_t>(i + 1)] = 0.2;
  }
  EXPECT_EQ(top_k_accuracy(p, t, 1), 0.0);
  EXPECT_EQ(top_k_accuracy(p, t, 2), 1.0);
  EXPECT_EQ(top_k_accuracy(p, t, 7), 1.0);
  EXPECT_THROW(top_k_accuracy(p, t, 0), std::invalid_argument);
  EXPECT_THROW(top_k_accuracy(p, t, 8), std::invalid_argument);
  // Uniform row: class 0 wins every tie.
  std::vector<ProbRow> u(1);
  u[0].fill(1.0 / 7);
  EXPECT_EQ(top_k_accuracy(u, std::vector<int>{0}, 1), 1.0);
  EXPECT_EQ(top_k_accuracy(u, std::vector<int>{6}, 6), 0.0);
  EXPECT_EQ(predicted_class(u[0]), 0);
}

TEST(Auc, PairCountingFixture) {
  // Class 0 scores: positives 0.8, 0.6; negatives 0.7, 0.5.
  std::vector<ProbRow> p(4);
  const double s[4] = {0.8, 0.6, 0.7, 0.5};
  for (int i = 0; i < 4; ++i) {
    p[i].fill((1 - s[i]) / 6);
    p[i][0] = s[i];
  }
  const std::vector<int> t{0, 0, 1, 1};
  const auto auc = roc_auc(p, t);
  EXPECT_DOUBLE_EQ(auc.per_class[0], 0.75);
  EXPECT_TRUE(auc.defined[0]);
  EXPECT_FALSE(auc.defined[3]);
  const auto one = roc_auc(p, std::vector<int>{2, 2, 2, 2});
  for (bool d : one.defined) EXPECT_FALSE(d);
  EXPECT_FALSE(one.macro_defined);
}

TEST(Auc, PerfectSeparationAndMonotoneInvariance) {
  Rng rng(3);
  std::vector<ProbRow> p;
  std::vector<int> t;
  for (int i = 0; i < 60; ++i) {
    t.push_back(i % 7);
    ProbRow r{};
    r.fill(0.01);
    r[static_cast<std::size_t>(i % 7)] = 0.9;
    p.push_back(r);
  }
  const auto auc = roc_auc(p, t);
  for (int c = 0; c < 7; ++c) EXPECT_EQ(auc.per_class[c], 1.0);

  std::vector<ProbRow> q;
  for (int i = 0; i < 80; ++i) q.push_back(random_row(rng, i % 2));
  std::vector<int> u;
  for (int i = 0; i < 80; ++i) u.push_back(static_cast<int>(rng.below(7)));
  auto transformed = q;
  for (auto& r : transformed)
    for (double& v : r) v = std::exp(3 * v) - 0.5;
  EXPECT_EQ(roc_auc(q, u), roc_auc(transformed, u));
}

TEST(Metrics, BruteForceOracle) {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(60));
    std::vector<ProbRow> p;
    std::vector<int> t;
    for (int i = 0; i < n; ++i) {
      p.push_back(random_row(rng, trial % 3 == 0));
      t.push_back(static_cast<int>(rng.below(7)));
    }
    const MetricsReport r = evaluate_predictions(p, t);
    EXPECT_TRUE(report_violations(r).empty());
    for (int c = 0; c < 7; ++c) {
      std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
      for (int i = 0; i < n; ++i) {
        int best = 0;
        for (int j = 1; j < 7; ++j)
          if (p[i][j] > p[i][best]) best = j;
        const bool pred = best == c, truth = t[i] == c;
        tp += pred && truth;
        fp += pred && !truth;
        fn += !pred && truth;
        tn += !pred && !truth;
      }
      const auto& m = r.per_class[c];
      EXPECT_EQ(m.tp, tp);
      EXPECT_EQ(m.tn, tn);
      EXPECT_NEAR(m.precision, tp + fp ? double(tp) / (tp + fp) : 0.0, 1e-12);
      EXPECT_NEAR(m.specificity, tn + fp ? double(tn) / (tn + fp) : 0.0, 1e-12);
      bool defined;
      const double a = brute_auc(p, t, c, defined);
      EXPECT_EQ(r.auc.defined[c], defined);
      EXPECT_NEAR(r.auc.per_class[c], a, 1e-12);
    }
  }
}

TEST(Roc, CurveEndpointsAndArea) {
  Rng rng(5);
  std::vector<ProbRow> p;
  std::vector<int> t;
  for (int i = 0; i < 100; ++i) {
    p.push_back(random_row(rng, i % 3 == 0));
    t.push_back(static_cast<int>(rng.below(7)));
  }
  const auto auc = roc_auc(p, t);
  for (int c = 0; c < 7; ++c) {
    const auto curve = roc_curve(p, t, c);
    ASSERT_GE(curve.fpr.size(), 2u);
    EXPECT_EQ(curve.fpr.front(), 0.0);
    EXPECT_EQ(curve.tpr.back(), 1.0);
    EXPECT_EQ(curve.fpr.back(), 1.0);
    // Trapezoidal area equals the rank statistic.
    double area = 0;
    for (std::size_t i = 1; i < curve.fpr.size(); ++i)
      area += (curve.fpr[i] - curve.fpr[i - 1]) * (curve.tpr[i] + curve.tpr[i - 1]) / 2;
    EXPECT_NEAR(area, auc.per_class[c], 1e-12);
  }
}

TEST(Report, JsonRoundTripAndRendering) {
  Rng rng(8);
  std::vector<ProbRow> p;
  std::vector<int> t;
  for (int i = 0; i < 40; ++i) {
    p.push_back(random_row(rng, false));
    t.push_back(i % 6);  // class 6 absent: undefined AUC and recall
  }
  const MetricsReport r = evaluate_predictions(p, t);
  EXPECT_FALSE(r.auc.defined[6]);
  EXPECT_TRUE(r.per_class[6].recall_undefined);
  const auto dir = testutil::temp_dir("report");
  const auto s = render_report(r, dir);
  EXPECT_EQ(load_report_json(s.metrics_json), r);

  std::ifstream csv(s.per_class_csv);
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "class,precision,recall,f1,specificity,support,auc");
  int lines = 0;
  for (std::string line; std::getline(csv, line);) ++lines;
  EXPECT_EQ(lines, 7);

  const cv::Mat cm = cv::imread(s.confusion_png.string());
  EXPECT_GE(cm.cols, 7 * s.confusion_cell_px);
  EXPECT_GE(cm.rows, 7 * s.confusion_cell_px);
  EXPECT_EQ(s.annotated_cells, 49);

  // Six classes with positives plus the macro curve.
  EXPECT_EQ(s.roc_curves, 7);
  const cv::Mat roc = cv::imread(s.roc_png.string());
  for (const auto& c : s.curve_colors) {
    int hits = 0;
    for (int y = 0; y < roc.rows; ++y)
      for (int x = 0; x < roc.cols; ++x) {
        const auto px = roc.at<cv::Vec3b>(y, x);
        hits += px[0] == c[0] && px[1] == c[1] && px[2] == c[2];
      }
    EXPECT_GT(hits, 100);
  }
  std::filesystem::remove_all(dir);
}
