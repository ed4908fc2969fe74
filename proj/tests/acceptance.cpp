// Acceptance checks 1-9. Prints one PASS/FAIL line per criterion and exits
// non-zero when any fails. Criterion 8's localization check reuses the fold_0
// checkpoint trained by criterion 5.

#include <algorithm>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <optional>
#include <sstream>

#include "derm/catalog.hpp"
#include "derm/cli.hpp"
#include "derm/ensemble.hpp"
#include "derm/interpret.hpp"
#include "derm/losses.hpp"
#include "derm/metrics.hpp"
#include "derm/nn/layers.hpp"
#include "derm/rng.hpp"
#include "derm/toy.hpp"
#include "derm/trainer.hpp"
#include "test_util.hpp"

using namespace derm;
namespace fs = std::filesystem;
using json = nlohmann::json;
using Big = boost::multiprecision::cpp_bin_float_50;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects the first few failure messages of one criterion.
class Checker {
 public:
  void fail(const std::string& what) {
    if (failures_++ < 5) msgs_ += (msgs_.empty() ? "" : "; ") + what;
  }
  void expect(bool ok, const std::string& what) {
    if (!ok) fail(what);
  }
  Outcome done(const std::string& summary) const {
    if (failures_ == 0) return {true, summary};
    return {false, std::to_string(failures_) + " failure(s): " + msgs_};
  }

 private:
  int failures_ = 0;
  std::string msgs_;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return json::parse(in);
}

int cli(const std::vector<std::string>& args, std::string* err_out = nullptr) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (err_out) *err_out = err.str();
  return code;
}

std::vector<double> two_point(double pt, int target) {
  std::vector<double> probs(7, (1.0 - pt) / 6);
  probs[static_cast<std::size_t>(target)] = pt;
  return probs;
}

// 1. Loss values against 50-digit evaluation.
Outcome loss_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Checker c;
  Rng rng(101);
  double worst = 0, worst_reduction = 0;
  for (int i = 0; i < 1000; ++i) {
    const double pt = rng.uniform(1e-6, 1.0 - 1e-6);
    const double gamma = std::array{0.0, 1.0, 2.0, 5.0}[rng.below(4)];
    const double alpha = rng.uniform(0.05, 5.0);
    const int t = static_cast<int>(rng.below(7));
    const auto probs = two_point(pt, t);
    const Big bp(pt);
    const double ref = static_cast<double>(-Big(alpha) * boost::multiprecision::pow(Big(1) - bp, Big(gamma)) *
                                           boost::multiprecision::log(bp));
    const double got = focal_loss(probs, t, gamma, alpha);
    const double rel = std::abs(got - ref) / std::abs(ref);
    worst = std::max(worst, rel);
    c.expect(rel <= 1e-9, "focal draw " + std::to_string(i) + " rel " + fmt(rel));

    std::vector<double> w(7);
    for (double& x : w) x = rng.uniform(0.05, 5.0);
    const double ce_ref = static_cast<double>(-Big(w[static_cast<std::size_t>(t)]) * boost::multiprecision::log(bp));
    const double ce = weighted_cross_entropy(probs, t, w);
    c.expect(std::abs(ce - ce_ref) <= 1e-9 * std::abs(ce_ref), "weighted CE draw " + std::to_string(i));
    const double diff = std::abs(class_weighted_focal_loss(probs, t, w, 0.0) - ce);
    worst_reduction = std::max(worst_reduction, diff);
    c.expect(diff <= 1e-12, "gamma 0 reduction draw " + std::to_string(i) + " diff " + fmt(diff));
  }
  const double secs = seconds_since(t0);
  c.expect(secs < 10, "runtime " + fmt(secs) + " s");
  return c.done("1000 draws, worst rel " + fmt(worst, 3) + ", gamma-0 diff " + fmt(worst_reduction, 3) + ", " +
                fmt(secs, 3) + " s");
}

// 2. Closed-form logit gradients against central differences.
Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  Checker c;
  Rng rng(202);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    std::vector<double> z(7);
    for (double& v : z) v = rng.normal() * 2;
    const int t = static_cast<int>(rng.below(7));
    LossSpec spec;
    spec.kind = std::array{LossKind::focal, LossKind::weighted_ce, LossKind::ce}[rng.below(3)];
    spec.gamma = std::array{0.0, 1.0, 2.0, 5.0}[rng.below(4)];
    spec.weights.resize(7);
    for (double& w : spec.weights) w = rng.uniform(0.2, 5.0);
    const auto g = loss_gradient(z, t, spec);
    for (std::size_t j = 0; j < 7; ++j) {
      auto zp = z, zm = z;
      zp[j] += 1e-4;
      zm[j] -= 1e-4;
      const double fd = (loss_from_logits(zp, t, spec) - loss_from_logits(zm, t, spec)) / 2e-4;
      const double scale = std::max(std::abs(fd), std::abs(g[j]));
      const double err = std::abs(g[j] - fd);
      if (scale > 1e-10) worst = std::max(worst, err / scale);
      c.expect(err <= 1e-4 * scale + 1e-10, "draw " + std::to_string(i) + " logit " + std::to_string(j));
    }
  }
  const double secs = seconds_since(t0);
  c.expect(secs < 30, "runtime " + fmt(secs) + " s");
  return c.done("100 draws x 7 logits, worst rel " + fmt(worst, 3) + ", " + fmt(secs, 3) + " s");
}

ProbRow random_row(Rng& rng, bool coarse) {
  ProbRow r{};
  double s = 0;
  for (double& v : r) {
    v = coarse ? static_cast<double>(rng.below(4)) : rng.uniform();
    s += v;
  }
  if (s == 0) r[0] = s = 1;
  for (double& v : r) v /= s;
  return r;
}

// 3. Metrics against brute-force counting and pair enumeration.
Outcome metrics_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Checker c;
  Rng rng(303);
  auto near = [&](double got, double want, const std::string& what) {
    c.expect(std::abs(got - want) <= 1e-9, what + " " + fmt(got, 12) + " vs " + fmt(want, 12));
  };
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(120));
    std::vector<ProbRow> p;
    std::vector<int> t;
    for (int i = 0; i < n; ++i) {
      p.push_back(random_row(rng, trial % 3 == 0));
      t.push_back(static_cast<int>(rng.below(7)));
    }
    const MetricsReport r = evaluate_predictions(p, t);
    const std::string tag = "set " + std::to_string(trial) + " ";
    c.expect(report_violations(r).empty(), tag + "report invariants");

    // Ranking by probability, lower class index first on ties.
    std::vector<std::array<int, 7>> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      auto& o = order[static_cast<std::size_t>(i)];
      std::iota(o.begin(), o.end(), 0);
      std::stable_sort(o.begin(), o.end(), [&](int a, int b) { return p[i][a] > p[i][b]; });
    }
    int correct = 0;
    for (int i = 0; i < n; ++i) correct += order[static_cast<std::size_t>(i)][0] == t[i];
    near(r.accuracy, static_cast<double>(correct) / n, tag + "accuracy");
    for (int k = 1; k <= 3; ++k) {
      int hits = 0;
      for (int i = 0; i < n; ++i) {
        const auto& o = order[static_cast<std::size_t>(i)];
        hits += std::find(o.begin(), o.begin() + k, t[i]) != o.begin() + k;
      }
      near(r.top_k.at(k), static_cast<double>(hits) / n, tag + "top-" + std::to_string(k));
    }

    double mp = 0, mr = 0, mf = 0, ms = 0;
    for (int cls = 0; cls < 7; ++cls) {
      double tp = 0, fp = 0, fn = 0, tn = 0;
      for (int i = 0; i < n; ++i) {
        const bool pred = order[static_cast<std::size_t>(i)][0] == cls, truth = t[i] == cls;
        tp += pred && truth;
        fp += pred && !truth;
        fn += !pred && truth;
        tn += !pred && !truth;
      }
      const double prec = tp + fp > 0 ? tp / (tp + fp) : 0.0;
      const double rec = tp + fn > 0 ? tp / (tp + fn) : 0.0;
      const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
      const double spec = tn + fp > 0 ? tn / (tn + fp) : 0.0;
      mp += prec / 7;
      mr += rec / 7;
      mf += f1 / 7;
      ms += spec / 7;
      const auto& m = r.per_class[static_cast<std::size_t>(cls)];
      const std::string ct = tag + "class " + std::to_string(cls) + " ";
      near(m.precision, prec, ct + "precision");
      near(m.recall, rec, ct + "recall");
      near(m.f1, f1, ct + "f1");
      near(m.specificity, spec, ct + "specificity");

      double good = 0, pairs = 0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          if (t[i] != cls || t[j] == cls) continue;
          pairs += 1;
          const double a = p[i][cls], b = p[j][cls];
          good += a > b ? 1.0 : a == b ? 0.5 : 0.0;
        }
      c.expect(r.auc.defined[static_cast<std::size_t>(cls)] == (pairs > 0), ct + "auc definedness");
      if (pairs > 0) near(r.auc.per_class[static_cast<std::size_t>(cls)], good / pairs, ct + "auc");
    }
    near(r.macro_precision, mp, tag + "macro precision");
    near(r.macro_recall, mr, tag + "macro recall");
    near(r.macro_f1, mf, tag + "macro f1");
    near(r.macro_specificity, ms, tag + "macro specificity");
  }
  const double secs = seconds_since(t0);
  c.expect(secs < 30, "runtime " + fmt(secs) + " s");
  return c.done("200 prediction sets, " + fmt(secs, 3) + " s");
}

// 4. Manifest invariants on skewed catalogs.
Outcome split_invariants() {
  const auto t0 = std::chrono::steady_clock::now();
  Checker c;
  double max_ratio = 0;
  for (std::uint64_t trial = 0; trial < 50; ++trial) {
    auto recs = testutil::skewed_catalog(trial, 58.0);
    if (trial % 2 == 0) {
      // Top the majority class up to exactly 58 times the smallest.
      PerClass<int> lesions{};
      for (const auto& l : group_lesions(recs)) ++lesions[static_cast<std::size_t>(index_of(l.label))];
      const int smallest = *std::min_element(lesions.begin(), lesions.end());
      for (int l = 0; l < 58 * smallest - lesions[5]; ++l)
        recs.push_back(testutil::record("XTRA_" + std::to_string(trial) + "_" + std::to_string(l),
                                        "XLES_" + std::to_string(l), 5));
    }
    PerClass<int> lesions{};
    for (const auto& l : group_lesions(recs)) ++lesions[static_cast<std::size_t>(index_of(l.label))];
    max_ratio = std::max(max_ratio, static_cast<double>(*std::max_element(lesions.begin(), lesions.end())) /
                                        *std::min_element(lesions.begin(), lesions.end()));

    const SplitManifest m = prepare_manifest(recs, trial * 7 + 1, {0.2, 0.2}, 5);
    for (const auto& v : testutil::manifest_violations(recs, m)) c.fail("catalog " + std::to_string(trial) + ": " + v);

    const SplitManifest again = prepare_manifest(recs, trial * 7 + 1, {0.2, 0.2}, 5);
    c.expect(again == m, "catalog " + std::to_string(trial) + ": same seed gave a different manifest");
    auto shuffled = recs;
    Rng rng(trial);
    rng.shuffle(shuffled);
    c.expect(prepare_manifest(shuffled, trial * 7 + 1, {0.2, 0.2}, 5) == m,
             "catalog " + std::to_string(trial) + ": record order changed the manifest");
  }
  const double secs = seconds_since(t0);
  c.expect(max_ratio >= 58.0, "largest skew only " + fmt(max_ratio));
  c.expect(secs < 60, "runtime " + fmt(secs) + " s");
  return c.done("50 catalogs, max lesion skew " + fmt(max_ratio, 3) + ":1, " + fmt(secs, 3) + " s");
}

// Shared toy workspace for criteria 5, 6 and 8.
struct ToyWorkspace {
  fs::path root;
  fs::path config;
  fs::path out;
  std::optional<fs::path> fold0_checkpoint;
};

const char* kToyConfig = R"(dataset:
  metadata_path: data/metadata.csv
  images_root: data/images
split:
  seed: 42
  test_fraction: 0.2
  val_fraction: 0.2
  k: 5
augmentation:
  max_degrees: 180
  crop_scale_min: 0.8
  cutout_side: 32
model:
  backbone: tiny_test
  pretrained: false
  dropout_rate: 0.5
  hidden_width: 512
  init_seed: 1
train:
  initial_lr: 0.001
  batch_size: 32
  max_epochs: @EPOCHS@
  loss: focal
  gamma: 2
  class_weights: balanced
  seed: 7
ensemble:
  tta_n: 10
  tta_seed: 3
output_dir: out
)";

void write_config(const fs::path& path, int epochs) {
  std::string text = kToyConfig;
  text.replace(text.find("@EPOCHS@"), 8, std::to_string(epochs));
  std::ofstream(path) << text;
}

// 5. prepare -> crossval (k = 5) -> ensemble on 700 synthetic images.
Outcome toy_end_to_end(ToyWorkspace& ws) {
  const auto t0 = std::chrono::steady_clock::now();
  Checker c;
  const ToyDataset toy = generate_toy_dataset(ws.root / "data", ToyOptions{});
  c.expect(toy.images == 700 && toy.lesions == 490,
           "toy set has " + std::to_string(toy.images) + " images / " + std::to_string(toy.lesions) + " lesions");
  write_config(ws.config, 8);
  const std::string cfg = ws.config.string();
  std::string err;

  if (int code = cli({"--config", cfg, "prepare", "--run-name", "prep"}, &err); code != 0)
    return {false, "prepare exited " + std::to_string(code) + ": " + err};
  const auto catalog = load_catalog(toy.metadata, toy.images_dir);
  const SplitManifest m = load_manifest(ws.out / "prep" / "manifest.json");
  for (const auto& v : testutil::manifest_violations(catalog, m)) c.fail("manifest: " + v);
  c.expect(m.k == 5, "manifest k = " + std::to_string(m.k));

  if (int code = cli({"--config", cfg, "crossval", "--run-name", "cv"}, &err); code != 0)
    return {false, "crossval exited " + std::to_string(code) + ": " + err};
  if (fs::exists(ws.out / "cv" / "fold_0" / "checkpoint.dckpt")) ws.fold0_checkpoint = ws.out / "cv" / "fold_0" / "checkpoint.dckpt";

  if (int code = cli({"--config", cfg, "ensemble", "--from", (ws.out / "cv").string(), "--run-name", "ens"}, &err);
      code != 0)
    return {false, "ensemble exited " + std::to_string(code) + ": " + err};
  const double secs = seconds_since(t0);

  const MetricsReport r = load_report_json(ws.out / "ens" / "ensemble" / "metrics.json");
  c.expect(r.accuracy >= 0.95, "ensemble accuracy " + fmt(r.accuracy));
  c.expect(r.top_k.at(1) <= r.top_k.at(2) && r.top_k.at(2) <= r.top_k.at(3), "top-k not monotone");
  for (const auto& v : report_violations(r)) c.fail("report: " + v);
  c.expect(read_json(ws.out / "ens" / "ensemble.json")["checkpoint_paths"].size() == 5, "ensemble members != 5");
  c.expect(secs < 900, "runtime " + fmt(secs) + " s");
  std::string detail = "ensemble acc " + fmt(r.accuracy) + ", top-2 " + fmt(r.top_k.at(2)) + ", top-3 " +
                       fmt(r.top_k.at(3)) + ", " + std::to_string(r.samples) + " test images";
  if (fs::exists(ws.out / "ens" / "tta" / "metrics.json"))
    detail += ", tta acc " + fmt(load_report_json(ws.out / "ens" / "tta" / "metrics.json").accuracy);
  return c.done(detail + ", " + fmt(secs, 4) + " s");
}

// 6. Ablation matrix and per-class tables.
Outcome ablation_structure(const ToyWorkspace& ws) {
  const auto t0 = std::chrono::steady_clock::now();
  Checker c;
  const fs::path cfg = ws.root / "ablation.yaml";
  write_config(cfg, 1);
  std::string err;
  if (int code = cli({"--config", cfg.string(), "--manifest", (ws.out / "prep" / "manifest.json").string(), "ablation",
                      "--run-name", "abl"},
                     &err);
      code != 0)
    return {false, "ablation exited " + std::to_string(code) + ": " + err};

  const json j = read_json(ws.out / "abl" / "ablation.json");
  const json& rows = j.is_array() ? j : j.at("experiments");
  c.expect(rows.size() == 6, std::to_string(rows.size()) + " experiments");
  const std::array<const char*, 5> toggles = {"dropout", "augment", "class_weights", "focal", "gap"};
  const std::vector<std::string> columns = {"akiec", "bcc", "bkl", "df", "mel", "nv", "vasc", "average"};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const json& e = rows[i];
    const std::string tag = "experiment " + std::to_string(i + 1) + " ";
    c.expect(e.at("experiment").get<int>() == static_cast<int>(i) + 1, tag + "out of order");
    for (std::size_t t = 0; t < toggles.size(); ++t)
      c.expect(e.at("toggles").at(toggles[t]).get<bool>() == (i != t), tag + toggles[t] + " toggle");
    for (const char* metric : {"precision", "recall", "f1"}) {
      const json& row = e.at("per_class").at(metric);
      c.expect(row.size() == columns.size(), tag + metric + " has " + std::to_string(row.size()) + " columns");
      for (const auto& col : columns) {
        const double v = row.contains(col) ? row.at(col).get<double>() : -1.0;
        c.expect(v >= 0 && v <= 1, tag + metric + " " + col);
      }
    }
  }

  std::ifstream md(ws.out / "abl" / "ablation.md");
  std::vector<std::string> lines;
  for (std::string l; std::getline(md, l);) lines.push_back(l);
  int tables = 0, summary_rows = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].rfind("| Experiment", 0) == 0)
      for (std::size_t k = i + 2; k < lines.size() && lines[k].rfind("|", 0) == 0; ++k) ++summary_rows;
    if (lines[i].rfind("| Exp |", 0) != 0) continue;
    ++tables;
    const auto cells = std::count(lines[i].begin(), lines[i].end(), '|') - 1;
    c.expect(cells == 9, "per-class header has " + std::to_string(cells) + " cells");
    int body = 0;
    for (std::size_t k = i + 2; k < lines.size() && lines[k].rfind("|", 0) == 0; ++k, ++body)
      c.expect(std::count(lines[k].begin(), lines[k].end(), '|') - 1 == 9, "short per-class row");
    c.expect(body == 6, "per-class table with " + std::to_string(body) + " rows");
  }
  c.expect(tables == 3, std::to_string(tables) + " per-class tables in ablation.md");
  c.expect(summary_rows == 6, std::to_string(summary_rows) + " summary rows in ablation.md");
  return c.done("6 experiments, toggle matrix and 3 per-class tables (7 classes + average), " +
                fmt(seconds_since(t0), 4) + " s");
}

// 7. Fit 64 toy samples; reduce-on-plateau on a flat loss.
Outcome memorization() {
  const auto t0 = std::chrono::steady_clock::now();
  Checker c;
  std::vector<Image> imgs;
  std::vector<int> labels;
  std::vector<std::string> ids;
  for (int i = 0; i < 64; ++i) {
    const int cls = i % kNumClasses;
    const std::uint64_t s = mix_seed(11, {static_cast<std::uint64_t>(cls), static_cast<std::uint64_t>(i)});
    imgs.push_back(render_toy_sample(cls, s, s + 1, 96, 128).image);
    labels.push_back(cls);
    ids.push_back("M" + std::to_string(i));
  }
  const InMemoryDataset data(std::move(imgs), std::move(labels), std::move(ids));
  ModelSpec spec;
  spec.backbone = BackboneKind::tiny_test;
  spec.pretrained = false;
  spec.init_seed = 5;
  Model model = build_model(spec);
  TrainConfig config;
  config.initial_lr = 1e-3;
  config.batch_size = 16;
  config.max_epochs = 50;
  config.use_augment = false;
  config.seed = 3;
  FitOptions opts;
  opts.stop_when = [](const EpochRecord& r) { return r.val_accuracy >= 0.95; };
  const TrainHistory h = fit(model, data, data, config, opts);
  const EvalResult r = evaluate_model(model, data, loss_spec_for(config, training_class_weights(data, config)));
  c.expect(h.epochs.size() <= 50, std::to_string(h.epochs.size()) + " epochs");
  c.expect(r.accuracy >= 0.95, "train accuracy " + fmt(r.accuracy));

  // Flat loss: first epoch sets the best, then one halving every `patience`
  // epochs, floored at min_lr.
  const double lr0 = 1e-4, min_lr = 1e-7;
  const int patience = 3;
  PlateauScheduler s(lr0, 0.5, patience, min_lr);
  for (int epoch = 1; epoch <= 40; ++epoch) {
    const int halvings = epoch >= 2 ? (epoch - 2) / patience : 0;
    const double expect = std::max(lr0 * std::ldexp(1.0, -halvings), min_lr);
    c.expect(s.learning_rate() == expect, "epoch " + std::to_string(epoch) + " lr " + fmt(s.learning_rate(), 6) +
                                              " expected " + fmt(expect, 6));
    s.step(0.7);
  }
  return c.done("train accuracy " + fmt(r.accuracy) + " after " + std::to_string(h.epochs.size()) +
                " epochs, plateau schedule exact over 40 epochs, " + fmt(seconds_since(t0), 4) + " s");
}

// Quadrant model: a 112x112 stride-112 conv turns 224x224 input into a 2x2
// map whose channel 0 sums red and channel 1 sums green, scaled by 2^-14.
constexpr double kQuadrantScale = 112.0 * 112.0 / 16384.0;

Model quadrant_model(const std::vector<float>& head_weights) {
  nn::Sequential backbone;
  auto& conv = backbone.emplace<nn::Conv2d>(3, 2, nn::Conv2d::Options{.kernel = 112, .stride = 112});
  conv.weight().value.zero();
  const std::size_t k2 = 112 * 112;
  for (std::size_t i = 0; i < k2; ++i) {
    conv.weight().value[i] = 1.0f / 16384.0f;
    conv.weight().value[3 * k2 + k2 + i] = 1.0f / 16384.0f;
  }
  nn::Sequential head;
  head.emplace<nn::Flatten>();
  auto& dense = head.emplace<nn::Dense>(8, 7);
  for (std::size_t i = 0; i < head_weights.size(); ++i) dense.weight().value[i] = head_weights[i];
  dense.bias().value.zero();
  ModelSpec spec;
  spec.backbone = BackboneKind::tiny_test;
  spec.pretrained = false;
  spec.use_gap = false;
  return Model(spec, std::move(backbone), std::move(head));
}

// Bilinear upsampling of a 2x2 map with half-pixel centres and edge clamping.
double upsample_2x2(const std::array<double, 4>& m, int y, int x, int size) {
  auto frac = [&](int d) { return std::clamp((d + 0.5) * 2.0 / size - 0.5, 0.0, 1.0); };
  const double fy = frac(y), fx = frac(x);
  return (m[0] * (1 - fx) + m[1] * fx) * (1 - fy) + (m[2] * (1 - fx) + m[3] * fx) * fy;
}

// 8. GradCAM closed form, output contract and localization.
Outcome gradcam_checks(const ToyWorkspace& ws) {
  const auto t0 = std::chrono::steady_clock::now();
  Checker c;

  std::vector<float> w(56, 0.0f);
  const float c0[4] = {0.2f, 0.8f, 0.4f, 0.6f}, c1[4] = {-0.5f, 0.1f, -0.3f, -0.3f};
  for (int j = 0; j < 4; ++j) {
    w[2 * 8 + j] = c0[j];
    w[2 * 8 + 4 + j] = c1[j];
  }
  Model hand = quadrant_model(w);
  const std::array<float, 4> red = {0.25f, 0.875f, 0.625f, 0.125f}, green = {0.75f, 0.25f, 0.375f, 0.875f};
  Image img(224, 224);
  for (int y = 0; y < 224; ++y)
    for (int x = 0; x < 224; ++x) {
      const auto q = static_cast<std::size_t>((y >= 112) * 2 + (x >= 112));
      img.at(y, x, 0) = red[q];
      img.at(y, x, 1) = green[q];
      img.at(y, x, 2) = 0.375f;
    }
  const double a0 = (0.2 + 0.8 + 0.4 + 0.6) / 4, a1 = (-0.5 + 0.1 - 0.3 - 0.3) / 4;
  std::array<double, 4> raw{};
  for (std::size_t q = 0; q < 4; ++q) raw[q] = std::max(0.0, kQuadrantScale * (a0 * red[q] + a1 * green[q]));
  double lo = 1e9, hi = -1e9;
  for (int y = 0; y < 224; ++y)
    for (int x = 0; x < 224; ++x) {
      lo = std::min(lo, upsample_2x2(raw, y, x, 224));
      hi = std::max(hi, upsample_2x2(raw, y, x, 224));
    }
  const Heatmap h = gradcam(hand, img, 2);
  double worst = 0;
  c.expect(h.height == 224 && h.width == 224 && !h.degenerate, "hand heatmap shape");
  if (h.height == 224 && h.width == 224)
    for (int y = 0; y < 224; ++y)
      for (int x = 0; x < 224; ++x)
        worst = std::max(worst, std::abs(h.at(y, x) - (upsample_2x2(raw, y, x, 224) - lo) / (hi - lo)));
  c.expect(worst <= 1e-6, "hand heatmap max error " + fmt(worst, 3));

  ModelSpec spec;
  spec.backbone = BackboneKind::tiny_test;
  spec.pretrained = false;
  spec.init_seed = 9;
  Model random_model = build_model(spec);
  Rng rng(808);
  for (int i = 0; i < 100; ++i) {
    const int ih = 32 + static_cast<int>(rng.below(300)), iw = 32 + static_cast<int>(rng.below(300));
    Image x(ih, iw);
    for (int yy = 0; yy < ih; ++yy)
      for (int xx = 0; xx < iw; ++xx)
        for (int ch = 0; ch < 3; ++ch) x.at(yy, xx, ch) = static_cast<float>(rng.uniform());
    const int target = static_cast<int>(rng.below(7));
    const Heatmap m = gradcam(random_model, x, target);
    const std::string tag = "random input " + std::to_string(i) + " ";
    c.expect(m.height == 224 && m.width == 224 && m.values.size() == 224u * 224u, tag + "shape");
    c.expect(m.target_class == target, tag + "target");
    const auto [mn, mx] = std::minmax_element(m.values.begin(), m.values.end());
    const bool finite = std::all_of(m.values.begin(), m.values.end(), [](float v) { return std::isfinite(v); });
    c.expect(finite && *mn >= 0.0f && *mx <= 1.0f, tag + "range");
    if (!m.degenerate) c.expect(*mn == 0.0f && *mx == 1.0f, tag + "not min-max normalized");
  }

  std::string loc = "no localization run";
  if (!ws.fold0_checkpoint) {
    c.fail("no fold_0 checkpoint from the toy run");
  } else {
    std::string err;
    const int code = cli({"--config", ws.config.string(), "--manifest", (ws.out / "prep" / "manifest.json").string(),
                          "gradcam", "--checkpoint", ws.fold0_checkpoint->string(), "--subset", "test", "--run-name", "cam"},
                         &err);
    if (code != 0) {
      c.fail("gradcam exited " + std::to_string(code) + ": " + err);
    } else {
      const json j = read_json(ws.out / "cam" / "gradcam.json");
      const int scored = j.at("correct_with_box").get<int>(), wins = j.at("inside_exceeds_outside").get<int>();
      const double rate = scored > 0 ? static_cast<double>(wins) / scored : 0.0;
      c.expect(scored > 0 && rate >= 0.8, "localization " + std::to_string(wins) + " of " + std::to_string(scored));
      loc = "localization " + std::to_string(wins) + "/" + std::to_string(scored) + " (" + fmt(rate, 3) + ")";
    }
  }
  return c.done("hand map error " + fmt(worst, 3) + ", 100 random inputs, " + loc + ", " + fmt(seconds_since(t0), 3) +
                " s");
}

std::vector<double> random_simplex(Rng& rng, std::size_t k) {
  std::vector<double> v(k);
  double s = 0;
  for (double& x : v) s += (x = -std::log(1.0 - rng.uniform()));
  for (double& x : v) x /= s;
  return v;
}

// 9. Probability averaging algebra.
Outcome ensemble_algebra() {
  const auto t0 = std::chrono::steady_clock::now();
  Checker c;
  Rng rng(909);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + rng.below(16);
    std::vector<std::vector<double>> v;
    for (std::size_t i = 0; i < n; ++i) v.push_back(random_simplex(rng, 7));
    const std::string tag = "set " + std::to_string(t) + " ";

    const auto idem = average_probabilities(std::vector<std::vector<double>>(n, v[0]));
    for (std::size_t k = 0; k < 7; ++k) c.expect(std::abs(idem[k] - v[0][k]) <= 1e-9, tag + "idempotence");

    const auto mean = average_probabilities(v);
    c.expect(std::abs(std::accumulate(mean.begin(), mean.end(), 0.0) - 1.0) <= 1e-9, tag + "sum");
    for (std::size_t k = 0; k < 7; ++k) {
      double lo = 1, hi = 0;
      Big exact = 0;
      for (const auto& x : v) {
        lo = std::min(lo, x[k]);
        hi = std::max(hi, x[k]);
        exact += x[k];
      }
      c.expect(mean[k] >= lo - 1e-9 && mean[k] <= hi + 1e-9, tag + "convexity");
      c.expect(std::abs(mean[k] - static_cast<double>(exact / n)) <= 1e-9, tag + "exact mean");
    }

    auto perm = v;
    rng.shuffle(perm);
    const auto shuffled = average_probabilities(perm);
    for (std::size_t k = 0; k < 7; ++k) c.expect(std::abs(shuffled[k] - mean[k]) <= 1e-9, tag + "order");
  }
  const double secs = seconds_since(t0);
  c.expect(secs < 5, "runtime " + fmt(secs) + " s");
  return c.done("1000 sets, " + fmt(secs, 3) + " s");
}

Outcome guarded(const std::function<Outcome()>& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    return {false, std::string("exception: ") + e.what()};
  }
}

}  // namespace

int main() {
  ToyWorkspace ws;
  ws.root = testutil::temp_dir("acceptance");
  ws.config = ws.root / "toy.yaml";
  ws.out = ws.root / "out";

  const std::vector<std::function<Outcome()>> criteria = {
      loss_oracle,
      gradient_check,
      metrics_oracle,
      split_invariants,
      [&] { return toy_end_to_end(ws); },
      [&] { return ablation_structure(ws); },
      memorization,
      [&] { return gradcam_checks(ws); },
      ensemble_algebra,
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const Outcome o = guarded(criteria[i]);
    failed += !o.pass;
    std::cout << "ACCEPTANCE " << i + 1 << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
  }
  std::error_code ec;
  fs::remove_all(ws.root, ec);
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << std::endl;
  return failed ? 1 : 0;
}
