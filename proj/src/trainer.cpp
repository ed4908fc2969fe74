#include "derm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "derm/error.hpp"
#include "derm/nn/adam.hpp"
#include "derm/rng.hpp"

namespace derm {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Salts that keep the per-purpose random streams apart.
constexpr std::uint64_t kShuffleSalt = 0x73687566;
constexpr std::uint64_t kAugmentSalt = 0x61756730;
constexpr std::uint64_t kDropoutSalt = 0x64726f70;

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::vector<ProbRow> softmax_rows(const Tensor& logits) {
  const int n = logits.dim(0);
  const int k = logits.dim(1);
  if (k != kNumClasses) throw ModelError("model emits " + std::to_string(k) + " classes, expected 7");
  std::vector<ProbRow> out(static_cast<std::size_t>(n));
  std::vector<double> row(static_cast<std::size_t>(k));
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < k; ++c) row[static_cast<std::size_t>(c)] = logits[static_cast<std::size_t>(i) * k + c];
    const auto p = softmax(row);
    std::copy(p.begin(), p.end(), out[static_cast<std::size_t>(i)].begin());
  }
  return out;
}

struct Snapshot {
  std::vector<Tensor> values;
  static Snapshot take(Model& m) {
    Snapshot s;
    for (nn::Parameter* p : m.parameters()) s.values.push_back(p->value);
    return s;
  }
  void restore(Model& m) const {
    auto params = m.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
  }
};

}  // namespace

std::string_view to_string(ClassWeightMode mode) {
  switch (mode) {
    case ClassWeightMode::balanced: return "balanced";
    case ClassWeightMode::manual: return "manual";
    case ClassWeightMode::none: return "none";
  }
  return "?";
}

ClassWeightMode parse_class_weight_mode(std::string_view name) {
  if (name == "balanced") return ClassWeightMode::balanced;
  if (name == "manual") return ClassWeightMode::manual;
  if (name == "none") return ClassWeightMode::none;
  throw ConfigError("unknown class weight scheme '" + std::string(name) + "' (balanced, manual, none)");
}

std::string_view to_string(Monitor monitor) {
  return monitor == Monitor::val_accuracy ? "val_accuracy" : "val_loss";
}

Monitor parse_monitor(std::string_view name) {
  if (name == "val_accuracy") return Monitor::val_accuracy;
  if (name == "val_loss") return Monitor::val_loss;
  throw ConfigError("unknown monitor '" + std::string(name) + "' (val_accuracy, val_loss)");
}

void TrainConfig::validate() const {
  if (!(min_lr > 0.0)) throw ConfigError("min_lr must be positive");
  if (!(initial_lr > min_lr)) throw ConfigError("initial_lr must exceed min_lr");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (eval_batch_size < 1) throw ConfigError("eval_batch_size must be at least 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) throw ConfigError("plateau_factor must lie in (0, 1)");
  if (plateau_patience < 1) throw ConfigError("plateau_patience must be at least 1");
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be non-negative");
  if (class_weights == ClassWeightMode::manual) {
    if (manual_weights.size() != static_cast<std::size_t>(kNumClasses))
      throw ConfigError("manual class weights need one entry per class");
    for (const auto& [c, w] : manual_weights)
      if (!(w > 0.0) || !std::isfinite(w)) throw ConfigError("manual class weights must be positive");
  }
  if (use_augment) augmentation.validate();
}

json to_json(const TrainConfig& c) {
  json manual = json::object();
  for (const auto& [label, w] : c.manual_weights) manual[std::string(code_of(label))] = w;
  return {{"initial_lr", c.initial_lr},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"plateau_factor", c.plateau_factor},
          {"plateau_patience", c.plateau_patience},
          {"min_lr", c.min_lr},
          {"loss", to_string(c.loss)},
          {"gamma", c.gamma},
          {"class_weights", to_string(c.class_weights)},
          {"manual_weights", manual},
          {"use_dropout", c.use_dropout},
          {"use_augment", c.use_augment},
          {"use_gap", c.use_gap},
          {"seed", c.seed},
          {"monitor", to_string(c.monitor)},
          {"eval_batch_size", c.eval_batch_size}};
}

ModelSpec effective_model_spec(const ModelSpec& base, const TrainConfig& config) {
  ModelSpec s = base;
  s.use_gap = config.use_gap;
  if (!config.use_dropout) s.dropout_rate = 0.0;
  return s;
}

std::vector<double> training_class_weights(const Dataset& train, const TrainConfig& config) {
  switch (config.class_weights) {
    case ClassWeightMode::none:
      return std::vector<double>(kNumClasses, 1.0);
    case ClassWeightMode::manual: {
      std::vector<double> w(kNumClasses, 0.0);
      for (const auto& [label, v] : config.manual_weights) w[static_cast<std::size_t>(index_of(label))] = v;
      return w;
    }
    case ClassWeightMode::balanced: {
      std::vector<std::int64_t> counts(kNumClasses, 0);
      for (std::size_t i = 0; i < train.size(); ++i) ++counts[static_cast<std::size_t>(train.label(i))];
      return balanced_weights(counts);
    }
  }
  return {};
}

LossSpec loss_spec_for(const TrainConfig& config, std::vector<double> weights) {
  LossSpec s;
  s.kind = config.loss;
  s.gamma = config.gamma;
  s.weights = std::move(weights);
  return s;
}

PlateauScheduler::PlateauScheduler(double lr, double factor, int patience, double min_lr)
    : lr_(lr), factor_(factor), patience_(patience), min_lr_(min_lr), best_(std::numeric_limits<double>::infinity()) {}

double PlateauScheduler::step(double loss) {
  if (loss < best_) {
    best_ = loss;
    wait_ = 0;
  } else if (++wait_ >= patience_) {
    lr_ = std::max(lr_ * factor_, min_lr_);
    wait_ = 0;
  }
  return lr_;
}

json to_json(const TrainHistory& h) {
  json epochs = json::array();
  for (const EpochRecord& e : h.epochs)
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"train_accuracy", e.train_accuracy},
                      {"val_loss", e.val_loss},
                      {"val_accuracy", e.val_accuracy},
                      {"lr", e.learning_rate}});
  return {{"epochs", epochs},
          {"best_epoch", h.best_epoch},
          {"best_val_accuracy", h.best_val_accuracy},
          {"monitor", to_string(h.monitor)}};
}

void write_history_csv(const TrainHistory& h, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "epoch,train_loss,val_loss,val_acc,lr\n";
  for (const EpochRecord& e : h.epochs)
    out << e.epoch << ',' << format_double(e.train_loss) << ',' << format_double(e.val_loss) << ','
        << format_double(e.val_accuracy) << ',' << format_double(e.learning_rate) << '\n';
  if (!out) throw Error("failed writing " + path.string());
}

void write_history_json(const TrainHistory& h, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json(h).dump(2) << '\n';
}

EvalResult evaluate_model(const Model& model, const Dataset& data, const LossSpec& loss, int batch_size) {
  EvalResult r;
  const std::size_t n = data.size();
  if (n == 0) return r;
  std::vector<double> losses;
  std::int64_t correct = 0;
  std::vector<std::size_t> idx;
  const ImageTransform eval = [](const Image& img, std::size_t) { return preprocess_eval(img); };
  for (std::size_t begin = 0; begin < n; begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(n, begin + static_cast<std::size_t>(batch_size));
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const Tensor logits = model.logits(load_batch(data, idx, eval));
    const auto probs = softmax_rows(logits);
    for (std::size_t i = 0; i < probs.size(); ++i) {
      const int t = data.label(begin + i);
      std::vector<double> z(kNumClasses);
      for (int c = 0; c < kNumClasses; ++c) z[static_cast<std::size_t>(c)] = logits[i * kNumClasses + c];
      losses.push_back(loss_from_logits(z, t, loss));
      correct += predicted_class(probs[i]) == t;
      r.probabilities.push_back(probs[i]);
      r.labels.push_back(t);
    }
  }
  r.loss = batch_mean(losses);
  r.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return r;
}

TrainHistory fit(Model& model, const Dataset& train, const Dataset& val, const TrainConfig& config,
                 const FitOptions& options) {
  config.validate();
  if (train.size() == 0) throw DataError("the training subset is empty");
  if (val.size() == 0) throw DataError("the validation subset is empty");
  const LossSpec loss = loss_spec_for(config, training_class_weights(train, config));

  nn::Adam adam(model.parameters(), {.lr = config.initial_lr});
  PlateauScheduler scheduler(config.initial_lr, config.plateau_factor, config.plateau_patience, config.min_lr);
  TrainHistory history;
  history.monitor = config.monitor;
  Snapshot best = Snapshot::take(model);
  double best_score = config.monitor == Monitor::val_accuracy ? -1.0 : std::numeric_limits<double>::infinity();

  const std::size_t n = train.size();
  const auto batch = static_cast<std::size_t>(config.batch_size);
  std::vector<std::size_t> order(n);
  std::vector<double> z(kNumClasses);

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const double lr = scheduler.learning_rate();
    adam.set_learning_rate(lr);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng(mix_seed(config.seed, {kShuffleSalt, static_cast<std::uint64_t>(epoch)})).shuffle(order);

    const ImageTransform transform = [&](const Image& img, std::size_t index) {
      if (!config.use_augment) return preprocess_eval(img);
      return augment_train(img, config.augmentation,
                           mix_seed(config.seed, {kAugmentSalt, static_cast<std::uint64_t>(epoch), index}));
    };

    double loss_sum = 0;
    std::int64_t correct = 0;
    int batch_index = 0;
    for (std::size_t begin = 0; begin < n; begin += batch, ++batch_index) {
      const std::size_t end = std::min(n, begin + batch);
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const Tensor x = load_batch(train, idx, transform);
      model.reseed(mix_seed(config.seed, {kDropoutSalt, static_cast<std::uint64_t>(epoch),
                                          static_cast<std::uint64_t>(batch_index)}));
      const Tensor logits = model.forward(x, true);
      const auto rows = static_cast<std::size_t>(logits.dim(0));
      Tensor grad(logits.shape());
      double batch_loss = 0;
      for (std::size_t i = 0; i < rows; ++i) {
        for (int c = 0; c < kNumClasses; ++c) z[static_cast<std::size_t>(c)] = logits[i * kNumClasses + c];
        const int t = train.label(idx[i]);
        std::vector<double> g;
        double l;
        try {
          l = loss_from_logits(z, t, loss);
          g = loss_gradient(z, t, loss);
        } catch (const std::invalid_argument&) {
          l = std::numeric_limits<double>::quiet_NaN();
        }
        if (!std::isfinite(l)) {
          char buf[160];
          std::snprintf(buf, sizeof buf, "loss became non-finite at epoch %d, batch %d (learning rate %.3g)", epoch,
                        batch_index, lr);
          throw TrainingError(buf);
        }
        batch_loss += l;
        for (int c = 0; c < kNumClasses; ++c)
          grad[i * kNumClasses + c] = static_cast<float>(g[static_cast<std::size_t>(c)] / static_cast<double>(rows));
        int best_c = 0;
        for (int c = 1; c < kNumClasses; ++c)
          if (z[static_cast<std::size_t>(c)] > z[static_cast<std::size_t>(best_c)]) best_c = c;
        correct += best_c == t;
      }
      loss_sum += batch_loss;
      model.backward(grad);
      adam.step();
      model.zero_grad();
    }
    model.release_cache();

    const EvalResult v = evaluate_model(model, val, loss, config.eval_batch_size);
    EpochRecord rec{epoch,
                    loss_sum / static_cast<double>(n),
                    static_cast<double>(correct) / static_cast<double>(n),
                    v.loss,
                    v.accuracy,
                    lr};
    history.epochs.push_back(rec);
    history.best_val_accuracy = std::max(history.best_val_accuracy, v.accuracy);

    const bool improved = config.monitor == Monitor::val_accuracy ? v.accuracy > best_score : v.loss < best_score;
    if (improved) {
      best_score = config.monitor == Monitor::val_accuracy ? v.accuracy : v.loss;
      history.best_epoch = epoch;
      best = Snapshot::take(model);
      if (options.checkpoint_path) save_checkpoint(model, *options.checkpoint_path);
    }
    if (options.on_epoch) options.on_epoch(rec);
    scheduler.step(v.loss);
    if (options.stop_when && options.stop_when(rec)) break;
  }
  best.restore(model);
  return history;
}

TrainResult train(Model& model, std::span<const LesionRecord> catalog, const SplitManifest& manifest,
                  const TrainConfig& config, const fs::path& out_dir, std::function<void(const EpochRecord&)> on_epoch) {
  const FileDataset train_set = FileDataset::select(catalog, manifest.train_ids);
  const FileDataset val_set = FileDataset::select(catalog, manifest.val_ids);
  TrainResult r;
  r.checkpoint = out_dir / "checkpoint.dckpt";
  r.history = fit(model, train_set, val_set, config, {r.checkpoint, std::move(on_epoch), {}});
  write_history_csv(r.history, out_dir / "history.csv");
  write_history_json(r.history, out_dir / "history.json");
  return r;
}

std::vector<AblationExperiment> ablation_plan(const ModelSpec& base_model, const TrainConfig& base) {
  if (!base.use_dropout || !base.use_augment || base.class_weights == ClassWeightMode::none ||
      base.loss != LossKind::focal || !base.use_gap)
    throw ConfigError(
        "the ablation base config must enable dropout, augmentation, class weights, focal loss and global pooling");
  std::vector<AblationExperiment> plan(6);
  const char* names[] = {"no dropout", "no augment", "no CW", "no FC", "no GAP", "full"};
  for (int i = 0; i < 6; ++i) {
    AblationExperiment& e = plan[static_cast<std::size_t>(i)];
    e.index = i + 1;
    e.name = names[i];
    e.config = base;
    switch (i) {
      case 0: e.dropout = false; e.config.use_dropout = false; break;
      case 1: e.augment = false; e.config.use_augment = false; break;
      case 2: e.class_weights = false; e.config.class_weights = ClassWeightMode::none; break;
      case 3: e.focal = false; e.config.loss = LossKind::weighted_ce; break;
      case 4: e.gap = false; e.config.use_gap = false; break;
      default: break;
    }
    e.model = effective_model_spec(base_model, e.config);
  }
  return plan;
}

namespace {

MetricsReport test_report(const Model& model, const Dataset& test, const TrainConfig& config) {
  const EvalResult r = evaluate_model(model, test, loss_spec_for(config, std::vector<double>(kNumClasses, 1.0)),
                                      config.eval_batch_size);
  return evaluate_predictions(r.probabilities, r.labels);
}

std::string slug(const std::string& name) {
  std::string s;
  for (char c : name) s += c == ' ' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

AblationReport run_ablation(const ModelSpec& base_model, const TrainConfig& base, std::span<const LesionRecord> catalog,
                            const SplitManifest& manifest, const fs::path& out_dir,
                            std::function<void(const std::string&)> log) {
  AblationReport report;
  report.experiments = ablation_plan(base_model, base);
  const FileDataset test = FileDataset::select(catalog, manifest.test_ids);
  for (AblationExperiment& e : report.experiments) {
    e.run_dir = out_dir / ("exp" + std::to_string(e.index) + "_" + slug(e.name));
    if (log) log("ablation experiment " + std::to_string(e.index) + " (" + e.name + ")");
    Model model = build_model(e.model);
    TrainResult r = train(model, catalog, manifest, e.config, e.run_dir, [&](const EpochRecord& rec) {
      if (log)
        log("  epoch " + std::to_string(rec.epoch) + " train_loss " + format_double(rec.train_loss) + " val_acc " +
            format_double(rec.val_accuracy));
    });
    e.history = std::move(r.history);
    e.test_report = test_report(model, test, e.config);
    render_report(e.test_report, e.run_dir);
  }
  std::ofstream(out_dir / "ablation.json") << to_json(report).dump(2) << '\n';
  std::ofstream(out_dir / "ablation.md") << render_markdown(report);
  return report;
}

json to_json(const AblationReport& report) {
  json rows = json::array();
  for (const AblationExperiment& e : report.experiments) {
    const MetricsReport& m = e.test_report;
    json per_class = json::object();
    for (const char* metric : {"precision", "recall", "f1"}) {
      json row = json::object();
      for (int c = 0; c < kNumClasses; ++c) {
        const ClassMetrics& cm = m.per_class[static_cast<std::size_t>(c)];
        const std::string name(metric);
        row[std::string(code_of(class_from_index(c)))] =
            name == "precision" ? cm.precision : name == "recall" ? cm.recall : cm.f1;
      }
      row["average"] = std::string(metric) == "precision" ? m.macro_precision
                       : std::string(metric) == "recall"  ? m.macro_recall
                                                          : m.macro_f1;
      per_class[metric] = row;
    }
    rows.push_back({{"experiment", e.index},
                    {"name", e.name},
                    {"toggles",
                     {{"dropout", e.dropout},
                      {"augment", e.augment},
                      {"class_weights", e.class_weights},
                      {"focal", e.focal},
                      {"gap", e.gap}}},
                    {"loss", to_string(e.config.loss)},
                    {"class_weight_scheme", to_string(e.config.class_weights)},
                    {"dropout_rate", e.model.dropout_rate},
                    {"use_gap", e.model.use_gap},
                    {"best_epoch", e.history.best_epoch},
                    {"best_val_accuracy", e.history.best_val_accuracy},
                    {"accuracy", m.accuracy},
                    {"precision", m.macro_precision},
                    {"recall", m.macro_recall},
                    {"f1", m.macro_f1},
                    {"per_class", per_class},
                    {"run_dir", e.run_dir.string()}});
  }
  return {{"experiments", rows}};
}

std::string render_markdown(const AblationReport& report) {
  std::ostringstream md;
  char buf[64];
  auto pct = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.1f", 100.0 * v);
    return std::string(buf);
  };
  auto dec = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };
  auto mark = [](bool on) { return on ? "yes" : "no"; };

  md << "# Ablation\n\n";
  md << "| Experiment | Dropout | Augment | CW | FC | GAP | Accuracy | Precision | Recall | F1 |\n";
  md << "|---|---|---|---|---|---|---|---|---|---|\n";
  for (const AblationExperiment& e : report.experiments) {
    const MetricsReport& m = e.test_report;
    md << "| " << e.index << " (" << e.name << ") | " << mark(e.dropout) << " | " << mark(e.augment) << " | "
       << mark(e.class_weights) << " | " << mark(e.focal) << " | " << mark(e.gap) << " | " << pct(m.accuracy) << " | "
       << pct(m.macro_precision) << " | " << pct(m.macro_recall) << " | " << pct(m.macro_f1) << " |\n";
  }
  const std::pair<const char*, int> metrics[] = {{"Precision", 0}, {"Recall", 1}, {"F1-score", 2}};
  for (const auto& [title, which] : metrics) {
    md << "\n## " << title << "\n\n| Exp |";
    for (ClassLabel c : kAllClasses) md << ' ' << code_of(c) << " |";
    md << " Average |\n|---|";
    for (int c = 0; c <= kNumClasses; ++c) md << "---|";
    md << '\n';
    for (const AblationExperiment& e : report.experiments) {
      const MetricsReport& m = e.test_report;
      md << "| " << e.index << " |";
      for (const ClassMetrics& cm : m.per_class)
        md << ' ' << dec(which == 0 ? cm.precision : which == 1 ? cm.recall : cm.f1) << " |";
      md << ' ' << dec(which == 0 ? m.macro_precision : which == 1 ? m.macro_recall : m.macro_f1) << " |\n";
    }
  }
  return md.str();
}

std::vector<FoldRun> train_kfold(const ModelSpec& base_model, const TrainConfig& config,
                                 std::span<const LesionRecord> catalog, const SplitManifest& manifest,
                                 const fs::path& out_dir, std::function<void(const std::string&)> log) {
  if (manifest.k < 2) throw ConfigError("the manifest carries no k-fold assignment; prepare it with k >= 2");
  const FileDataset test = FileDataset::select(catalog, manifest.test_ids);
  std::vector<FoldRun> runs;
  for (int fold = 0; fold < manifest.k; ++fold) {
    const FoldSubsets subsets = fold_subsets(catalog, manifest, fold);
    const FileDataset train_set = FileDataset::select(catalog, subsets.train_ids);
    const FileDataset val_set = FileDataset::select(catalog, subsets.val_ids);
    TrainConfig fold_config = config;
    fold_config.seed = mix_seed(config.seed, {static_cast<std::uint64_t>(fold)});
    ModelSpec spec = effective_model_spec(base_model, fold_config);
    spec.init_seed = mix_seed(base_model.init_seed, {static_cast<std::uint64_t>(fold)});

    FoldRun run;
    run.fold = fold;
    const fs::path dir = out_dir / ("fold_" + std::to_string(fold));
    run.checkpoint = dir / "checkpoint.dckpt";
    if (log)
      log("fold " + std::to_string(fold) + ": " + std::to_string(train_set.size()) + " train, " +
          std::to_string(val_set.size()) + " val images");
    Model model = build_model(spec);
    run.history = fit(model, train_set, val_set, fold_config,
                      {run.checkpoint, [&](const EpochRecord& rec) {
                         if (log)
                           log("  epoch " + std::to_string(rec.epoch) + " train_loss " + format_double(rec.train_loss) +
                               " val_loss " + format_double(rec.val_loss) + " val_acc " +
                               format_double(rec.val_accuracy) + " lr " + format_double(rec.learning_rate));
                       },
                       {}});
    write_history_csv(run.history, dir / "history.csv");
    write_history_json(run.history, dir / "history.json");
    run.test_report = test_report(model, test, fold_config);
    run.test_ids = manifest.test_ids;
    render_report(run.test_report, dir);
    runs.push_back(std::move(run));
  }
  return runs;
}

}  // namespace derm
