#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "derm/augment.hpp"
#include "derm/catalog.hpp"
#include "derm/dataset.hpp"
#include "derm/losses.hpp"
#include "derm/metrics.hpp"
#include "derm/model.hpp"

namespace derm {

enum class ClassWeightMode { balanced, manual, none };
enum class Monitor { val_accuracy, val_loss };

std::string_view to_string(ClassWeightMode mode);
ClassWeightMode parse_class_weight_mode(std::string_view name);
std::string_view to_string(Monitor monitor);
Monitor parse_monitor(std::string_view name);

struct TrainConfig {
  double initial_lr = 1e-4;
  int batch_size = 64;
  int max_epochs = 50;
  double plateau_factor = 0.5;
  int plateau_patience = 3;
  double min_lr = 1e-7;
  LossKind loss = LossKind::focal;
  double gamma = kDefaultGamma;
  ClassWeightMode class_weights = ClassWeightMode::balanced;
  std::map<ClassLabel, double> manual_weights;
  bool use_dropout = true;
  bool use_augment = true;
  bool use_gap = true;
  std::uint64_t seed = 0;
  Monitor monitor = Monitor::val_accuracy;
  TransformSpec augmentation;
  int eval_batch_size = 64;

  // Throws ConfigError.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& config);

// The model spec a run actually trains: dropout and pooling follow the
// config toggles.
ModelSpec effective_model_spec(const ModelSpec& base, const TrainConfig& config);

// Loss weights for a training set: balanced weights from its image counts,
// the manual map, or none (unit weights).
std::vector<double> training_class_weights(const Dataset& train, const TrainConfig& config);
LossSpec loss_spec_for(const TrainConfig& config, std::vector<double> weights);

// Reduce-on-plateau on a loss that should decrease: after `patience`
// consecutive epochs without strict improvement the rate is multiplied by
// `factor` (floored at min_lr) and the wait counter restarts.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, double factor, int patience, double min_lr);
  // Records one epoch's monitored loss and returns the rate for the next one.
  double step(double loss);
  double learning_rate() const { return lr_; }

 private:
  double lr_;
  double factor_;
  int patience_;
  double min_lr_;
  double best_;
  int wait_ = 0;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0;
  double train_accuracy = 0;
  double val_loss = 0;
  double val_accuracy = 0;
  double learning_rate = 0;  // rate used during this epoch
  bool operator==(const EpochRecord&) const = default;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // epoch whose parameters were kept
  double best_val_accuracy = 0;
  Monitor monitor = Monitor::val_accuracy;
  bool operator==(const TrainHistory&) const = default;
};

nlohmann::json to_json(const TrainHistory& history);
void write_history_csv(const TrainHistory& history, const std::filesystem::path& path);
void write_history_json(const TrainHistory& history, const std::filesystem::path& path);

struct EvalResult {
  std::vector<ProbRow> probabilities;
  std::vector<int> labels;
  double loss = 0;
  double accuracy = 0;
};
// Evaluation-mode pass over a dataset on preprocess_eval images.
EvalResult evaluate_model(const Model& model, const Dataset& data, const LossSpec& loss, int batch_size = 64);

struct FitOptions {
  // Best parameters are also written here when set.
  std::optional<std::filesystem::path> checkpoint_path;
  std::function<void(const EpochRecord&)> on_epoch;
  // Ends training after the epoch for which this returns true.
  std::function<bool(const EpochRecord&)> stop_when;
};

// Trains in place and leaves the model holding the parameters of the best
// epoch by config.monitor. Throws TrainingError when the loss stops being
// finite.
TrainHistory fit(Model& model, const Dataset& train, const Dataset& val, const TrainConfig& config,
                 const FitOptions& options = {});

struct TrainResult {
  std::filesystem::path checkpoint;
  TrainHistory history;
};

// Trains on the manifest's train subset, validating on its val subset.
TrainResult train(Model& model, std::span<const LesionRecord> catalog, const SplitManifest& manifest,
                  const TrainConfig& config, const std::filesystem::path& out_dir,
                  std::function<void(const EpochRecord&)> on_epoch = {});

struct AblationExperiment {
  int index = 0;  // 1..6
  std::string name;
  bool dropout = true, augment = true, class_weights = true, focal = true, gap = true;
  TrainConfig config;
  ModelSpec model;
  TrainHistory history;
  MetricsReport test_report;
  std::filesystem::path run_dir;
};

struct AblationReport {
  std::vector<AblationExperiment> experiments;
};

// The six configurations: experiments 1-5 each switch off one technique
// (dropout, augmentation, class weights, focal loss, global pooling), 6 keeps
// all. Requires a base config with every technique enabled.
std::vector<AblationExperiment> ablation_plan(const ModelSpec& base_model, const TrainConfig& base);

AblationReport run_ablation(const ModelSpec& base_model, const TrainConfig& base, std::span<const LesionRecord> catalog,
                            const SplitManifest& manifest, const std::filesystem::path& out_dir,
                            std::function<void(const std::string&)> log = {});

nlohmann::json to_json(const AblationReport& report);
// Summary table plus per-class precision, recall and F1 tables (7 classes and
// an average column).
std::string render_markdown(const AblationReport& report);

struct FoldRun {
  int fold = 0;
  std::filesystem::path checkpoint;
  TrainHistory history;
  MetricsReport test_report;
  std::vector<std::string> test_ids;
};

// Fold i trains on the other folds, validates on fold i, and is evaluated on
// the shared test subset.
std::vector<FoldRun> train_kfold(const ModelSpec& base_model, const TrainConfig& config,
                                 std::span<const LesionRecord> catalog, const SplitManifest& manifest,
                                 const std::filesystem::path& out_dir, std::function<void(const std::string&)> log = {});

}  // namespace derm
