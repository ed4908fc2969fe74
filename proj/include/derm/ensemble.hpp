#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "derm/dataset.hpp"
#include "derm/metrics.hpp"
#include "derm/model.hpp"

namespace derm {

// Elementwise arithmetic mean, summed pairwise so the result does not depend
// on input order beyond rounding. Throws std::invalid_argument for an empty
// list or vectors of unequal length.
std::vector<double> average_probabilities(std::span<const std::vector<double>> vectors);
ProbRow average_probabilities(std::span<const ProbRow> rows);

struct EnsembleSpec {
  std::vector<std::filesystem::path> checkpoint_paths;
  int tta_n = 1;  // 1: plain inference only
  std::uint64_t tta_seed = 0;

  // Throws ConfigError.
  void validate() const;
  bool operator==(const EnsembleSpec&) const = default;
};

nlohmann::json to_json(const EnsembleSpec& spec);
EnsembleSpec ensemble_spec_from_json(const nlohmann::json& j);

class Ensemble {
 public:
  // Loads every checkpoint; throws CheckpointError when the members disagree
  // on the class count.
  explicit Ensemble(const EnsembleSpec& spec);
  Ensemble(std::vector<Model> members, int tta_n, std::uint64_t tta_seed);

  std::size_t size() const { return members_.size(); }
  int tta_n() const { return tta_n_; }
  const Model& member(std::size_t i) const { return members_[i]; }

  // Mean over every (member, TTA variant) pair; with tta_n = 1 the members
  // see preprocess_eval(image) only.
  ProbRow predict(const Image& image) const;

  struct BatchPrediction {
    std::vector<ProbRow> plain;                // members on variant 0
    std::vector<ProbRow> tta;                  // members x all variants
    std::vector<std::vector<ProbRow>> member;  // [member][image], variant 0
  };
  BatchPrediction predict_all(const Dataset& data, int batch_size = 64) const;

 private:
  std::vector<Model> members_;
  int tta_n_;
  std::uint64_t tta_seed_;
};

struct EnsembleEvaluation {
  MetricsReport plain;
  std::optional<MetricsReport> tta;  // when tta_n > 1
  std::vector<MetricsReport> members;
};

EnsembleEvaluation evaluate_ensemble(const Ensemble& ensemble, const Dataset& test, int batch_size = 64);
nlohmann::json to_json(const EnsembleEvaluation& evaluation);

}  // namespace derm
