#include "derm/ensemble.hpp"

#include <nlohmann/json.hpp>
#include <stdexcept>

#include "derm/augment.hpp"
#include "derm/error.hpp"

namespace derm {

using nlohmann::json;

namespace {

// Sum of at(lo..hi-1) by recursive halving.
template <typename At>
double pairwise_sum(std::size_t lo, std::size_t hi, const At& at) {
  if (hi - lo <= 4) {
    double s = 0;
    for (std::size_t i = lo; i < hi; ++i) s += at(i);
    return s;
  }
  const std::size_t mid = lo + (hi - lo) / 2;
  return pairwise_sum(lo, mid, at) + pairwise_sum(mid, hi, at);
}

template <typename Row>
void check_rows(std::span<const Row> rows) {
  if (rows.empty()) throw std::invalid_argument("cannot average an empty list of probability vectors");
  for (const Row& r : rows)
    if (r.size() != rows.front().size()) throw std::invalid_argument("probability vectors differ in length");
}

std::vector<ProbRow> rows_of(const Tensor& probs) {
  const int n = probs.dim(0), k = probs.dim(1);
  if (k != kNumClasses) throw ModelError("model emits " + std::to_string(k) + " classes, expected 7");
  std::vector<ProbRow> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < k; ++c) out[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] = probs[static_cast<std::size_t>(i) * k + c];
  return out;
}

}  // namespace

std::vector<double> average_probabilities(std::span<const std::vector<double>> vectors) {
  check_rows(vectors);
  const std::size_t k = vectors.front().size();
  std::vector<double> out(k);
  for (std::size_t c = 0; c < k; ++c)
    out[c] = pairwise_sum(0, vectors.size(), [&](std::size_t i) { return vectors[i][c]; }) /
             static_cast<double>(vectors.size());
  return out;
}

ProbRow average_probabilities(std::span<const ProbRow> rows) {
  check_rows(rows);
  ProbRow out{};
  for (std::size_t c = 0; c < out.size(); ++c)
    out[c] = pairwise_sum(0, rows.size(), [&](std::size_t i) { return rows[i][c]; }) / static_cast<double>(rows.size());
  return out;
}

void EnsembleSpec::validate() const {
  if (checkpoint_paths.empty()) throw ConfigError("an ensemble needs at least one checkpoint");
  if (tta_n < 1) throw ConfigError("tta_n must be at least 1");
}

json to_json(const EnsembleSpec& s) {
  json paths = json::array();
  for (const auto& p : s.checkpoint_paths) paths.push_back(p.string());
  return {{"checkpoint_paths", paths}, {"tta_n", s.tta_n}, {"tta_seed", s.tta_seed}};
}

EnsembleSpec ensemble_spec_from_json(const json& j) {
  EnsembleSpec s;
  try {
    for (const auto& p : j.at("checkpoint_paths")) s.checkpoint_paths.emplace_back(p.get<std::string>());
    s.tta_n = j.value("tta_n", 1);
    s.tta_seed = j.value("tta_seed", std::uint64_t{0});
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed ensemble spec: ") + e.what());
  }
  s.validate();
  return s;
}

Ensemble::Ensemble(const EnsembleSpec& spec) : tta_n_(spec.tta_n), tta_seed_(spec.tta_seed) {
  spec.validate();
  for (const auto& p : spec.checkpoint_paths) {
    members_.push_back(load_checkpoint(p));
    const int k = members_.back().spec().num_classes;
    if (k != members_.front().spec().num_classes || k != kNumClasses)
      throw CheckpointError(p.string() + " has " + std::to_string(k) + " classes, the ensemble needs " +
                            std::to_string(kNumClasses));
  }
}

Ensemble::Ensemble(std::vector<Model> members, int tta_n, std::uint64_t tta_seed)
    : members_(std::move(members)), tta_n_(tta_n), tta_seed_(tta_seed) {
  if (members_.empty()) throw ConfigError("an ensemble needs at least one member");
  if (tta_n_ < 1) throw ConfigError("tta_n must be at least 1");
  for (const Model& m : members_)
    if (m.spec().num_classes != kNumClasses)
      throw CheckpointError("ensemble member has " + std::to_string(m.spec().num_classes) + " classes");
}

ProbRow Ensemble::predict(const Image& image) const {
  const Tensor batch = to_batch(tta_variants(image, tta_n_, tta_seed_));
  std::vector<ProbRow> rows;
  for (const Model& m : members_) {
    const auto r = rows_of(m.probabilities(batch));
    rows.insert(rows.end(), r.begin(), r.end());
  }
  return average_probabilities(rows);
}

Ensemble::BatchPrediction Ensemble::predict_all(const Dataset& data, int batch_size) const {
  const std::size_t n = data.size();
  const auto v = static_cast<std::size_t>(tta_n_);
  const std::size_t chunk = std::max<std::size_t>(1, static_cast<std::size_t>(batch_size) / v);
  BatchPrediction out;
  out.member.assign(members_.size(), {});
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    std::vector<std::size_t> idx;
    for (std::size_t i = begin; i < end; ++i) idx.push_back(i);
    std::vector<Image> flat;
    for (const Image& img : load_images(data, idx, [](const Image& img, std::size_t) { return img; }))
      for (Image& t : tta_variants(img, tta_n_, tta_seed_)) flat.push_back(std::move(t));
    const Tensor batch = to_batch(flat);

    // [image][member * v + variant]
    std::vector<std::vector<ProbRow>> per_image(idx.size());
    for (std::size_t m = 0; m < members_.size(); ++m) {
      const auto rows = rows_of(members_[m].probabilities(batch));
      for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t k = 0; k < v; ++k) per_image[i].push_back(rows[i * v + k]);
        out.member[m].push_back(rows[i * v]);
      }
    }
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::vector<ProbRow> plain;
      for (std::size_t m = 0; m < members_.size(); ++m) plain.push_back(per_image[i][m * v]);
      out.plain.push_back(average_probabilities(plain));
      out.tta.push_back(average_probabilities(per_image[i]));
    }
  }
  return out;
}

EnsembleEvaluation evaluate_ensemble(const Ensemble& ensemble, const Dataset& test, int batch_size) {
  if (test.size() == 0) throw DataError("the test subset is empty");
  std::vector<int> labels;
  for (std::size_t i = 0; i < test.size(); ++i) labels.push_back(test.label(i));
  const auto p = ensemble.predict_all(test, batch_size);
  EnsembleEvaluation e;
  e.plain = evaluate_predictions(p.plain, labels);
  if (ensemble.tta_n() > 1) e.tta = evaluate_predictions(p.tta, labels);
  for (const auto& rows : p.member) e.members.push_back(evaluate_predictions(rows, labels));
  return e;
}

json to_json(const EnsembleEvaluation& e) {
  json members = json::array();
  for (const MetricsReport& m : e.members) members.push_back(to_json(m));
  return {{"ensemble", to_json(e.plain)}, {"tta", e.tta ? to_json(*e.tta) : json(nullptr)}, {"members", members}};
}

}  // namespace derm
