#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "derm/classes.hpp"

namespace derm {

// One image row of the metadata catalog. Several rows may share a lesion_id
// (the same lesion photographed at different angles or magnifications).
struct LesionRecord {
  std::string image_id;
  std::string lesion_id;
  ClassLabel label = ClassLabel::nv;
  std::filesystem::path image_path;
  int width = 0;   // 0 until the image has been read
  int height = 0;
  std::map<std::string, std::string> metadata;  // columns beyond the required ones
};

// Reads a comma-separated catalog with at least the columns lesion_id,
// image_id and dx. Images resolve to <images_root>/<image_id>.jpg; they are
// not opened here.
std::vector<LesionRecord> load_catalog(const std::filesystem::path& metadata_path,
                                       const std::filesystem::path& images_root);

enum class Granularity { image, lesion };

struct ClassDistribution {
  PerClass<std::int64_t> counts{};
  std::int64_t total = 0;
};

ClassDistribution class_distribution(std::span<const LesionRecord> records, Granularity granularity);

std::size_t distinct_lesions(std::span<const LesionRecord> records);

struct Lesion {
  std::string lesion_id;
  ClassLabel label;
  std::vector<std::string> image_ids;  // sorted; front() is the canonical image
};

// Groups records by lesion_id, sorted by lesion_id. Throws IntegrityError when
// a lesion's images disagree on the label.
std::vector<Lesion> group_lesions(std::span<const LesionRecord> records);

struct SplitRatios {
  double test_fraction = 0.2;
  double val_fraction = 0.2;  // share of the non-test pool
};

// Lesion-grouped assignment of images to subsets. Test and validation hold one
// canonical image (smallest image_id) per lesion; their remaining duplicates
// are listed as held out so that every catalog image is accounted for.
// All id lists are sorted.
struct SplitManifest {
  std::uint64_t seed = 0;
  SplitRatios ratios;
  int k = 0;
  std::vector<std::string> test_ids;
  std::vector<std::string> val_ids;
  std::vector<std::string> train_ids;
  std::vector<std::string> held_out_test;
  std::vector<std::string> held_out_val;
  std::map<std::string, int> fold_of;  // train + val pool images
  std::vector<std::string> warnings;   // not serialized

  bool operator==(const SplitManifest& other) const;
};

SplitManifest make_split(std::span<const LesionRecord> records, std::uint64_t seed, double test_fraction,
                         double val_fraction);

// Stratified, lesion-grouped fold assignment over the given pool.
std::map<std::string, int> make_kfold(std::span<const LesionRecord> pool, int k, std::uint64_t seed);

// Records of the train + val pool (every image of a non-test lesion).
std::vector<LesionRecord> pool_records(std::span<const LesionRecord> records, const SplitManifest& manifest);

// Convenience: split, then fold the pool when k >= 2.
SplitManifest prepare_manifest(std::span<const LesionRecord> records, std::uint64_t seed, SplitRatios ratios,
                               int k);

// Train/validation images for cross-validation fold `fold`: all images of the
// other folds' lesions for training, the canonical image of each lesion in
// `fold` for validation.
struct FoldSubsets {
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
};
FoldSubsets fold_subsets(std::span<const LesionRecord> records, const SplitManifest& manifest, int fold);

nlohmann::json to_json(const SplitManifest& manifest);
SplitManifest manifest_from_json(const nlohmann::json& j);
void save_manifest(const SplitManifest& manifest, const std::filesystem::path& path);
SplitManifest load_manifest(const std::filesystem::path& path);

struct ClassWeights {
  PerClass<double> weights{};
  double operator[](ClassLabel c) const { return weights[static_cast<std::size_t>(index_of(c))]; }
};

enum class WeightScheme { balanced, manual };

// Balanced scheme: w_c = total / (K * count_c) for K classes.
std::vector<double> balanced_weights(std::span<const std::int64_t> counts);

ClassWeights compute_class_weights(const ClassDistribution& dist, WeightScheme scheme,
                                   const std::optional<std::map<ClassLabel, double>>& manual = std::nullopt);

}  // namespace derm
