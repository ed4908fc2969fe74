#include "derm/catalog.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "derm/error.hpp"
#include "derm/rng.hpp"

namespace derm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// RFC 4180-style field splitting (quoted fields, doubled quotes).
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::vector<LesionRecord> sorted_by_image(std::span<const LesionRecord> records) {
  std::vector<LesionRecord> sorted(records.begin(), records.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const LesionRecord& a, const LesionRecord& b) { return a.image_id < b.image_id; });
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (sorted[i].image_id == sorted[i - 1].image_id)
      throw CatalogError("duplicated image_id '" + sorted[i].image_id + "'");
  return sorted;
}

// Largest-remainder apportionment: each class gets floor or ceil of its
// target, and the counts add up to round(sum of targets). Ties in the
// remainder go to the lower class index.
PerClass<int> apportion(const PerClass<double>& targets, const PerClass<bool>& eligible) {
  PerClass<int> out{};
  double sum = 0.0;
  int assigned = 0;
  std::vector<std::pair<double, int>> remainders;
  for (int c = 0; c < kNumClasses; ++c) {
    if (!eligible[static_cast<std::size_t>(c)]) continue;
    const double t = targets[static_cast<std::size_t>(c)];
    sum += t;
    const int fl = static_cast<int>(std::floor(t + 1e-9));
    out[static_cast<std::size_t>(c)] = fl;
    assigned += fl;
    const double frac = t - fl;
    if (frac > 1e-9) remainders.emplace_back(frac, c);
  }
  int left = static_cast<int>(std::llround(sum)) - assigned;
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (const auto& [frac, c] : remainders) {
    if (left <= 0) break;
    ++out[static_cast<std::size_t>(c)];
    --left;
  }
  return out;
}

void append_images(const Lesion& lesion, bool canonical_only, std::vector<std::string>& primary,
                   std::vector<std::string>* held_out) {
  if (!canonical_only) {
    primary.insert(primary.end(), lesion.image_ids.begin(), lesion.image_ids.end());
    return;
  }
  primary.push_back(lesion.image_ids.front());
  if (held_out) held_out->insert(held_out->end(), lesion.image_ids.begin() + 1, lesion.image_ids.end());
}

}  // namespace

std::vector<LesionRecord> load_catalog(const fs::path& metadata_path, const fs::path& images_root) {
  std::ifstream in(metadata_path);
  if (!in) throw CatalogError("cannot open metadata file " + metadata_path.string());

  std::string line;
  if (!std::getline(in, line)) throw CatalogError("metadata file " + metadata_path.string() + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  std::vector<std::string> header = split_csv_line(line);
  for (auto& h : header) h = trim(h);

  auto column = [&](const std::string& name) -> std::size_t {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      throw CatalogError("metadata file " + metadata_path.string() + " lacks required column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t lesion_col = column("lesion_id");
  const std::size_t image_col = column("image_id");
  const std::size_t dx_col = column("dx");

  std::vector<LesionRecord> records;
  std::unordered_map<std::string, std::size_t> seen;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() < header.size())
      throw CatalogError("row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                         " fields, found " + std::to_string(fields.size()));
    LesionRecord r;
    r.image_id = trim(fields[image_col]);
    r.lesion_id = trim(fields[lesion_col]);
    const std::string dx = trim(fields[dx_col]);
    if (r.image_id.empty()) throw CatalogError("row " + std::to_string(row) + ": missing image_id");
    if (r.lesion_id.empty())
      throw CatalogError("row " + std::to_string(row) + " (" + r.image_id + "): missing lesion_id");
    const auto label = parse_class(dx);
    if (!label)
      throw CatalogError("row " + std::to_string(row) + " (" + r.image_id + "): unknown dx code '" + dx + "'");
    r.label = *label;
    if (const auto [it, inserted] = seen.emplace(r.image_id, row); !inserted)
      throw CatalogError("row " + std::to_string(row) + ": image_id '" + r.image_id +
                         "' duplicates row " + std::to_string(it->second));
    r.image_path = images_root / (r.image_id + ".jpg");
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (i == lesion_col || i == image_col || i == dx_col) continue;
      r.metadata.emplace(header[i], trim(fields[i]));
    }
    if (auto it = r.metadata.find("width"); it != r.metadata.end() && !it->second.empty())
      r.width = std::stoi(it->second);
    if (auto it = r.metadata.find("height"); it != r.metadata.end() && !it->second.empty())
      r.height = std::stoi(it->second);
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<Lesion> group_lesions(std::span<const LesionRecord> records) {
  std::map<std::string, Lesion> by_id;
  for (const LesionRecord& r : records) {
    auto [it, inserted] = by_id.try_emplace(r.lesion_id, Lesion{r.lesion_id, r.label, {}});
    if (!inserted && it->second.label != r.label)
      throw IntegrityError("lesion '" + r.lesion_id + "' has conflicting labels " +
                           std::string(code_of(it->second.label)) + " and " + std::string(code_of(r.label)) +
                           " (image " + r.image_id + ")");
    it->second.image_ids.push_back(r.image_id);
  }
  std::vector<Lesion> lesions;
  lesions.reserve(by_id.size());
  for (auto& [id, lesion] : by_id) {
    std::sort(lesion.image_ids.begin(), lesion.image_ids.end());
    lesions.push_back(std::move(lesion));
  }
  return lesions;
}

ClassDistribution class_distribution(std::span<const LesionRecord> records, Granularity granularity) {
  ClassDistribution d;
  if (granularity == Granularity::image) {
    for (const LesionRecord& r : records) ++d.counts[static_cast<std::size_t>(index_of(r.label))];
  } else {
    for (const Lesion& l : group_lesions(records)) ++d.counts[static_cast<std::size_t>(index_of(l.label))];
  }
  d.total = std::accumulate(d.counts.begin(), d.counts.end(), std::int64_t{0});
  return d;
}

std::size_t distinct_lesions(std::span<const LesionRecord> records) {
  std::unordered_set<std::string> ids;
  for (const LesionRecord& r : records) ids.insert(r.lesion_id);
  return ids.size();
}

bool SplitManifest::operator==(const SplitManifest& o) const {
  return seed == o.seed && ratios.test_fraction == o.ratios.test_fraction &&
         ratios.val_fraction == o.ratios.val_fraction && k == o.k && test_ids == o.test_ids &&
         val_ids == o.val_ids && train_ids == o.train_ids && held_out_test == o.held_out_test &&
         held_out_val == o.held_out_val && fold_of == o.fold_of;
}

SplitManifest make_split(std::span<const LesionRecord> records, std::uint64_t seed, double test_fraction,
                         double val_fraction) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("test_fraction must lie in (0, 1), got " + std::to_string(test_fraction));
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw ConfigError("val_fraction must lie in (0, 1), got " + std::to_string(val_fraction));

  SplitManifest m;
  m.seed = seed;
  m.ratios = {test_fraction, val_fraction};

  const std::vector<LesionRecord> sorted = sorted_by_image(records);
  const std::vector<Lesion> lesions = group_lesions(sorted);

  PerClass<std::vector<const Lesion*>> by_class;
  for (const Lesion& l : lesions) by_class[static_cast<std::size_t>(index_of(l.label))].push_back(&l);

  const int min_lesions = static_cast<int>(std::ceil(1.0 / std::min(test_fraction, val_fraction) - 1e-9));
  PerClass<bool> eligible{};
  PerClass<double> test_target{};
  for (int c = 0; c < kNumClasses; ++c) {
    auto& members = by_class[static_cast<std::size_t>(c)];
    // Lesions arrive sorted by id; the seeded shuffle is therefore independent
    // of the caller's record order.
    Rng rng(mix_seed(seed, {static_cast<std::uint64_t>(c)}));
    rng.shuffle(members);
    const int n = static_cast<int>(members.size());
    const std::string code(code_of(class_from_index(c)));
    if (n == 1) {
      m.warnings.push_back("class " + code + " has a single lesion; it is placed in train");
    } else if (n > 1) {
      eligible[static_cast<std::size_t>(c)] = true;
      test_target[static_cast<std::size_t>(c)] = test_fraction * n;
      if (n < min_lesions)
        m.warnings.push_back("class " + code + " has " + std::to_string(n) + " lesions, fewer than the " +
                             std::to_string(min_lesions) + " needed to populate every subset");
    }
  }

  PerClass<int> n_test = apportion(test_target, eligible);
  PerClass<double> val_target{};
  for (int c = 0; c < kNumClasses; ++c) {
    const auto i = static_cast<std::size_t>(c);
    if (!eligible[i]) continue;
    const int n = static_cast<int>(by_class[i].size());
    n_test[i] = std::min(n_test[i], n - 1);  // keep at least one lesion in the pool
    val_target[i] = val_fraction * (n - n_test[i]);
  }
  PerClass<int> n_val = apportion(val_target, eligible);

  for (int c = 0; c < kNumClasses; ++c) {
    const auto i = static_cast<std::size_t>(c);
    const auto& members = by_class[i];
    const int n = static_cast<int>(members.size());
    const int t = eligible[i] ? n_test[i] : 0;
    int v = eligible[i] ? n_val[i] : 0;
    if (n - t >= 2) v = std::min(v, n - t - 1);
    if (n - t < 2) v = 0;
    for (int j = 0; j < n; ++j) {
      const Lesion& l = *members[static_cast<std::size_t>(j)];
      if (j < t)
        append_images(l, true, m.test_ids, &m.held_out_test);
      else if (j < t + v)
        append_images(l, true, m.val_ids, &m.held_out_val);
      else
        append_images(l, false, m.train_ids, nullptr);
    }
  }
  for (auto* v : {&m.test_ids, &m.val_ids, &m.train_ids, &m.held_out_test, &m.held_out_val})
    std::sort(v->begin(), v->end());
  return m;
}

std::map<std::string, int> make_kfold(std::span<const LesionRecord> pool, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("k-fold requires k >= 2, got " + std::to_string(k));
  const std::vector<LesionRecord> sorted = sorted_by_image(pool);
  const std::vector<Lesion> lesions = group_lesions(sorted);

  PerClass<std::vector<const Lesion*>> by_class;
  for (const Lesion& l : lesions) by_class[static_cast<std::size_t>(index_of(l.label))].push_back(&l);
  for (int c = 0; c < kNumClasses; ++c) {
    const auto n = by_class[static_cast<std::size_t>(c)].size();
    if (n > 0 && n < static_cast<std::size_t>(k))
      throw ConfigError("k = " + std::to_string(k) + " exceeds the " + std::to_string(n) + " lesions of class " +
                        std::string(code_of(class_from_index(c))));
  }

  // A single cursor runs across classes so overall fold sizes stay balanced
  // as well as the per-class ones.
  std::map<std::string, int> fold_of;
  std::size_t cursor = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    auto& members = by_class[static_cast<std::size_t>(c)];
    Rng rng(mix_seed(seed, {0x6b666f6c64ULL, static_cast<std::uint64_t>(c)}));
    rng.shuffle(members);
    for (const Lesion* l : members) {
      const int fold = static_cast<int>(cursor++ % static_cast<std::size_t>(k));
      for (const std::string& id : l->image_ids) fold_of[id] = fold;
    }
  }
  return fold_of;
}

std::vector<LesionRecord> pool_records(std::span<const LesionRecord> records, const SplitManifest& manifest) {
  std::unordered_set<std::string> test(manifest.test_ids.begin(), manifest.test_ids.end());
  test.insert(manifest.held_out_test.begin(), manifest.held_out_test.end());
  std::vector<LesionRecord> pool;
  for (const LesionRecord& r : records)
    if (!test.contains(r.image_id)) pool.push_back(r);
  return pool;
}

SplitManifest prepare_manifest(std::span<const LesionRecord> records, std::uint64_t seed, SplitRatios ratios,
                               int k) {
  SplitManifest m = make_split(records, seed, ratios.test_fraction, ratios.val_fraction);
  if (k >= 2) {
    const std::vector<LesionRecord> pool = pool_records(records, m);
    m.fold_of = make_kfold(pool, k, seed);
    m.k = k;
  }
  return m;
}

FoldSubsets fold_subsets(std::span<const LesionRecord> records, const SplitManifest& manifest, int fold) {
  if (manifest.k < 2 || fold < 0 || fold >= manifest.k)
    throw ConfigError("fold " + std::to_string(fold) + " not available in a manifest with k = " +
                      std::to_string(manifest.k));
  std::vector<LesionRecord> in_fold;
  FoldSubsets out;
  for (const LesionRecord& r : records) {
    const auto it = manifest.fold_of.find(r.image_id);
    if (it == manifest.fold_of.end()) continue;
    if (it->second == fold)
      in_fold.push_back(r);
    else
      out.train_ids.push_back(r.image_id);
  }
  for (const Lesion& l : group_lesions(in_fold)) out.val_ids.push_back(l.image_ids.front());
  std::sort(out.train_ids.begin(), out.train_ids.end());
  std::sort(out.val_ids.begin(), out.val_ids.end());
  return out;
}

json to_json(const SplitManifest& m) {
  json j;
  j["seed"] = m.seed;
  j["ratios"] = {{"test", m.ratios.test_fraction}, {"val", m.ratios.val_fraction}};
  j["k"] = m.k;
  j["test"] = m.test_ids;
  j["val"] = m.val_ids;
  j["train"] = m.train_ids;
  j["held_out_duplicates"] = {{"test", m.held_out_test}, {"val", m.held_out_val}};
  j["folds"] = m.fold_of;
  return j;
}

SplitManifest manifest_from_json(const json& j) {
  try {
    SplitManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.ratios.test_fraction = j.at("ratios").at("test").get<double>();
    m.ratios.val_fraction = j.at("ratios").at("val").get<double>();
    m.k = j.at("k").get<int>();
    m.test_ids = j.at("test").get<std::vector<std::string>>();
    m.val_ids = j.at("val").get<std::vector<std::string>>();
    m.train_ids = j.at("train").get<std::vector<std::string>>();
    if (j.contains("held_out_duplicates")) {
      m.held_out_test = j["held_out_duplicates"].value("test", std::vector<std::string>{});
      m.held_out_val = j["held_out_duplicates"].value("val", std::vector<std::string>{});
    }
    m.fold_of = j.at("folds").get<std::map<std::string, int>>();
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed split manifest: ") + e.what());
  }
}

void save_manifest(const SplitManifest& manifest, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write manifest " + path.string());
  out << to_json(manifest).dump(2) << '\n';
  if (!out) throw Error("failed writing manifest " + path.string());
}

SplitManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  return manifest_from_json(j);
}

std::vector<double> balanced_weights(std::span<const std::int64_t> counts) {
  if (counts.empty()) throw std::invalid_argument("balanced weights need at least one class");
  const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::int64_t{0}));
  const double k = static_cast<double>(counts.size());
  std::vector<double> w;
  w.reserve(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] <= 0)
      throw ConfigError("class " + std::to_string(c) +
                        " has no samples; the balanced weight scheme is undefined, use the manual scheme");
    w.push_back(total / (k * static_cast<double>(counts[c])));
  }
  return w;
}

ClassWeights compute_class_weights(const ClassDistribution& dist, WeightScheme scheme,
                                   const std::optional<std::map<ClassLabel, double>>& manual) {
  ClassWeights out;
  if (scheme == WeightScheme::balanced) {
    for (int c = 0; c < kNumClasses; ++c)
      if (dist.counts[static_cast<std::size_t>(c)] <= 0)
        throw ConfigError("class " + std::string(code_of(class_from_index(c))) +
                          " has zero count; the balanced weight scheme is undefined, use the manual scheme");
    const std::vector<double> w = balanced_weights(dist.counts);
    std::copy(w.begin(), w.end(), out.weights.begin());
    return out;
  }
  if (!manual || manual->size() != static_cast<std::size_t>(kNumClasses))
    throw ConfigError("manual class weights need exactly 7 entries");
  for (const auto& [label, w] : *manual) {
    if (!(w > 0.0) || !std::isfinite(w))
      throw ConfigError("manual weight for " + std::string(code_of(label)) + " must be positive");
    out.weights[static_cast<std::size_t>(index_of(label))] = w;
  }
  return out;
}

}  // namespace derm
