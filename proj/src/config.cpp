#include "derm/config.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <yaml-cpp/yaml.h>

#include "derm/error.hpp"

namespace derm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Walks one mapping, dispatching each key to its handler and rejecting the rest.
class Section {
 public:
  Section(const YAML::Node& node, std::string path) : node_(node), path_(std::move(path)) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) throw ConfigError(path_ + " must be a mapping");
  }

  template <typename T>
  Section& field(const std::string& key, T& out) {
    known_.insert(key);
    if (const auto v = child(key)) {
      try {
        out = v->as<T>();
      } catch (const YAML::Exception&) {
        throw ConfigError(path_ + key + ": cannot read '" + scalar(*v) + "'");
      }
    }
    return *this;
  }

  Section& custom(const std::string& key, const std::function<void(const YAML::Node&, const std::string&)>& fn) {
    known_.insert(key);
    if (const auto v = child(key)) fn(*v, path_ + key);
    return *this;
  }

  void done() const {
    if (!node_ || node_.IsNull()) return;
    for (const auto& kv : node_) {
      const std::string key = kv.first.as<std::string>();
      if (!known_.count(key)) throw ConfigError("unknown key '" + path_ + key + "'");
    }
  }

 private:
  // A default-constructed YAML::Node is a defined null, hence the optional.
  std::optional<YAML::Node> child(const std::string& key) const {
    if (!node_ || node_.IsNull()) return std::nullopt;
    const YAML::Node v = node_[key];
    if (!v || v.IsNull()) return std::nullopt;
    return v;
  }
  static std::string scalar(const YAML::Node& v) { return v.IsScalar() ? v.Scalar() : "<non-scalar>"; }

  YAML::Node node_;
  std::string path_;
  std::set<std::string> known_;
};

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute()) return p;
  return (base / p).lexically_normal();
}

}  // namespace

void ExperimentConfig::validate() const {
  if (dataset.metadata_path.empty()) throw ConfigError("dataset.metadata_path is required");
  if (!(split.ratios.test_fraction > 0.0 && split.ratios.test_fraction < 1.0))
    throw ConfigError("split.test_fraction must lie in (0, 1)");
  if (!(split.ratios.val_fraction > 0.0 && split.ratios.val_fraction < 1.0))
    throw ConfigError("split.val_fraction must lie in (0, 1)");
  if (split.k < 0 || split.k == 1) throw ConfigError("split.k must be 0 (no folds) or at least 2");
  if (ensemble.tta_n < 1) throw ConfigError("ensemble.tta_n must be at least 1");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  model.validate();
  train.validate();
  train.augmentation.validate();
}

void ExperimentConfig::require_dataset() const {
  if (!fs::is_regular_file(dataset.metadata_path))
    throw DataError("metadata file not found: " + dataset.metadata_path.string());
  if (!fs::is_directory(dataset.images_root))
    throw DataError("images directory not found: " + dataset.images_root.string());
}

ExperimentConfig parse_experiment_config(std::string_view yaml, const fs::path& base_dir,
                                         const std::optional<fs::path>& data_root) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(yaml));
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  if (!root || root.IsNull()) throw ConfigError("config is empty");
  if (!root.IsMap()) throw ConfigError("config must be a mapping of sections");

  ExperimentConfig c;
  std::string metadata, images, output = c.output_dir.string();

  Section(root["dataset"], "dataset.").field("metadata_path", metadata).field("images_root", images).done();

  Section(root["split"], "split.")
      .field("seed", c.split.seed)
      .field("test_fraction", c.split.ratios.test_fraction)
      .field("val_fraction", c.split.ratios.val_fraction)
      .field("k", c.split.k)
      .done();

  TransformSpec& a = c.train.augmentation;
  Section(root["augmentation"], "augmentation.")
      .field("rotate", a.rotate)
      .field("max_degrees", a.max_degrees)
      .field("hflip", a.hflip)
      .field("vflip", a.vflip)
      .field("crop", a.crop)
      .field("crop_scale_min", a.crop_scale_min)
      .field("crop_scale_max", a.crop_scale_max)
      .field("cutout", a.cutout)
      .field("cutout_side", a.cutout_side)
      .field("cutout_count", a.cutout_count)
      .done();

  std::string backbone = std::string(to_string(c.model.backbone)), pretrained_path;
  Section(root["model"], "model.")
      .field("backbone", backbone)
      .field("dropout_rate", c.model.dropout_rate)
      .field("hidden_width", c.model.hidden_width)
      .field("pretrained", c.model.pretrained)
      .field("all_layers_trainable", c.model.all_layers_trainable)
      .field("init_seed", c.model.init_seed)
      .field("pretrained_path", pretrained_path)
      .done();
  try {
    c.model.backbone = parse_backbone(backbone);
  } catch (const ModelError& e) {
    throw ConfigError(std::string("model.backbone: ") + e.what());
  }
  if (!pretrained_path.empty()) c.model.pretrained_path = resolve(pretrained_path, base_dir).string();

  TrainConfig& t = c.train;
  std::string loss = std::string(to_string(t.loss)), monitor = std::string(to_string(t.monitor));
  Section(root["train"], "train.")
      .field("initial_lr", t.initial_lr)
      .field("batch_size", t.batch_size)
      .field("max_epochs", t.max_epochs)
      .field("plateau_factor", t.plateau_factor)
      .field("plateau_patience", t.plateau_patience)
      .field("min_lr", t.min_lr)
      .field("loss", loss)
      .field("gamma", t.gamma)
      .custom("class_weights",
              [&](const YAML::Node& v, const std::string& where) {
                if (v.IsScalar()) {
                  t.class_weights = parse_class_weight_mode(v.Scalar());
                  if (t.class_weights == ClassWeightMode::manual)
                    throw ConfigError(where + ": give manual weights as a class -> weight mapping");
                  return;
                }
                if (!v.IsMap()) throw ConfigError(where + " must be balanced, none or a class -> weight mapping");
                t.class_weights = ClassWeightMode::manual;
                for (const auto& kv : v) {
                  const std::string code = kv.first.as<std::string>();
                  const auto label = parse_class(code);
                  if (!label) throw ConfigError(where + ": unknown class '" + code + "'");
                  try {
                    t.manual_weights[*label] = kv.second.as<double>();
                  } catch (const YAML::Exception&) {
                    throw ConfigError(where + "." + code + " must be a number");
                  }
                }
              })
      .field("use_dropout", t.use_dropout)
      .field("use_augment", t.use_augment)
      .field("use_gap", t.use_gap)
      .field("seed", t.seed)
      .field("monitor", monitor)
      .field("eval_batch_size", t.eval_batch_size)
      .done();
  try {
    t.loss = parse_loss_kind(loss);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("train.loss: ") + e.what());
  }
  t.monitor = parse_monitor(monitor);
  c.model.use_gap = t.use_gap;

  Section(root["ensemble"], "ensemble.").field("tta_n", c.ensemble.tta_n).field("tta_seed", c.ensemble.tta_seed).done();

  Section top(root, "");
  top.custom("dataset", [](const YAML::Node&, const std::string&) {})
      .custom("split", [](const YAML::Node&, const std::string&) {})
      .custom("augmentation", [](const YAML::Node&, const std::string&) {})
      .custom("model", [](const YAML::Node&, const std::string&) {})
      .custom("train", [](const YAML::Node&, const std::string&) {})
      .custom("ensemble", [](const YAML::Node&, const std::string&) {})
      .field("output_dir", output)
      .done();

  const fs::path data_base = data_root ? *data_root : base_dir;
  c.dataset.metadata_path = resolve(metadata, data_base);
  c.dataset.images_root = images.empty() ? c.dataset.metadata_path.parent_path() / "images" : resolve(images, data_base);
  c.output_dir = resolve(output, base_dir);
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::optional<fs::path> data_root;
  if (const char* env = std::getenv("DERM_DATA_ROOT"); env && *env) data_root = fs::path(env);
  const fs::path base = fs::absolute(path).parent_path();
  return parse_experiment_config(read_text(path), base, data_root);
}

json to_json(const TransformSpec& a) {
  return {{"rotate", a.rotate},         {"max_degrees", a.max_degrees},       {"hflip", a.hflip},
          {"vflip", a.vflip},           {"crop", a.crop},                     {"crop_scale_min", a.crop_scale_min},
          {"crop_scale_max", a.crop_scale_max}, {"cutout", a.cutout},          {"cutout_side", a.cutout_side},
          {"cutout_count", a.cutout_count}, {"output_size", a.output_size}};
}

json to_json(const ExperimentConfig& c) {
  return {{"dataset", {{"metadata_path", c.dataset.metadata_path.string()}, {"images_root", c.dataset.images_root.string()}}},
          {"split",
           {{"seed", c.split.seed},
            {"test_fraction", c.split.ratios.test_fraction},
            {"val_fraction", c.split.ratios.val_fraction},
            {"k", c.split.k}}},
          {"augmentation", to_json(c.train.augmentation)},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"ensemble", {{"tta_n", c.ensemble.tta_n}, {"tta_seed", c.ensemble.tta_seed}}},
          {"output_dir", c.output_dir.string()}};
}

}  // namespace derm
