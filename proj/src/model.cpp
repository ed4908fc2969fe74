#include "derm/model.hpp"

#include <cmath>
#include <cstdlib>
#include <nlohmann/json.hpp>

#include "derm/error.hpp"
#include "derm/losses.hpp"
#include "derm/nn/layers.hpp"
#include "derm/rng.hpp"

namespace derm {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::array<std::pair<BackboneKind, std::string_view>, 5> kBackbones = {{
    {BackboneKind::resnet50, "resnet50"},
    {BackboneKind::vgg16, "vgg16"},
    {BackboneKind::mobilenet, "mobilenet"},
    {BackboneKind::efficientnet_b1, "efficientnet_b1"},
    {BackboneKind::tiny_test, "tiny_test"},
}};

// He-normal weights, zero biases. Batch-norm parameters keep their defaults.
void initialize(std::vector<nn::Parameter*>& params, std::uint64_t seed) {
  Rng rng(seed);
  for (nn::Parameter* p : params) {
    if (p->is_buffer) continue;
    const std::string& name = p->name;
    const bool is_weight = name.size() >= 6 && name.compare(name.size() - 6, 6, "weight") == 0;
    if (!is_weight) continue;
    const Shape& s = p->value.shape();
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < s.size(); ++i) fan_in *= static_cast<std::size_t>(s[i]);
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (float& v : p->value.values()) v = static_cast<float>(rng.normal() * stddev);
  }
}

fs::path pretrained_location(const ModelSpec& spec) {
  if (!spec.pretrained_path.empty()) return spec.pretrained_path;
  const char* dir = std::getenv("DERM_PRETRAINED_DIR");
  const std::string file = std::string(to_string(spec.backbone)) + ".dckpt";
  return dir ? fs::path(dir) / file : fs::path(file);
}

void load_pretrained(Model& model) {
  const fs::path path = pretrained_location(model.spec());
  if (!fs::exists(path))
    throw ModelError("pretrained weights for " + std::string(to_string(model.spec().backbone)) +
                     " not found at " + path.string() +
                     " (set model.pretrained_path or DERM_PRETRAINED_DIR, or use pretrained: false)");
  Model source = load_checkpoint(path);
  if (source.spec().backbone != model.spec().backbone)
    throw ModelError("pretrained file " + path.string() + " holds a " +
                     std::string(to_string(source.spec().backbone)) + " backbone");
  std::vector<nn::Parameter*> src = source.parameters();
  std::vector<nn::Parameter*> dst = model.parameters();
  for (nn::Parameter* d : dst) {
    if (d->name.rfind("backbone.", 0) != 0) continue;
    for (nn::Parameter* s : src)
      if (s->name == d->name && s->value.shape() == d->value.shape()) {
        d->value = s->value;
        break;
      }
  }
}

}  // namespace

std::string_view to_string(BackboneKind kind) {
  for (const auto& [k, name] : kBackbones)
    if (k == kind) return name;
  return "?";
}

BackboneKind parse_backbone(std::string_view name) {
  for (const auto& [k, n] : kBackbones)
    if (n == name) return k;
  std::string known;
  for (const auto& [k, n] : kBackbones) known += (known.empty() ? "" : ", ") + std::string(n);
  throw ModelError("unknown backbone '" + std::string(name) + "' (registered: " + known + ")");
}

std::vector<std::string> list_backbones() {
  std::vector<std::string> out;
  for (const auto& [k, name] : kBackbones) out.emplace_back(name);
  return out;
}

void ModelSpec::validate() const {
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
  if (hidden_width <= 0) throw ConfigError("hidden_width must be positive");
}

json to_json(const ModelSpec& s) {
  return json{{"backbone", to_string(s.backbone)},
              {"num_classes", s.num_classes},
              {"use_gap", s.use_gap},
              {"dropout_rate", s.dropout_rate},
              {"hidden_width", s.hidden_width},
              {"pretrained", s.pretrained},
              {"all_layers_trainable", s.all_layers_trainable},
              {"init_seed", s.init_seed},
              {"pretrained_path", s.pretrained_path}};
}

ModelSpec model_spec_from_json(const json& j) {
  try {
    ModelSpec s;
    s.backbone = parse_backbone(j.at("backbone").get<std::string>());
    s.num_classes = j.at("num_classes").get<int>();
    s.use_gap = j.at("use_gap").get<bool>();
    s.dropout_rate = j.at("dropout_rate").get<double>();
    s.hidden_width = j.at("hidden_width").get<int>();
    s.pretrained = j.value("pretrained", false);
    s.all_layers_trainable = j.value("all_layers_trainable", true);
    s.init_seed = j.value("init_seed", std::uint64_t{0});
    s.pretrained_path = j.value("pretrained_path", std::string{});
    return s;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed model spec: ") + e.what());
  }
}

Model::Model(ModelSpec spec, nn::Sequential backbone, nn::Sequential head)
    : spec_(std::move(spec)), backbone_(std::move(backbone)), head_(std::move(head)) {
  // Assigns stable names to every parameter.
  parameters();
}

Shape Model::feature_shape(int input_size) const { return backbone_.output_shape({1, 3, input_size, input_size}); }

Tensor Model::logits(const Tensor& batch) const { return head_.infer(backbone_.infer(batch)); }

Tensor Model::probabilities(const Tensor& batch) const {
  Tensor z = logits(batch);
  const int n = z.dim(0);
  const int k = z.dim(1);
  std::vector<double> row(static_cast<std::size_t>(k));
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < k; ++c) row[static_cast<std::size_t>(c)] = z[static_cast<std::size_t>(i) * k + c];
    const std::vector<double> p = softmax(row);
    for (int c = 0; c < k; ++c) z[static_cast<std::size_t>(i) * k + c] = static_cast<float>(p[static_cast<std::size_t>(c)]);
  }
  return z;
}

Tensor Model::forward(const Tensor& batch, bool training) {
  return head_.forward(backbone_.forward(batch, training), training);
}

void Model::backward(const Tensor& grad_logits) { backbone_.backward(head_.backward(grad_logits)); }

Model::ClassScoreGradient Model::class_score_gradient(const Tensor& image, int target_class) {
  if (image.rank() != 4 || image.dim(0) != 1) throw std::invalid_argument("expected a single [1, 3, H, W] image");
  if (target_class < 0 || target_class >= spec_.num_classes)
    throw std::invalid_argument("target class " + std::to_string(target_class) + " out of range");
  ClassScoreGradient out;
  out.features = backbone_.infer(image);
  if (out.features.rank() != 4) throw ModelError("backbone does not produce a convolutional feature map");
  out.logits = head_.forward(out.features, false);
  Tensor seed(out.logits.shape());
  seed[static_cast<std::size_t>(target_class)] = 1.0f;
  out.gradient = head_.backward(seed);
  head_.release_cache();
  for (nn::Parameter* p : parameters())
    if (p->name.rfind("head.", 0) == 0 && !p->grad.empty()) p->grad.zero();
  return out;
}

std::vector<nn::Parameter*> Model::parameters() {
  std::vector<nn::Parameter*> out;
  backbone_.collect(out, "backbone.");
  head_.collect(out, "head.");
  return out;
}

std::vector<const nn::Parameter*> Model::parameters() const {
  auto* self = const_cast<Model*>(this);
  std::vector<nn::Parameter*> mut = self->parameters();
  return {mut.begin(), mut.end()};
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const nn::Parameter* p : parameters())
    if (!p->is_buffer) n += p->value.size();
  return n;
}

std::size_t Model::trainable_parameter_count() const {
  std::size_t n = 0;
  for (const nn::Parameter* p : parameters())
    if (p->optimizable()) n += p->value.size();
  return n;
}

void Model::zero_grad() {
  for (nn::Parameter* p : parameters())
    if (!p->grad.empty()) p->grad.zero();
}

void Model::reseed(std::uint64_t seed) {
  backbone_.reseed(mix_seed(seed, {1}));
  head_.reseed(mix_seed(seed, {2}));
}

void Model::release_cache() {
  backbone_.release_cache();
  head_.release_cache();
}

Model build_model(const ModelSpec& spec) {
  try {
    spec.validate();
  } catch (const ConfigError& e) {
    throw ModelError(e.what());
  }
  nn::Sequential backbone = build_backbone(spec.backbone);
  const Shape feat = backbone.output_shape({1, 3, 224, 224});
  if (feat.size() != 4) throw ModelError("backbone output is not a feature map");

  nn::Sequential head;
  int features = feat[1];
  if (spec.use_gap) {
    head.emplace<nn::GlobalAvgPool>();
  } else {
    head.emplace<nn::Flatten>();
    features = feat[1] * feat[2] * feat[3];
  }
  head.emplace<nn::Dense>(features, spec.hidden_width);
  head.emplace<nn::Act>(nn::Activation::relu);
  head.emplace<nn::Dropout>(spec.dropout_rate);
  head.emplace<nn::Dense>(spec.hidden_width, spec.num_classes);

  Model model(spec, std::move(backbone), std::move(head));
  std::vector<nn::Parameter*> params = model.parameters();
  initialize(params, spec.init_seed);
  if (spec.pretrained) load_pretrained(model);
  if (!spec.all_layers_trainable)
    for (nn::Parameter* p : params)
      if (p->name.rfind("backbone.", 0) == 0) p->trainable = false;
  model.reseed(spec.init_seed);
  return model;
}

}  // namespace derm
