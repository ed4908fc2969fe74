#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "derm/classes.hpp"
#include "derm/nn/layer.hpp"

namespace derm {

enum class BackboneKind { resnet50, vgg16, mobilenet, efficientnet_b1, tiny_test };

std::string_view to_string(BackboneKind kind);
// Throws ModelError naming the registered backbones.
BackboneKind parse_backbone(std::string_view name);
std::vector<std::string> list_backbones();

struct ModelSpec {
  BackboneKind backbone = BackboneKind::resnet50;
  int num_classes = kNumClasses;
  bool use_gap = true;          // false: flatten the feature map instead
  double dropout_rate = 0.5;
  int hidden_width = 512;
  bool pretrained = true;
  bool all_layers_trainable = true;
  std::uint64_t init_seed = 0;
  // Weights file for pretrained = true. Empty: $DERM_PRETRAINED_DIR/<backbone>.dckpt
  std::string pretrained_path;

  void validate() const;
  bool operator==(const ModelSpec&) const = default;
};

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);

// Backbone (input normalization + convolutional trunk) followed by the
// classification head [pool] -> dense -> ReLU -> dropout -> dense. Outputs
// are logits; probabilities() applies the softmax.
class Model {
 public:
  Model(ModelSpec spec, nn::Sequential backbone, nn::Sequential head);

  const ModelSpec& spec() const { return spec_; }
  nn::Sequential& backbone() { return backbone_; }
  nn::Sequential& head() { return head_; }

  // Shape of the final convolutional feature map for one input image.
  Shape feature_shape(int input_size = 224) const;
  int feature_channels() const { return feature_shape()[1]; }

  // Evaluation mode, no recorded state.
  Tensor logits(const Tensor& batch) const;
  Tensor probabilities(const Tensor& batch) const;

  // Recorded pass for training; backward() accumulates parameter gradients.
  Tensor forward(const Tensor& batch, bool training);
  void backward(const Tensor& grad_logits);

  struct ClassScoreGradient {
    Tensor features;  // [1, C, h, w]
    Tensor gradient;  // d logit[target] / d features
    Tensor logits;    // [1, num_classes]
  };
  // Evaluation-mode pass on a single image; parameter gradients are left zero.
  ClassScoreGradient class_score_gradient(const Tensor& image, int target_class);

  std::vector<nn::Parameter*> parameters();
  std::vector<const nn::Parameter*> parameters() const;
  std::size_t parameter_count() const;            // excludes buffers
  std::size_t trainable_parameter_count() const;  // excludes buffers and frozen

  void zero_grad();
  void reseed(std::uint64_t seed);
  void release_cache();

 private:
  ModelSpec spec_;
  nn::Sequential backbone_;
  nn::Sequential head_;
};

// Throws ModelError for an invalid spec or missing pretrained weights.
Model build_model(const ModelSpec& spec);

// The bare convolutional trunk of a registered backbone, input normalization
// included.
nn::Sequential build_backbone(BackboneKind kind);

// Single-file checkpoint: magic, format version, ModelSpec + tensor index as
// JSON, little-endian float32 payload with a SHA-256 digest.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);
// Also verifies that the stored spec is compatible with `expected`
// (backbone, class count, head layout); throws CheckpointError otherwise.
Model load_checkpoint(const std::filesystem::path& path, const ModelSpec& expected);
ModelSpec read_checkpoint_spec(const std::filesystem::path& path);

}  // namespace derm
