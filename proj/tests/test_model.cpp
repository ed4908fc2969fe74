#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "derm/error.hpp"
#include "derm/model.hpp"
#include "derm/rng.hpp"

using namespace derm;
namespace fs = std::filesystem;

namespace {

ModelSpec tiny_spec() {
  ModelSpec s;
  s.backbone = BackboneKind::tiny_test;
  s.pretrained = false;
  s.hidden_width = 32;
  s.init_seed = 5;
  return s;
}

Tensor random_images(int n, std::uint64_t seed) {
  Tensor t({n, 3, 224, 224});
  Rng rng(seed);
  for (float& v : t.values()) v = static_cast<float>(rng.uniform());
  return t;
}

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("derm_model_" + std::to_string(::getpid()) + "_" + name);
}

}  // namespace

TEST(Registry, ListsAndParsesBackbones) {
  const auto names = list_backbones();
  EXPECT_EQ(names.size(), 5u);
  for (const auto& n : names) EXPECT_EQ(to_string(parse_backbone(n)), n);
  try {
    parse_backbone("resnet18");
    FAIL();
  } catch (const ModelError& e) {
    EXPECT_NE(std::string(e.what()).find("efficientnet_b1"), std::string::npos);
  }
}

// Reference trunk sizes (weights + batch-norm affine, no running statistics)
// of the standard ImageNet architectures without their classifiers.
TEST(Registry, ReferenceParameterCounts) {
  EXPECT_EQ(build_model({.backbone = BackboneKind::resnet50, .pretrained = false}).backbone().size() > 0, true);
  auto trunk = [](BackboneKind k) {
    nn::Sequential s = build_backbone(k);
    std::vector<nn::Parameter*> ps;
    s.collect(ps, "");
    std::size_t n = 0;
    for (auto* p : ps)
      if (!p->is_buffer) n += p->value.size();
    return n;
  };
  EXPECT_EQ(trunk(BackboneKind::resnet50), 23508032u);
  EXPECT_EQ(trunk(BackboneKind::vgg16), 14714688u);
  EXPECT_EQ(trunk(BackboneKind::mobilenet), 3206976u);
}

TEST(Registry, FeatureMapShapes) {
  EXPECT_EQ(build_backbone(BackboneKind::resnet50).output_shape({1, 3, 224, 224}), (Shape{1, 2048, 7, 7}));
  EXPECT_EQ(build_backbone(BackboneKind::vgg16).output_shape({1, 3, 224, 224}), (Shape{1, 512, 7, 7}));
  EXPECT_EQ(build_backbone(BackboneKind::mobilenet).output_shape({1, 3, 224, 224}), (Shape{1, 1024, 7, 7}));
  EXPECT_EQ(build_backbone(BackboneKind::efficientnet_b1).output_shape({1, 3, 224, 224}), (Shape{1, 1280, 7, 7}));
  EXPECT_EQ(build_backbone(BackboneKind::tiny_test).output_shape({1, 3, 224, 224}), (Shape{1, 128, 14, 14}));
}

TEST(Model, HeadLayoutAndOutputs) {
  Model gap = build_model(tiny_spec());
  ModelSpec flat_spec = tiny_spec();
  flat_spec.use_gap = false;
  Model flat = build_model(flat_spec);
  // Flatten head: 128*14*14*32 + 32 + 32*7 + 7 more weights than GAP's 128*32 + 32 + 32*7 + 7.
  EXPECT_EQ(flat.parameter_count() - gap.parameter_count(), static_cast<std::size_t>(128 * 14 * 14 * 32 - 128 * 32));

  const Tensor x = random_images(2, 1);
  const Tensor p = gap.probabilities(x);
  ASSERT_EQ(p.shape(), (Shape{2, 7}));
  for (int n = 0; n < 2; ++n) {
    double s = 0;
    for (int c = 0; c < 7; ++c) {
      EXPECT_GT(p[static_cast<std::size_t>(n * 7 + c)], 0.f);
      s += p[static_cast<std::size_t>(n * 7 + c)];
    }
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
  EXPECT_EQ(gap.logits(x), gap.forward(x, false));
}

TEST(Model, InitializationIsSeeded) {
  Model a = build_model(tiny_spec());
  Model b = build_model(tiny_spec());
  ModelSpec other = tiny_spec();
  other.init_seed = 6;
  Model c = build_model(other);
  const Tensor x = random_images(1, 2);
  EXPECT_EQ(a.logits(x), b.logits(x));
  EXPECT_NE(a.logits(x), c.logits(x));
}

TEST(Model, FrozenBackbone) {
  ModelSpec s = tiny_spec();
  s.all_layers_trainable = false;
  Model m = build_model(s);
  EXPECT_EQ(m.trainable_parameter_count(), static_cast<std::size_t>(128 * 32 + 32 + 32 * 7 + 7));
}

TEST(Model, MissingPretrainedWeightsIsModelError) {
  ModelSpec s = tiny_spec();
  s.pretrained = true;
  s.pretrained_path = "/nonexistent/tiny_test.dckpt";
  EXPECT_THROW(build_model(s), ModelError);
}

TEST(Model, PretrainedCopiesBackboneOnly) {
  ModelSpec s = tiny_spec();
  s.init_seed = 77;
  Model donor = build_model(s);
  const fs::path path = temp_path("donor.dckpt");
  save_checkpoint(donor, path);
  ModelSpec t = tiny_spec();
  t.pretrained = true;
  t.pretrained_path = path.string();
  Model m = build_model(t);
  auto dp = donor.parameters();
  auto mp = m.parameters();
  for (std::size_t i = 0; i < mp.size(); ++i) {
    if (mp[i]->name.rfind("backbone.", 0) == 0)
      EXPECT_EQ(mp[i]->value, dp[i]->value) << mp[i]->name;
    else if (mp[i]->name.find("weight") != std::string::npos)
      EXPECT_NE(mp[i]->value, dp[i]->value) << mp[i]->name;
  }
  fs::remove(path);
}

TEST(Checkpoint, RoundTripReproducesOutputs) {
  ModelSpec s = tiny_spec();
  s.use_gap = false;
  Model m = build_model(s);
  // Move batch-norm statistics off their defaults.
  m.forward(random_images(4, 3), true);
  const fs::path path = temp_path("rt.dckpt");
  save_checkpoint(m, path);
  Model r = load_checkpoint(path);
  EXPECT_EQ(r.spec(), m.spec());
  const Tensor x = random_images(2, 4);
  EXPECT_EQ(r.probabilities(x), m.probabilities(x));
  EXPECT_EQ(read_checkpoint_spec(path), s);
  fs::remove(path);
}

TEST(Checkpoint, RejectsMismatchAndCorruption) {
  Model m = build_model(tiny_spec());
  const fs::path path = temp_path("bad.dckpt");
  save_checkpoint(m, path);
  ModelSpec other = tiny_spec();
  other.num_classes = 5;
  EXPECT_THROW(load_checkpoint(path, other), CheckpointError);
  other = tiny_spec();
  other.backbone = BackboneKind::mobilenet;
  EXPECT_THROW(load_checkpoint(path, other), CheckpointError);
  EXPECT_NO_THROW(load_checkpoint(path, tiny_spec()));

  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-10, std::ios::end);
    f.put('\x7f');
  }
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << "not a checkpoint";
  }
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
  fs::remove(path);
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
}

TEST(Model, ClassScoreGradientMatchesFiniteDifference) {
  Model m = build_model(tiny_spec());
  const Tensor x = random_images(1, 8);
  auto g = m.class_score_gradient(x, 3);
  ASSERT_EQ(g.features.shape(), (Shape{1, 128, 14, 14}));
  ASSERT_EQ(g.gradient.shape(), g.features.shape());
  for (const auto* p : m.parameters())
    if (!p->grad.empty()) {
      EXPECT_EQ(p->grad.squared_norm(), 0.0) << p->name;
    }
  // Perturb one feature through the head alone.
  Tensor f = g.features;
  const std::size_t idx = 1234;
  const float h = 1e-2f;
  f[idx] += h;
  const double up = m.head().infer(f)[3];
  f[idx] -= 2 * h;
  const double down = m.head().infer(f)[3];
  EXPECT_NEAR(g.gradient[idx], (up - down) / (2 * h), 1e-3);
}
