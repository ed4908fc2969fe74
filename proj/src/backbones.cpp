// Convolutional trunks of the registered backbones, following the canonical
// published layouts (top classifier removed).

#include <algorithm>
#include <array>
#include <optional>
#include <cmath>
#include <memory>

#include "derm/error.hpp"
#include "derm/model.hpp"
#include "derm/nn/blocks.hpp"
#include "derm/nn/layers.hpp"

namespace derm {

namespace {

using nn::Act;
using nn::Activation;
using nn::BatchNorm2d;
using nn::Conv2d;
using nn::Sequential;

// ImageNet statistics; callers feed [0, 1] RGB.
constexpr std::array<float, 3> kMean = {0.485f, 0.456f, 0.406f};
constexpr std::array<float, 3> kStd = {0.229f, 0.224f, 0.225f};

void conv_bn_act(Sequential& s, int in, int out, int k, int stride, std::optional<Activation> act, int groups = 1) {
  s.emplace<Conv2d>(in, out, Conv2d::Options{k, stride, k / 2, groups, false});
  s.emplace<BatchNorm2d>(out);
  if (act) s.emplace<Act>(*act);
}

// ResNet-50: bottleneck blocks [3, 4, 6, 3], stride on the 3x3 convolution.
Sequential resnet50() {
  Sequential s;
  s.emplace<nn::Normalize>(kMean, kStd);
  s.emplace<Conv2d>(3, 64, Conv2d::Options{7, 2, 3, 1, false});
  s.emplace<BatchNorm2d>(64);
  s.emplace<Act>(Activation::relu);
  s.emplace<nn::MaxPool2d>(3, 2, 1);
  int in = 64;
  const std::array<std::array<int, 3>, 4> stages = {{{64, 3, 1}, {128, 4, 2}, {256, 6, 2}, {512, 3, 2}}};
  for (const auto& [planes, blocks, stride] : stages) {
    for (int b = 0; b < blocks; ++b) {
      const int st = b == 0 ? stride : 1;
      const int out = planes * 4;
      Sequential main;
      conv_bn_act(main, in, planes, 1, 1, Activation::relu);
      conv_bn_act(main, planes, planes, 3, st, Activation::relu);
      conv_bn_act(main, planes, out, 1, 1, std::nullopt);
      Sequential shortcut;
      if (st != 1 || in != out) {
        shortcut.emplace<Conv2d>(in, out, Conv2d::Options{1, st, 0, 1, false});
        shortcut.emplace<BatchNorm2d>(out);
      }
      s.emplace<nn::Residual>(std::move(main), std::move(shortcut), Activation::relu);
      in = out;
    }
  }
  return s;
}

Sequential vgg16() {
  Sequential s;
  s.emplace<nn::Normalize>(kMean, kStd);
  constexpr std::array<int, 18> cfg = {64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0};
  int in = 3;
  for (int c : cfg) {
    if (c == 0) {
      s.emplace<nn::MaxPool2d>(2, 2);
      continue;
    }
    s.emplace<Conv2d>(in, c, Conv2d::Options{3, 1, 1, 1, true});
    s.emplace<Act>(Activation::relu);
    in = c;
  }
  return s;
}

// MobileNet v1, width multiplier 1.0.
Sequential mobilenet() {
  Sequential s;
  s.emplace<nn::Normalize>(kMean, kStd);
  conv_bn_act(s, 3, 32, 3, 2, Activation::relu6);
  constexpr std::array<std::array<int, 2>, 13> blocks = {
      {{64, 1}, {128, 2}, {128, 1}, {256, 2}, {256, 1}, {512, 2}, {512, 1}, {512, 1}, {512, 1}, {512, 1},
       {512, 1}, {1024, 2}, {1024, 1}}};
  int in = 32;
  for (const auto& [out, stride] : blocks) {
    conv_bn_act(s, in, in, 3, stride, Activation::relu6, in);
    conv_bn_act(s, in, out, 1, 1, Activation::relu6);
    in = out;
  }
  return s;
}

// EfficientNet-B1 (width 1.0, depth 1.1) with squeeze-excitation ratio 0.25.
Sequential efficientnet_b1() {
  struct Stage {
    int kernel, stride, expand, out, repeats;
  };
  constexpr std::array<Stage, 7> base = {{{3, 1, 1, 16, 1},
                                          {3, 2, 6, 24, 2},
                                          {5, 2, 6, 40, 2},
                                          {3, 2, 6, 80, 3},
                                          {5, 1, 6, 112, 3},
                                          {5, 2, 6, 192, 4},
                                          {3, 1, 6, 320, 1}}};
  constexpr double depth = 1.1;
  Sequential s;
  s.emplace<nn::Normalize>(kMean, kStd);
  conv_bn_act(s, 3, 32, 3, 2, Activation::swish);
  int in = 32;
  for (const Stage& st : base) {
    const int repeats = static_cast<int>(std::ceil(depth * st.repeats));
    for (int r = 0; r < repeats; ++r) {
      const int stride = r == 0 ? st.stride : 1;
      const int mid = in * st.expand;
      Sequential main;
      if (st.expand != 1) conv_bn_act(main, in, mid, 1, 1, Activation::swish);
      conv_bn_act(main, mid, mid, st.kernel, stride, Activation::swish, mid);
      main.emplace<nn::SqueezeExcite>(mid, std::max(1, in / 4));
      conv_bn_act(main, mid, st.out, 1, 1, std::nullopt);
      if (stride == 1 && in == st.out)
        s.emplace<nn::Residual>(std::move(main), Sequential{}, std::nullopt);
      else
        s.add(std::make_unique<Sequential>(std::move(main)));
      in = st.out;
    }
  }
  conv_bn_act(s, in, 1280, 1, 1, Activation::swish);
  return s;
}

// Four conv blocks, 224 -> 14x14x128, about 1e5 parameters.
Sequential tiny_test() {
  Sequential s;
  s.emplace<nn::Normalize>(kMean, kStd);
  conv_bn_act(s, 3, 16, 3, 2, Activation::relu);
  s.emplace<nn::MaxPool2d>(2, 2);
  conv_bn_act(s, 16, 32, 3, 1, Activation::relu);
  s.emplace<nn::MaxPool2d>(2, 2);
  conv_bn_act(s, 32, 64, 3, 1, Activation::relu);
  s.emplace<nn::MaxPool2d>(2, 2);
  conv_bn_act(s, 64, 128, 3, 1, Activation::relu);
  return s;
}

}  // namespace

nn::Sequential build_backbone(BackboneKind kind) {
  switch (kind) {
    case BackboneKind::resnet50: return resnet50();
    case BackboneKind::vgg16: return vgg16();
    case BackboneKind::mobilenet: return mobilenet();
    case BackboneKind::efficientnet_b1: return efficientnet_b1();
    case BackboneKind::tiny_test: return tiny_test();
  }
  throw ModelError("unknown backbone");
}

}  // namespace derm
