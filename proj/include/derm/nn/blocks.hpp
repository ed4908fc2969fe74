#pragma once

#include <memory>
#include <optional>

#include "derm/nn/layer.hpp"
#include "derm/nn/layers.hpp"

namespace derm::nn {

// y = act(main(x) + shortcut(x)); an empty shortcut is the identity and a
// missing activation leaves the sum as is (inverted-residual blocks).
class Residual final : public Layer {
 public:
  Residual(Sequential main, Sequential shortcut, std::optional<Activation> post);

  std::string type() const override { return "Residual"; }
  Shape output_shape(const Shape& input) const override;
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(std::vector<Parameter*>& out, const std::string& prefix) override;
  void reseed(std::uint64_t seed) override;
  void release_cache() override;

 private:
  Sequential main_;
  Sequential shortcut_;
  std::optional<Act> post_;
};

// Squeeze-and-excitation channel gating: x * sigmoid(W2 swish(W1 gap(x))).
class SqueezeExcite final : public Layer {
 public:
  SqueezeExcite(int channels, int reduced);

  std::string type() const override { return "SqueezeExcite"; }
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(std::vector<Parameter*>& out, const std::string& prefix) override;
  void release_cache() override;

 private:
  int channels_;
  Sequential gate_;  // GAP -> Dense -> swish -> Dense -> sigmoid
  Tensor input_;
  Tensor scale_;     // [N, C]
};

}  // namespace derm::nn
