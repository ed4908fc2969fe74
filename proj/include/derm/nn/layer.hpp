#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "derm/tensor.hpp"

namespace derm::nn {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  // Buffers (batch-norm running statistics) are persisted but never optimized.
  bool is_buffer = false;
  bool trainable = true;

  bool optimizable() const { return trainable && !is_buffer; }
};

// A differentiable block. Two forward paths exist:
//   infer()   evaluation only, touches no state, safe for concurrent callers;
//   forward() records what backward() needs. `training` selects batch
//             statistics for batch-norm and active dropout.
// backward() accumulates into each Parameter::grad and returns the gradient
// with respect to the last recorded input.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string type() const = 0;
  virtual Shape output_shape(const Shape& input) const = 0;

  virtual Tensor infer(const Tensor& x) const = 0;
  virtual Tensor forward(const Tensor& x, bool training) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;

  // Appends parameters as "<prefix><local name>".
  virtual void collect(std::vector<Parameter*>& /*out*/, const std::string& /*prefix*/) {}

  virtual void reseed(std::uint64_t /*seed*/) {}
  virtual void release_cache() {}
};

using LayerPtr = std::unique_ptr<Layer>;

class Sequential final : public Layer {
 public:
  Sequential() = default;
  explicit Sequential(std::vector<LayerPtr> layers) : layers_(std::move(layers)) {}

  Sequential& add(LayerPtr layer) {
    layers_.push_back(std::move(layer));
    return *this;
  }
  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  Layer& operator[](std::size_t i) { return *layers_[i]; }
  const Layer& operator[](std::size_t i) const { return *layers_[i]; }

  std::string type() const override { return "Sequential"; }
  Shape output_shape(const Shape& input) const override;
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(std::vector<Parameter*>& out, const std::string& prefix) override;
  void reseed(std::uint64_t seed) override;
  void release_cache() override;

 private:
  std::vector<LayerPtr> layers_;
};

}  // namespace derm::nn
