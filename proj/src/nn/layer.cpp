#include "derm/nn/layer.hpp"

namespace derm::nn {

Shape Sequential::output_shape(const Shape& input) const {
  Shape s = input;
  for (const auto& l : layers_) s = l->output_shape(s);
  return s;
}

Tensor Sequential::infer(const Tensor& x) const {
  if (layers_.empty()) return x;
  Tensor h = layers_.front()->infer(x);
  for (std::size_t i = 1; i < layers_.size(); ++i) h = layers_[i]->infer(h);
  return h;
}

Tensor Sequential::forward(const Tensor& x, bool training) {
  if (layers_.empty()) return x;
  Tensor h = layers_.front()->forward(x, training);
  for (std::size_t i = 1; i < layers_.size(); ++i) h = layers_[i]->forward(h, training);
  return h;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  if (layers_.empty()) return grad_out;
  Tensor g = layers_.back()->backward(grad_out);
  for (std::size_t i = layers_.size() - 1; i-- > 0;) g = layers_[i]->backward(g);
  return g;
}

void Sequential::collect(std::vector<Parameter*>& out, const std::string& prefix) {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    layers_[i]->collect(out, prefix + std::to_string(i) + ".");
}

void Sequential::reseed(std::uint64_t seed) {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    layers_[i]->reseed(seed * 0x9e3779b97f4a7c15ULL + i + 1);
}

void Sequential::release_cache() {
  for (auto& l : layers_) l->release_cache();
}

}  // namespace derm::nn
