#include "derm/nn/blocks.hpp"

#include <stdexcept>

namespace derm::nn {

Residual::Residual(Sequential main, Sequential shortcut, std::optional<Activation> post)
    : main_(std::move(main)), shortcut_(std::move(shortcut)) {
  if (post) post_.emplace(*post);
}

Shape Residual::output_shape(const Shape& input) const {
  const Shape a = main_.output_shape(input);
  const Shape b = shortcut_.output_shape(input);
  if (a != b)
    throw std::invalid_argument("residual branches disagree: " + to_string(a) + " vs " + to_string(b));
  return a;
}

Tensor Residual::infer(const Tensor& x) const {
  Tensor y = main_.infer(x);
  y += shortcut_.infer(x);
  return post_ ? post_->infer(y) : y;
}

Tensor Residual::forward(const Tensor& x, bool training) {
  Tensor y = main_.forward(x, training);
  y += shortcut_.forward(x, training);
  return post_ ? post_->forward(y, training) : y;
}

Tensor Residual::backward(const Tensor& grad_out) {
  const Tensor g = post_ ? post_->backward(grad_out) : grad_out;
  Tensor dx = main_.backward(g);
  dx += shortcut_.backward(g);
  return dx;
}

void Residual::collect(std::vector<Parameter*>& out, const std::string& prefix) {
  main_.collect(out, prefix + "main.");
  shortcut_.collect(out, prefix + "shortcut.");
}

void Residual::reseed(std::uint64_t seed) {
  main_.reseed(seed);
  shortcut_.reseed(seed + 1);
}

void Residual::release_cache() {
  main_.release_cache();
  shortcut_.release_cache();
  if (post_) post_->release_cache();
}

SqueezeExcite::SqueezeExcite(int channels, int reduced) : channels_(channels) {
  gate_.emplace<GlobalAvgPool>();
  gate_.emplace<Dense>(channels, reduced);
  gate_.emplace<Act>(Activation::swish);
  gate_.emplace<Dense>(reduced, channels);
  gate_.emplace<Act>(Activation::sigmoid);
}

namespace {

Tensor scale_channels(const Tensor& x, const Tensor& s) {
  Tensor y(x.shape());
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  for (std::size_t p = 0; p < s.size(); ++p)
    for (std::size_t i = 0; i < plane; ++i) y[p * plane + i] = x[p * plane + i] * s[p];
  return y;
}

}  // namespace

Tensor SqueezeExcite::infer(const Tensor& x) const { return scale_channels(x, gate_.infer(x)); }

Tensor SqueezeExcite::forward(const Tensor& x, bool training) {
  input_ = x;
  scale_ = gate_.forward(x, training);
  return scale_channels(x, scale_);
}

Tensor SqueezeExcite::backward(const Tensor& g) {
  if (input_.empty()) throw std::logic_error("SqueezeExcite::backward without recorded forward");
  const std::size_t plane = static_cast<std::size_t>(g.dim(2)) * g.dim(3);
  Tensor dscale(scale_.shape());
  for (std::size_t p = 0; p < scale_.size(); ++p) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += static_cast<double>(g[p * plane + i]) * input_[p * plane + i];
    dscale[p] = static_cast<float>(s);
  }
  Tensor dx = scale_channels(g, scale_);
  dx += gate_.backward(dscale);
  return dx;
}

void SqueezeExcite::collect(std::vector<Parameter*>& out, const std::string& prefix) {
  gate_.collect(out, prefix + "gate.");
}

void SqueezeExcite::release_cache() {
  gate_.release_cache();
  input_ = Tensor();
  scale_ = Tensor();
}

}  // namespace derm::nn
