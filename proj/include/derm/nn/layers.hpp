#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "derm/nn/layer.hpp"
#include "derm/rng.hpp"

namespace derm::nn {

// 2-D convolution over NCHW input, square kernel, symmetric zero padding.
// groups == in_channels gives a depthwise convolution.
class Conv2d final : public Layer {
 public:
  struct Options {
    int kernel = 3;
    int stride = 1;
    int padding = 0;
    int groups = 1;
    bool bias = false;
  };

  Conv2d(int in_channels, int out_channels, Options opts);

  int in_channels() const { return in_channels_; }
  int out_channels() const { return out_channels_; }
  const Options& options() const { return opts_; }
  Parameter& weight() { return weight_; }
  const Parameter& weight() const { return weight_; }
  Parameter& bias() { return bias_; }

  std::string type() const override { return "Conv2d"; }
  Shape output_shape(const Shape& input) const override;
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(std::vector<Parameter*>& out, const std::string& prefix) override;
  void release_cache() override { input_ = Tensor(); }

 private:
  int in_channels_;
  int out_channels_;
  Options opts_;
  Parameter weight_;  // [out, in / groups, k, k]
  Parameter bias_;    // [out] when enabled
  Tensor input_;
};

class BatchNorm2d final : public Layer {
 public:
  explicit BatchNorm2d(int channels, double eps = 1e-5, double momentum = 0.1);

  std::string type() const override { return "BatchNorm2d"; }
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(std::vector<Parameter*>& out, const std::string& prefix) override;
  void release_cache() override { normalized_ = Tensor(); }

 private:
  int channels_;
  double eps_;
  double momentum_;
  Parameter gamma_;
  Parameter beta_;
  Parameter running_mean_;
  Parameter running_var_;
  Tensor normalized_;
  std::vector<float> inv_std_;
  bool batch_stats_ = false;
};

enum class Activation { relu, relu6, swish, sigmoid };

class Act final : public Layer {
 public:
  explicit Act(Activation kind) : kind_(kind) {}

  Activation kind() const { return kind_; }
  std::string type() const override;
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void release_cache() override { cache_ = Tensor(); }

 private:
  Activation kind_;
  Tensor cache_;  // input (relu, relu6, swish) or output (sigmoid)
};

class MaxPool2d final : public Layer {
 public:
  MaxPool2d(int kernel, int stride, int padding = 0)
      : kernel_(kernel), stride_(stride), padding_(padding) {}

  std::string type() const override { return "MaxPool2d"; }
  Shape output_shape(const Shape& input) const override;
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void release_cache() override { argmax_.clear(); }

 private:
  Tensor pool(const Tensor& x, std::vector<std::int32_t>* argmax) const;

  int kernel_;
  int stride_;
  int padding_;
  Shape input_shape_;
  std::vector<std::int32_t> argmax_;
};

// [N, C, H, W] -> [N, C], spatial mean.
class GlobalAvgPool final : public Layer {
 public:
  std::string type() const override { return "GlobalAvgPool"; }
  Shape output_shape(const Shape& input) const override;
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Shape input_shape_;
};

// [N, ...] -> [N, prod(...)].
class Flatten final : public Layer {
 public:
  std::string type() const override { return "Flatten"; }
  Shape output_shape(const Shape& input) const override;
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Shape input_shape_;
};

// Fully connected layer on [N, in].
class Dense final : public Layer {
 public:
  Dense(int in_features, int out_features);

  int in_features() const { return in_features_; }
  int out_features() const { return out_features_; }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

  std::string type() const override { return "Dense"; }
  Shape output_shape(const Shape& input) const override;
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(std::vector<Parameter*>& out, const std::string& prefix) override;
  void release_cache() override { input_ = Tensor(); }

 private:
  int in_features_;
  int out_features_;
  Parameter weight_;  // [out, in]
  Parameter bias_;    // [out]
  Tensor input_;
};

// Inverted dropout; identity outside training.
class Dropout final : public Layer {
 public:
  explicit Dropout(double rate);

  double rate() const { return rate_; }
  std::string type() const override { return "Dropout"; }
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor infer(const Tensor& x) const override { return x; }
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void reseed(std::uint64_t seed) override { rng_ = Rng(seed); }
  void release_cache() override { mask_.clear(); }

 private:
  double rate_;
  Rng rng_{0};
  std::vector<float> mask_;
};

// Per-channel affine input normalization with fixed statistics.
class Normalize final : public Layer {
 public:
  Normalize(std::array<float, 3> mean, std::array<float, 3> stddev)
      : mean_(mean), stddev_(stddev) {}

  std::string type() const override { return "Normalize"; }
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, bool /*training*/) override { return infer(x); }
  Tensor backward(const Tensor& grad_out) override;

 private:
  std::array<float, 3> mean_;
  std::array<float, 3> stddev_;
};

}  // namespace derm::nn
