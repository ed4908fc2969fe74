#include "derm/nn/layers.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "parallel.hpp"

namespace derm::nn {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

void require_rank(const Shape& s, std::size_t rank, const char* who) {
  if (s.size() != rank)
    throw std::invalid_argument(std::string(who) + " expects rank " + std::to_string(rank) +
                                " input, got " + to_string(s));
}

float sigmoid(float x) { return 1.0f / (1.0f + std::exp(-x)); }

}  // namespace

// ---------------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(int channels, double eps, double momentum)
    : channels_(channels), eps_(eps), momentum_(momentum) {
  gamma_ = {"gamma", Tensor({channels}, 1.0f), Tensor({channels})};
  beta_ = {"beta", Tensor({channels}, 0.0f), Tensor({channels})};
  running_mean_ = {"running_mean", Tensor({channels}, 0.0f), Tensor(), true};
  running_var_ = {"running_var", Tensor({channels}, 1.0f), Tensor(), true};
}

Tensor BatchNorm2d::infer(const Tensor& x) const {
  require_rank(x.shape(), 4, "BatchNorm2d");
  Tensor y(x.shape());
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  for (int n = 0; n < x.dim(0); ++n)
    for (int c = 0; c < channels_; ++c) {
      const float inv = static_cast<float>(1.0 / std::sqrt(running_var_.value[c] + eps_));
      const float scale = gamma_.value[c] * inv;
      const float shift = beta_.value[c] - running_mean_.value[c] * scale;
      const std::size_t off = (static_cast<std::size_t>(n) * channels_ + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) y[off + i] = x[off + i] * scale + shift;
    }
  return y;
}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) {
  require_rank(x.shape(), 4, "BatchNorm2d");
  if (x.dim(1) != channels_) throw std::invalid_argument("BatchNorm2d channel mismatch");
  const int batch = x.dim(0);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const double count = static_cast<double>(batch) * plane;
  batch_stats_ = training;
  normalized_ = Tensor(x.shape());
  inv_std_.assign(static_cast<std::size_t>(channels_), 0.0f);
  Tensor y(x.shape());

  for (int c = 0; c < channels_; ++c) {
    double mean = running_mean_.value[c];
    double var = running_var_.value[c];
    if (training) {
      double s = 0.0;
      for (int n = 0; n < batch; ++n) {
        const float* p = x.data() + (static_cast<std::size_t>(n) * channels_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      mean = s / count;
      double ss = 0.0;
      for (int n = 0; n < batch; ++n) {
        const float* p = x.data() + (static_cast<std::size_t>(n) * channels_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = p[i] - mean;
          ss += d * d;
        }
      }
      var = ss / count;
      const double unbiased = count > 1 ? ss / (count - 1) : var;
      running_mean_.value[c] = static_cast<float>((1 - momentum_) * running_mean_.value[c] + momentum_ * mean);
      running_var_.value[c] = static_cast<float>((1 - momentum_) * running_var_.value[c] + momentum_ * unbiased);
    }
    const float inv = static_cast<float>(1.0 / std::sqrt(var + eps_));
    inv_std_[static_cast<std::size_t>(c)] = inv;
    const float m = static_cast<float>(mean);
    for (int n = 0; n < batch; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * channels_ + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const float xh = (x[off + i] - m) * inv;
        normalized_[off + i] = xh;
        y[off + i] = gamma_.value[c] * xh + beta_.value[c];
      }
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& g) {
  if (normalized_.empty()) throw std::logic_error("BatchNorm2d::backward without recorded forward");
  const int batch = g.dim(0);
  const std::size_t plane = static_cast<std::size_t>(g.dim(2)) * g.dim(3);
  const double count = static_cast<double>(batch) * plane;
  Tensor dx(g.shape());
  for (int c = 0; c < channels_; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (int n = 0; n < batch; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * channels_ + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_g += g[off + i];
        sum_gx += static_cast<double>(g[off + i]) * normalized_[off + i];
      }
    }
    gamma_.grad[c] += static_cast<float>(sum_gx);
    beta_.grad[c] += static_cast<float>(sum_g);
    const float scale = gamma_.value[c] * inv_std_[static_cast<std::size_t>(c)];
    for (int n = 0; n < batch; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * channels_ + c) * plane;
      if (batch_stats_) {
        const double mg = sum_g / count;
        const double mgx = sum_gx / count;
        for (std::size_t i = 0; i < plane; ++i)
          dx[off + i] = static_cast<float>(scale * (g[off + i] - mg - normalized_[off + i] * mgx));
      } else {
        for (std::size_t i = 0; i < plane; ++i) dx[off + i] = scale * g[off + i];
      }
    }
  }
  return dx;
}

void BatchNorm2d::collect(std::vector<Parameter*>& out, const std::string& prefix) {
  for (Parameter* p : {&gamma_, &beta_, &running_mean_, &running_var_}) {
    const auto dot = p->name.rfind('.');
    p->name = prefix + (dot == std::string::npos ? p->name : p->name.substr(dot + 1));
    out.push_back(p);
  }
}

// ------------------------------------------------------------------------ Act

std::string Act::type() const {
  switch (kind_) {
    case Activation::relu: return "ReLU";
    case Activation::relu6: return "ReLU6";
    case Activation::swish: return "Swish";
    case Activation::sigmoid: return "Sigmoid";
  }
  return "Act";
}

Tensor Act::infer(const Tensor& x) const {
  Tensor y(x.shape());
  const std::size_t n = x.size();
  switch (kind_) {
    case Activation::relu:
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
      break;
    case Activation::relu6:
      for (std::size_t i = 0; i < n; ++i) y[i] = std::min(6.0f, std::max(0.0f, x[i]));
      break;
    case Activation::swish:
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] * sigmoid(x[i]);
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < n; ++i) y[i] = sigmoid(x[i]);
      break;
  }
  return y;
}

Tensor Act::forward(const Tensor& x, bool /*training*/) {
  Tensor y = infer(x);
  cache_ = kind_ == Activation::sigmoid ? y : x;
  return y;
}

Tensor Act::backward(const Tensor& g) {
  if (cache_.empty()) throw std::logic_error("activation backward without recorded forward");
  Tensor dx(g.shape());
  const std::size_t n = g.size();
  switch (kind_) {
    case Activation::relu:
      for (std::size_t i = 0; i < n; ++i) dx[i] = cache_[i] > 0.0f ? g[i] : 0.0f;
      break;
    case Activation::relu6:
      for (std::size_t i = 0; i < n; ++i) dx[i] = (cache_[i] > 0.0f && cache_[i] < 6.0f) ? g[i] : 0.0f;
      break;
    case Activation::swish:
      for (std::size_t i = 0; i < n; ++i) {
        const float s = sigmoid(cache_[i]);
        dx[i] = g[i] * (s + cache_[i] * s * (1.0f - s));
      }
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < n; ++i) dx[i] = g[i] * cache_[i] * (1.0f - cache_[i]);
      break;
  }
  return dx;
}

// ------------------------------------------------------------------ MaxPool2d

Shape MaxPool2d::output_shape(const Shape& in) const {
  require_rank(in, 4, "MaxPool2d");
  const int oh = (in[2] + 2 * padding_ - kernel_) / stride_ + 1;
  const int ow = (in[3] + 2 * padding_ - kernel_) / stride_ + 1;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("MaxPool2d input too small: " + to_string(in));
  return {in[0], in[1], oh, ow};
}

Tensor MaxPool2d::pool(const Tensor& x, std::vector<std::int32_t>* argmax) const {
  const Shape os = output_shape(x.shape());
  Tensor y(os);
  if (argmax) argmax->assign(y.size(), -1);
  const int h = x.dim(2), w = x.dim(3);
  const int planes = os[0] * os[1];
  detail::parallel_for(planes, [&](int p) {
    const std::size_t in_off = static_cast<std::size_t>(p) * h * w;
    const std::size_t out_off = static_cast<std::size_t>(p) * os[2] * os[3];
    for (int oh = 0; oh < os[2]; ++oh)
      for (int ow = 0; ow < os[3]; ++ow) {
        float best = -std::numeric_limits<float>::infinity();
        std::int32_t best_idx = -1;
        for (int ki = 0; ki < kernel_; ++ki) {
          const int ih = oh * stride_ - padding_ + ki;
          if (ih < 0 || ih >= h) continue;
          for (int kj = 0; kj < kernel_; ++kj) {
            const int iw = ow * stride_ - padding_ + kj;
            if (iw < 0 || iw >= w) continue;
            const std::size_t idx = in_off + static_cast<std::size_t>(ih) * w + iw;
            if (x[idx] > best || best_idx < 0) {
              best = x[idx];
              best_idx = static_cast<std::int32_t>(idx);
            }
          }
        }
        const std::size_t o = out_off + static_cast<std::size_t>(oh) * os[3] + ow;
        y[o] = best;
        if (argmax) (*argmax)[o] = best_idx;
      }
  });
  return y;
}

Tensor MaxPool2d::infer(const Tensor& x) const { return pool(x, nullptr); }

Tensor MaxPool2d::forward(const Tensor& x, bool /*training*/) {
  input_shape_ = x.shape();
  return pool(x, &argmax_);
}

Tensor MaxPool2d::backward(const Tensor& g) {
  if (argmax_.size() != g.size()) throw std::logic_error("MaxPool2d::backward without recorded forward");
  Tensor dx(input_shape_);
  for (std::size_t i = 0; i < g.size(); ++i) dx[static_cast<std::size_t>(argmax_[i])] += g[i];
  return dx;
}

// -------------------------------------------------------------- GlobalAvgPool

Shape GlobalAvgPool::output_shape(const Shape& in) const {
  require_rank(in, 4, "GlobalAvgPool");
  return {in[0], in[1]};
}

Tensor GlobalAvgPool::infer(const Tensor& x) const {
  const Shape os = output_shape(x.shape());
  Tensor y(os);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  for (std::size_t p = 0; p < y.size(); ++p) {
    double s = 0.0;
    const float* src = x.data() + p * plane;
    for (std::size_t i = 0; i < plane; ++i) s += src[i];
    y[p] = static_cast<float>(s / static_cast<double>(plane));
  }
  return y;
}

Tensor GlobalAvgPool::forward(const Tensor& x, bool /*training*/) {
  input_shape_ = x.shape();
  return infer(x);
}

Tensor GlobalAvgPool::backward(const Tensor& g) {
  Tensor dx(input_shape_);
  const std::size_t plane = static_cast<std::size_t>(input_shape_[2]) * input_shape_[3];
  const float inv = 1.0f / static_cast<float>(plane);
  for (std::size_t p = 0; p < g.size(); ++p) {
    const float v = g[p] * inv;
    std::fill(dx.data() + p * plane, dx.data() + (p + 1) * plane, v);
  }
  return dx;
}

// -------------------------------------------------------------------- Flatten

Shape Flatten::output_shape(const Shape& in) const {
  if (in.size() < 2) throw std::invalid_argument("Flatten expects rank >= 2, got " + to_string(in));
  int features = 1;
  for (std::size_t i = 1; i < in.size(); ++i) features *= in[i];
  return {in[0], features};
}

Tensor Flatten::infer(const Tensor& x) const { return x.reshaped(output_shape(x.shape())); }

Tensor Flatten::forward(const Tensor& x, bool /*training*/) {
  input_shape_ = x.shape();
  return infer(x);
}

Tensor Flatten::backward(const Tensor& g) { return g.reshaped(input_shape_); }

// ---------------------------------------------------------------------- Dense

Dense::Dense(int in_features, int out_features) : in_features_(in_features), out_features_(out_features) {
  if (in_features <= 0 || out_features <= 0) throw std::invalid_argument("invalid Dense configuration");
  weight_ = {"weight", Tensor({out_features, in_features}), Tensor({out_features, in_features})};
  bias_ = {"bias", Tensor({out_features}), Tensor({out_features})};
}

Shape Dense::output_shape(const Shape& in) const {
  if (in.size() != 2 || in[1] != in_features_)
    throw std::invalid_argument("Dense expects [N, " + std::to_string(in_features_) + "], got " + to_string(in));
  return {in[0], out_features_};
}

Tensor Dense::infer(const Tensor& x) const {
  Tensor y(output_shape(x.shape()));
  ConstMap in(x.data(), x.dim(0), in_features_);
  ConstMap w(weight_.value.data(), out_features_, in_features_);
  MutMap out(y.data(), x.dim(0), out_features_);
  out.noalias() = in * w.transpose();
  for (int n = 0; n < x.dim(0); ++n)
    for (int o = 0; o < out_features_; ++o) out(n, o) += bias_.value[o];
  return y;
}

Tensor Dense::forward(const Tensor& x, bool /*training*/) {
  input_ = x;
  return infer(x);
}

Tensor Dense::backward(const Tensor& g) {
  if (input_.empty()) throw std::logic_error("Dense::backward without recorded forward");
  const int batch = input_.dim(0);
  ConstMap x(input_.data(), batch, in_features_);
  ConstMap dy(g.data(), batch, out_features_);
  ConstMap w(weight_.value.data(), out_features_, in_features_);
  MutMap dw(weight_.grad.data(), out_features_, in_features_);
  dw.noalias() += dy.transpose() * x;
  for (int o = 0; o < out_features_; ++o) {
    double s = 0.0;
    for (int n = 0; n < batch; ++n) s += dy(n, o);
    bias_.grad[o] += static_cast<float>(s);
  }
  Tensor dx(input_.shape());
  MutMap dxm(dx.data(), batch, in_features_);
  dxm.noalias() = dy * w;
  return dx;
}

void Dense::collect(std::vector<Parameter*>& out, const std::string& prefix) {
  weight_.name = prefix + "weight";
  bias_.name = prefix + "bias";
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// -------------------------------------------------------------------- Dropout

Dropout::Dropout(double rate) : rate_(rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must lie in [0, 1)");
}

Tensor Dropout::forward(const Tensor& x, bool training) {
  if (!training || rate_ == 0.0) {
    mask_.clear();
    return x;
  }
  const float keep_scale = static_cast<float>(1.0 / (1.0 - rate_));
  mask_.resize(x.size());
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask_[i] = rng_.bernoulli(rate_) ? 0.0f : keep_scale;
    y[i] = x[i] * mask_[i];
  }
  return y;
}

Tensor Dropout::backward(const Tensor& g) {
  if (mask_.empty()) return g;
  Tensor dx(g.shape());
  for (std::size_t i = 0; i < g.size(); ++i) dx[i] = g[i] * mask_[i];
  return dx;
}

// ------------------------------------------------------------------ Normalize

Tensor Normalize::infer(const Tensor& x) const {
  require_rank(x.shape(), 4, "Normalize");
  if (x.dim(1) != 3) throw std::invalid_argument("Normalize expects 3 channels, got " + to_string(x.shape()));
  Tensor y(x.shape());
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  for (int n = 0; n < x.dim(0); ++n)
    for (int c = 0; c < 3; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * 3 + c) * plane;
      const float inv = 1.0f / stddev_[static_cast<std::size_t>(c)];
      const float m = mean_[static_cast<std::size_t>(c)];
      for (std::size_t i = 0; i < plane; ++i) y[off + i] = (x[off + i] - m) * inv;
    }
  return y;
}

Tensor Normalize::backward(const Tensor& g) {
  Tensor dx(g.shape());
  const std::size_t plane = static_cast<std::size_t>(g.dim(2)) * g.dim(3);
  for (int n = 0; n < g.dim(0); ++n)
    for (int c = 0; c < 3; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * 3 + c) * plane;
      const float inv = 1.0f / stddev_[static_cast<std::size_t>(c)];
      for (std::size_t i = 0; i < plane; ++i) dx[off + i] = g[off + i] * inv;
    }
  return dx;
}

}  // namespace derm::nn
