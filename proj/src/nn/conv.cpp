#include <Eigen/Core>
#include <stdexcept>
#include <vector>

#include "derm/nn/layers.hpp"
#include "parallel.hpp"

namespace derm::nn {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

struct Geometry {
  int channels, height, width;  // per group input
  int kernel, stride, padding;
  int out_h, out_w;

  int rows() const { return channels * kernel * kernel; }
  int cols() const { return out_h * out_w; }
  bool pointwise() const { return kernel == 1 && stride == 1 && padding == 0; }
};

void im2col(const float* x, const Geometry& g, float* cols) {
  const int hw = g.cols();
  for (int c = 0; c < g.channels; ++c) {
    const float* plane = x + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ki = 0; ki < g.kernel; ++ki) {
      for (int kj = 0; kj < g.kernel; ++kj) {
        float* dst = cols + static_cast<std::size_t>((c * g.kernel + ki) * g.kernel + kj) * hw;
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh * g.stride - g.padding + ki;
          float* row = dst + static_cast<std::size_t>(oh) * g.out_w;
          if (ih < 0 || ih >= g.height) {
            std::fill(row, row + g.out_w, 0.0f);
            continue;
          }
          const float* src = plane + static_cast<std::size_t>(ih) * g.width;
          for (int ow = 0; ow < g.out_w; ++ow) {
            const int iw = ow * g.stride - g.padding + kj;
            row[ow] = (iw >= 0 && iw < g.width) ? src[iw] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im(const float* cols, const Geometry& g, float* dx) {
  const int hw = g.cols();
  for (int c = 0; c < g.channels; ++c) {
    float* plane = dx + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ki = 0; ki < g.kernel; ++ki) {
      for (int kj = 0; kj < g.kernel; ++kj) {
        const float* src = cols + static_cast<std::size_t>((c * g.kernel + ki) * g.kernel + kj) * hw;
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh * g.stride - g.padding + ki;
          if (ih < 0 || ih >= g.height) continue;
          float* dst = plane + static_cast<std::size_t>(ih) * g.width;
          const float* row = src + static_cast<std::size_t>(oh) * g.out_w;
          for (int ow = 0; ow < g.out_w; ++ow) {
            const int iw = ow * g.stride - g.padding + kj;
            if (iw >= 0 && iw < g.width) dst[iw] += row[ow];
          }
        }
      }
    }
  }
}

}  // namespace

Conv2d::Conv2d(int in_channels, int out_channels, Options opts)
    : in_channels_(in_channels), out_channels_(out_channels), opts_(opts) {
  if (in_channels <= 0 || out_channels <= 0 || opts.kernel <= 0 || opts.stride <= 0 ||
      opts.padding < 0 || opts.groups <= 0 || in_channels % opts.groups != 0 ||
      out_channels % opts.groups != 0)
    throw std::invalid_argument("invalid Conv2d configuration");
  weight_.name = "weight";
  weight_.value = Tensor({out_channels, in_channels / opts.groups, opts.kernel, opts.kernel});
  weight_.grad = Tensor(weight_.value.shape());
  if (opts.bias) {
    bias_.name = "bias";
    bias_.value = Tensor({out_channels});
    bias_.grad = Tensor({out_channels});
  }
}

Shape Conv2d::output_shape(const Shape& in) const {
  if (in.size() != 4 || in[1] != in_channels_)
    throw std::invalid_argument("Conv2d expects [N, " + std::to_string(in_channels_) +
                                ", H, W], got " + to_string(in));
  const int oh = (in[2] + 2 * opts_.padding - opts_.kernel) / opts_.stride + 1;
  const int ow = (in[3] + 2 * opts_.padding - opts_.kernel) / opts_.stride + 1;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("Conv2d input too small: " + to_string(in));
  return {in[0], out_channels_, oh, ow};
}

Tensor Conv2d::infer(const Tensor& x) const {
  const Shape os = output_shape(x.shape());
  Tensor y(os);
  const int n_batch = x.dim(0);
  const int groups = opts_.groups;
  const int cout_g = out_channels_ / groups;
  const Geometry g{in_channels_ / groups, x.dim(2), x.dim(3), opts_.kernel,
                   opts_.stride,          opts_.padding, os[2], os[3]};
  const std::size_t in_plane = static_cast<std::size_t>(g.height) * g.width;
  const std::size_t out_plane = static_cast<std::size_t>(g.cols());

  detail::parallel_for(n_batch, [&](int n) {
    std::vector<float> cols;
    if (!g.pointwise()) cols.resize(static_cast<std::size_t>(g.rows()) * g.cols());
    for (int gi = 0; gi < groups; ++gi) {
      const float* xg = x.data() + (static_cast<std::size_t>(n) * in_channels_ + gi * g.channels) * in_plane;
      const float* colp = xg;
      if (!g.pointwise()) {
        im2col(xg, g, cols.data());
        colp = cols.data();
      }
      ConstMap w(weight_.value.data() + static_cast<std::size_t>(gi) * cout_g * g.rows(), cout_g, g.rows());
      ConstMap c(colp, g.rows(), g.cols());
      MutMap out(y.data() + (static_cast<std::size_t>(n) * out_channels_ + gi * cout_g) * out_plane, cout_g,
                 g.cols());
      out.noalias() = w * c;
    }
    if (opts_.bias) {
      for (int oc = 0; oc < out_channels_; ++oc) {
        float* p = y.data() + (static_cast<std::size_t>(n) * out_channels_ + oc) * out_plane;
        const float b = bias_.value[oc];
        for (std::size_t i = 0; i < out_plane; ++i) p[i] += b;
      }
    }
  });
  return y;
}

Tensor Conv2d::forward(const Tensor& x, bool /*training*/) {
  input_ = x;
  return infer(x);
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  if (input_.empty()) throw std::logic_error("Conv2d::backward without recorded forward");
  const Tensor& x = input_;
  const int n_batch = x.dim(0);
  const int groups = opts_.groups;
  const int cout_g = out_channels_ / groups;
  const Shape os = output_shape(x.shape());
  if (grad_out.shape() != os) throw std::invalid_argument("Conv2d::backward gradient shape mismatch");
  const Geometry g{in_channels_ / groups, x.dim(2), x.dim(3), opts_.kernel,
                   opts_.stride,          opts_.padding, os[2], os[3]};
  const std::size_t in_plane = static_cast<std::size_t>(g.height) * g.width;
  const std::size_t out_plane = static_cast<std::size_t>(g.cols());
  const std::size_t wsize = weight_.value.size();

  Tensor dx(x.shape());
  // Weight gradients are reduced per contiguous chunk of samples, then summed
  // in chunk order, so results depend only on the worker count.
  const int parts = std::min(n_batch, detail::worker_count());
  std::vector<std::vector<float>> partial(static_cast<std::size_t>(parts));
  detail::parallel_for(parts, [&](int part) {
    auto [begin, end] = detail::chunk_range(n_batch, parts, part);
    std::vector<float>& dw = partial[static_cast<std::size_t>(part)];
    dw.assign(wsize, 0.0f);
    std::vector<float> cols(static_cast<std::size_t>(g.rows()) * g.cols());
    std::vector<float> dcols(cols.size());
    for (int n = begin; n < end; ++n) {
      for (int gi = 0; gi < groups; ++gi) {
        const std::size_t in_off = (static_cast<std::size_t>(n) * in_channels_ + gi * g.channels) * in_plane;
        const float* xg = x.data() + in_off;
        const float* colp = xg;
        if (!g.pointwise()) {
          im2col(xg, g, cols.data());
          colp = cols.data();
        }
        ConstMap c(colp, g.rows(), g.cols());
        ConstMap dy(grad_out.data() + (static_cast<std::size_t>(n) * out_channels_ + gi * cout_g) * out_plane,
                    cout_g, g.cols());
        ConstMap w(weight_.value.data() + static_cast<std::size_t>(gi) * cout_g * g.rows(), cout_g, g.rows());
        MutMap dwg(dw.data() + static_cast<std::size_t>(gi) * cout_g * g.rows(), cout_g, g.rows());
        dwg.noalias() += dy * c.transpose();
        if (g.pointwise()) {
          MutMap dxg(dx.data() + in_off, g.rows(), g.cols());
          dxg.noalias() = w.transpose() * dy;
        } else {
          MutMap dc(dcols.data(), g.rows(), g.cols());
          dc.noalias() = w.transpose() * dy;
          col2im(dcols.data(), g, dx.data() + in_off);
        }
      }
    }
  });
  float* wg = weight_.grad.data();
  for (const auto& dw : partial)
    for (std::size_t i = 0; i < wsize; ++i) wg[i] += dw[i];

  if (opts_.bias) {
    for (int n = 0; n < n_batch; ++n)
      for (int oc = 0; oc < out_channels_; ++oc) {
        const float* p = grad_out.data() + (static_cast<std::size_t>(n) * out_channels_ + oc) * out_plane;
        double s = 0.0;
        for (std::size_t i = 0; i < out_plane; ++i) s += p[i];
        bias_.grad[oc] += static_cast<float>(s);
      }
  }
  return dx;
}

void Conv2d::collect(std::vector<Parameter*>& out, const std::string& prefix) {
  weight_.name = prefix + "weight";
  out.push_back(&weight_);
  if (opts_.bias) {
    bias_.name = prefix + "bias";
    out.push_back(&bias_);
  }
}

}  // namespace derm::nn
