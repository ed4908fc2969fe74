#pragma once

#include <cstdint>
#include <vector>

#include "derm/nn/layer.hpp"

namespace derm::nn {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Buffers and frozen parameters are skipped.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamOptions opts);

  void step();
  void zero_grad();

  double learning_rate() const { return opts_.lr; }
  void set_learning_rate(double lr) { opts_.lr = lr; }
  std::int64_t steps() const { return t_; }

 private:
  std::vector<Parameter*> params_;
  AdamOptions opts_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  std::int64_t t_ = 0;
};

}  // namespace derm::nn
