#include <gtest/gtest.h>

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <cmath>

#include "derm/error.hpp"
#include "derm/losses.hpp"
#include "derm/rng.hpp"

using namespace derm;
using Big = boost::multiprecision::cpp_bin_float_50;

namespace {

// Independent high-precision evaluation of -alpha (1 - p)^gamma log p.
double big_focal(double p, double gamma, double alpha) {
  const Big bp(p);
  return static_cast<double>(-Big(alpha) * boost::multiprecision::pow(Big(1) - bp, Big(gamma)) *
                             boost::multiprecision::log(bp));
}

std::vector<double> two_point(double pt, int target, int k = 7) {
  std::vector<double> probs(static_cast<std::size_t>(k), (1.0 - pt) / (k - 1));
  probs[static_cast<std::size_t>(target)] = pt;
  return probs;
}

}  // namespace

TEST(FocalLoss, ReferenceValues) {
  EXPECT_NEAR(focal_loss(two_point(0.5, 0), 0, 0.0, 1.0), 0.6931472, 1e-7);
  EXPECT_NEAR(focal_loss(two_point(0.9, 3), 3, 2.0, 0.25), 2.6341e-4, 1e-8);
  EXPECT_LT(focal_loss(two_point(1.0, 2), 2, 2.0, 1.0), 1e-6);
  EXPECT_LT(focal_loss(two_point(1.0, 2), 2, 0.0, 3.0), 1e-6);
}

TEST(FocalLoss, MatchesHighPrecisionOracle) {
  Rng rng(11);
  for (int i = 0; i < 300; ++i) {
    const double pt = rng.uniform(1e-6, 1.0 - 1e-6);
    const double gamma = std::array{0.0, 1.0, 2.0, 5.0}[rng.below(4)];
    const double alpha = rng.uniform(0.05, 5.0);
    const int t = static_cast<int>(rng.below(7));
    const double ref = big_focal(pt, gamma, alpha);
    EXPECT_LE(std::abs(focal_loss(two_point(pt, t), t, gamma, alpha) - ref), 1e-9 * std::abs(ref));
  }
}

TEST(FocalLoss, InvalidArguments) {
  const auto p = two_point(0.5, 0);
  EXPECT_THROW(focal_loss(p, 7, 2.0, 1.0), std::invalid_argument);
  EXPECT_THROW(focal_loss(p, -1, 2.0, 1.0), std::invalid_argument);
  EXPECT_THROW(focal_loss(p, 0, -1.0, 1.0), std::invalid_argument);
  EXPECT_THROW(focal_loss(p, 0, 2.0, 0.0), std::invalid_argument);
}

TEST(WeightedCrossEntropy, ReferenceValues) {
  const std::vector<double> ones(7, 1.0);
  EXPECT_NEAR(weighted_cross_entropy(two_point(0.5, 1), 1, ones), 0.6931472, 1e-7);
  std::vector<double> w(7, 1.0);
  w[4] = 2.5;
  EXPECT_NEAR(weighted_cross_entropy(two_point(0.5, 4), 4, w), 1.7328680, 1e-7);
  EXPECT_LT(weighted_cross_entropy(two_point(1.0, 4), 4, w), 1e-6);
}

TEST(ClassWeightedFocal, ReferenceValuesAndReduction) {
  std::vector<double> w(7, 1.0);
  w[5] = 2.5;
  EXPECT_NEAR(class_weighted_focal_loss(two_point(0.9, 5), 5, w, 2.0), 2.5 * 0.01 * 0.1053605, 1e-9);
  EXPECT_LE(class_weighted_focal_loss(two_point(0.999999, 0), 0, std::vector<double>(7, 1.0), kDefaultGamma), 1e-5);
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> weights(7);
    for (double& x : weights) x = rng.uniform(0.1, 10.0);
    const int t = static_cast<int>(rng.below(7));
    const auto p = two_point(rng.uniform(0.01, 0.99), t);
    EXPECT_EQ(class_weighted_focal_loss(p, t, weights, 0.0), weighted_cross_entropy(p, t, weights));
  }
}

TEST(Losses, Properties) {
  for (double gamma : {0.0, 1.0, 2.0, 5.0}) {
    double prev = INFINITY;
    for (double pt = 0.01; pt < 0.995; pt += 0.01) {
      const double l = focal_loss(two_point(pt, 0), 0, gamma, 0.7);
      EXPECT_GE(l, 0.0);
      EXPECT_LT(l, prev);
      EXPECT_LE(l, 0.7 * -std::log(pt) + 1e-15);
      prev = l;
    }
  }
  const double ratio0 = focal_loss(two_point(0.1, 0), 0, 0.0, 1.0) / focal_loss(two_point(0.9, 0), 0, 0.0, 1.0);
  for (double gamma : {1.0, 2.0, 5.0}) {
    const double ratio =
        focal_loss(two_point(0.1, 0), 0, gamma, 1.0) / focal_loss(two_point(0.9, 0), 0, gamma, 1.0);
    EXPECT_GT(ratio, ratio0);
  }
}

TEST(LossKind, ParsesNames) {
  EXPECT_EQ(parse_loss_kind("focal"), LossKind::focal);
  EXPECT_EQ(parse_loss_kind("weighted_ce"), LossKind::weighted_ce);
  EXPECT_EQ(parse_loss_kind("ce"), LossKind::ce);
  EXPECT_THROW(parse_loss_kind("hinge"), ConfigError);
  for (auto k : {LossKind::focal, LossKind::weighted_ce, LossKind::ce}) EXPECT_EQ(parse_loss_kind(to_string(k)), k);
}

TEST(LossGradient, UniformLogitsCrossEntropy) {
  const std::vector<double> z(7, 0.3);
  const LossSpec spec{LossKind::focal, 0.0, {}};
  const auto g = loss_gradient(z, 2, spec);
  for (int j = 0; j < 7; ++j) EXPECT_NEAR(g[static_cast<std::size_t>(j)], 1.0 / 7 - (j == 2), 1e-12);
}

TEST(LossGradient, FiniteDifferences) {
  Rng rng(21);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> z(7);
    for (double& v : z) v = rng.normal() * 2;
    const int t = static_cast<int>(rng.below(7));
    LossSpec spec;
    spec.kind = std::array{LossKind::focal, LossKind::weighted_ce, LossKind::ce}[rng.below(3)];
    spec.gamma = std::array{0.0, 1.0, 2.0, 5.0}[rng.below(4)];
    spec.weights.resize(7);
    for (double& w : spec.weights) w = rng.uniform(0.2, 5.0);
    const auto g = loss_gradient(z, t, spec);
    for (std::size_t j = 0; j < 7; ++j) {
      auto zp = z, zm = z;
      zp[j] += 1e-4;
      zm[j] -= 1e-4;
      const double fd = (loss_from_logits(zp, t, spec) - loss_from_logits(zm, t, spec)) / 2e-4;
      EXPECT_LE(std::abs(g[j] - fd), 1e-4 * std::max(std::abs(fd), std::abs(g[j])) + 1e-10) << i << " " << j;
    }
  }
}

TEST(LossGradient, VanishesAtCertaintyAndRejectsNonFinite) {
  std::vector<double> z(7, 0.0);
  z[3] = 40.0;
  const auto g = loss_gradient(z, 3, LossSpec{});
  double norm = 0;
  for (double v : g) norm += v * v;
  EXPECT_LT(std::sqrt(norm), 1e-9);
  z[1] = NAN;
  EXPECT_THROW(loss_gradient(z, 3, LossSpec{}), std::invalid_argument);
  z[1] = INFINITY;
  EXPECT_THROW(loss_gradient(z, 3, LossSpec{}), std::invalid_argument);
}

TEST(Softmax, StableAndNormalized) {
  const std::vector<double> z{1000.0, 1001.0, 999.0};
  const auto p = softmax(z);
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-15);
  EXPECT_GT(p[1], p[0]);
  EXPECT_DOUBLE_EQ(batch_mean(std::vector<double>{1, 2, 3}), 2.0);
}
