#include "derm/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "derm/error.hpp"

namespace derm {

namespace {

void check_target(std::span<const double> probs, int target) {
  if (target < 0 || static_cast<std::size_t>(target) >= probs.size())
    throw std::invalid_argument("target index " + std::to_string(target) + " outside [0, " +
                                std::to_string(probs.size()) + ")");
}

double clamp_prob(double p) { return std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon); }

// (1 - p)^gamma with the 0^0 = 1 convention.
double modulating_factor(double p, double gamma) { return gamma == 0.0 ? 1.0 : std::pow(1.0 - p, gamma); }

}  // namespace

double focal_loss(std::span<const double> probs, int target, double gamma, double alpha_t) {
  check_target(probs, target);
  if (!(gamma >= 0.0)) throw std::invalid_argument("focal gamma must be >= 0");
  if (!(alpha_t > 0.0)) throw std::invalid_argument("focal alpha must be > 0");
  const double p = clamp_prob(probs[static_cast<std::size_t>(target)]);
  return -alpha_t * modulating_factor(p, gamma) * std::log(p);
}

double FocalParams::alpha_for(int target) const {
  if (alpha.empty()) return 1.0;
  if (target < 0 || static_cast<std::size_t>(target) >= alpha.size())
    throw std::invalid_argument("no alpha for target " + std::to_string(target));
  return alpha[static_cast<std::size_t>(target)];
}

double focal_loss(std::span<const double> probs, int target, const FocalParams& params) {
  check_target(probs, target);
  return focal_loss(probs, target, params.gamma, params.alpha_for(target));
}

double weighted_cross_entropy(std::span<const double> probs, int target, std::span<const double> weights) {
  check_target(probs, target);
  if (static_cast<std::size_t>(target) >= weights.size())
    throw std::invalid_argument("no weight for target " + std::to_string(target));
  return focal_loss(probs, target, 0.0, weights[static_cast<std::size_t>(target)]);
}

double class_weighted_focal_loss(std::span<const double> probs, int target, std::span<const double> weights,
                                 double gamma) {
  check_target(probs, target);
  if (static_cast<std::size_t>(target) >= weights.size())
    throw std::invalid_argument("no weight for target " + std::to_string(target));
  return focal_loss(probs, target, gamma, weights[static_cast<std::size_t>(target)]);
}

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::focal: return "focal";
    case LossKind::weighted_ce: return "weighted_ce";
    case LossKind::ce: return "ce";
  }
  return "?";
}

LossKind parse_loss_kind(std::string_view name) {
  if (name == "focal") return LossKind::focal;
  if (name == "weighted_ce") return LossKind::weighted_ce;
  if (name == "ce") return LossKind::ce;
  throw ConfigError("unknown loss '" + std::string(name) + "' (expected focal, weighted_ce or ce)");
}

double LossSpec::weight_for(int target) const {
  if (kind == LossKind::ce || weights.empty()) return 1.0;
  if (target < 0 || static_cast<std::size_t>(target) >= weights.size())
    throw std::invalid_argument("no weight for target " + std::to_string(target));
  return weights[static_cast<std::size_t>(target)];
}

double loss_value(std::span<const double> probs, int target, const LossSpec& spec) {
  check_target(probs, target);
  const double gamma = spec.kind == LossKind::focal ? spec.gamma : 0.0;
  return focal_loss(probs, target, gamma, spec.weight_for(target));
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax of an empty vector");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (p[i] = std::exp(logits[i] - mx));
  for (double& v : p) v /= z;
  return p;
}

double loss_from_logits(std::span<const double> logits, int target, const LossSpec& spec) {
  return loss_value(softmax(logits), target, spec);
}

std::vector<double> loss_gradient(std::span<const double> logits, int target, const LossSpec& spec) {
  for (double z : logits)
    if (!std::isfinite(z)) throw std::invalid_argument("non-finite logit");
  const std::vector<double> p = softmax(logits);
  check_target(p, target);
  const double gamma = spec.kind == LossKind::focal ? spec.gamma : 0.0;
  if (!(gamma >= 0.0)) throw std::invalid_argument("focal gamma must be >= 0");
  const double alpha = spec.weight_for(target);
  const double pt = p[static_cast<std::size_t>(target)];

  std::vector<double> grad(p.size(), 0.0);
  // Inside the clamp region the loss is constant in p_t.
  if (pt < kProbEpsilon || pt > 1.0 - kProbEpsilon) return grad;

  // dL/dp_t = alpha * [gamma (1-p)^(gamma-1) log p - (1-p)^gamma / p]
  const double one_minus = 1.0 - pt;
  double dl_dpt = -modulating_factor(pt, gamma) / pt;
  if (gamma != 0.0) dl_dpt += gamma * std::pow(one_minus, gamma - 1.0) * std::log(pt);
  dl_dpt *= alpha;
  // dp_t/dz_j = p_t (delta_tj - p_j)
  for (std::size_t j = 0; j < p.size(); ++j) {
    const double delta = j == static_cast<std::size_t>(target) ? 1.0 : 0.0;
    grad[j] = dl_dpt * pt * (delta - p[j]);
  }
  return grad;
}

double batch_mean(std::span<const double> per_sample) {
  if (per_sample.empty()) throw std::invalid_argument("mean of an empty batch");
  return std::accumulate(per_sample.begin(), per_sample.end(), 0.0) / static_cast<double>(per_sample.size());
}

}  // namespace derm
