#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace derm {

// Probabilities are clamped to [kProbEpsilon, 1 - kProbEpsilon] before log.
inline constexpr double kProbEpsilon = 1e-7;
inline constexpr double kDefaultGamma = 2.0;

// Focal loss  -alpha_t * (1 - p_t)^gamma * log(p_t)  for one sample.
// `probs` must lie on the simplex; throws std::invalid_argument for a target
// outside [0, probs.size()), gamma < 0 or alpha_t <= 0.
double focal_loss(std::span<const double> probs, int target, double gamma, double alpha_t);

struct FocalParams {
  double gamma = kDefaultGamma;
  std::vector<double> alpha;  // per class; empty means 1 for every class

  double alpha_for(int target) const;
};

double focal_loss(std::span<const double> probs, int target, const FocalParams& params);

// -w_target * log(p_t)
double weighted_cross_entropy(std::span<const double> probs, int target, std::span<const double> weights);

// Focal loss with alpha_t taken from the class-weight vector.
double class_weighted_focal_loss(std::span<const double> probs, int target, std::span<const double> weights,
                                 double gamma);

enum class LossKind { focal, weighted_ce, ce };

std::string_view to_string(LossKind kind);
LossKind parse_loss_kind(std::string_view name);

// Everything the trainer needs to evaluate one of the three losses.
// `weights` empty means unit weights; `ce` ignores them.
struct LossSpec {
  LossKind kind = LossKind::focal;
  double gamma = kDefaultGamma;
  std::vector<double> weights;

  double weight_for(int target) const;
};

// Loss of a probability vector under the given spec.
double loss_value(std::span<const double> probs, int target, const LossSpec& spec);

// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> logits);

// Loss evaluated on logits: loss_value(softmax(logits)).
double loss_from_logits(std::span<const double> logits, int target, const LossSpec& spec);

// Closed-form gradient of loss_from_logits with respect to the logits.
// Throws std::invalid_argument on non-finite logits.
std::vector<double> loss_gradient(std::span<const double> logits, int target, const LossSpec& spec);

// Arithmetic mean of per-sample losses.
double batch_mean(std::span<const double> per_sample);

}  // namespace derm
