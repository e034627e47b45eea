#pragma once

// KL-regularized fusion of two predictive distributions.
//
// Minimizing KL(q || p1) + alpha * KL(q || p2) over q gives the weighted
// geometric mean q ~ (p1 * p2^alpha)^(1 / (alpha + 1)). For softmax categoricals
// that is the softmax of the weighted mean of the logits; for Normals with a
// shared covariance it is the Normal at the weighted mean of the means.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "robustst/box.hpp"
#include "robustst/distribution.hpp"
#include "robustst/errors.hpp"

namespace robustst {

inline void require_alpha(double alpha, const char* what) {
  if (!std::isfinite(alpha) || alpha < 0.0) {
    throw ParameterError(std::string(what) + ": alpha must be finite and >= 0, got " + std::to_string(alpha));
  }
}

/// KL(p || q) = sum_k p_k log(p_k / q_k), evaluated through log-softmax.
inline double kl_categorical(const CategoricalDistribution& p, const CategoricalDistribution& q) {
  require_same_size(p, q, "kl_categorical");
  const auto lp = p.log_probabilities();
  const auto lq = q.log_probabilities();
  double s = 0.0;
  for (std::size_t k = 0; k < lp.size(); ++k) {
    const double pk = std::exp(lp[k]);
    if (pk > 0.0) s += pk * (lp[k] - lq[k]);
  }
  return s > 0.0 ? s : 0.0;
}

/// Closed-form minimizer of KL(q||p1) + alpha KL(q||p2): logits (l1 + alpha l2) / (1 + alpha).
inline CategoricalDistribution fuse_categorical(const CategoricalDistribution& p1,
                                                const CategoricalDistribution& p2, double alpha) {
  require_same_size(p1, p2, "fuse_categorical");
  require_alpha(alpha, "fuse_categorical");
  if (alpha == 0.0) return p1;
  const auto& l1 = p1.logits();
  const auto& l2 = p2.logits();
  std::vector<double> out(l1.size());
  const double inv = 1.0 / (1.0 + alpha);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = (l1[k] + alpha * l2[k]) * inv;
  return CategoricalDistribution(std::move(out));
}

/// Probability-space route to the same fusion: normalized (p1 * p2^alpha)^(1/(alpha+1)).
/// Kept as a cross-check of the logit form. Works on log p so that p2^alpha cannot underflow.
inline std::vector<double> geometric_mean_probabilities(std::span<const double> p1, std::span<const double> p2,
                                                        double alpha) {
  if (p1.size() != p2.size()) throw DimensionError("geometric_mean_probabilities: length mismatch");
  require_alpha(alpha, "geometric_mean_probabilities");
  std::vector<double> out(p1.size());
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < p1.size(); ++k) {
    const double pull = alpha == 0.0 ? 0.0 : alpha * std::log(p2[k]);
    out[k] = (std::log(p1[k]) + pull) / (alpha + 1.0);
    m = std::max(m, out[k]);
  }
  double z = 0.0;
  for (double& v : out) {
    v = std::exp(v - m);
    z += v;
  }
  for (double& v : out) v /= z;
  return out;
}

/// Mean of the fused Normal: (current + alpha * initial) / (alpha + 1), per coordinate.
inline BoundingBox fuse_box(const BoundingBox& current, const BoundingBox& initial, double alpha) {
  require_valid(current, "fuse_box");
  require_valid(initial, "fuse_box");
  require_alpha(alpha, "fuse_box");
  const double inv = 1.0 / (alpha + 1.0);
  return {(current.x + alpha * initial.x) * inv, (current.y + alpha * initial.y) * inv,
          (current.w + alpha * initial.w) * inv, (current.h + alpha * initial.h) * inv};
}

inline GaussianBox fuse_gaussian(const GaussianBox& current, const GaussianBox& initial, double alpha) {
  if (current.sigma != initial.sigma) throw ParameterError("fuse_gaussian: covariances must match");
  return GaussianBox(fuse_box(current.mean, initial.mean, alpha), current.sigma);
}

/// Linear annealing from alpha_start to alpha_end over [0, anneal_steps], constant afterwards.
struct AlphaSchedule {
  double alpha_start = 100.0;
  double alpha_end = 0.5;
  std::int64_t anneal_steps = 2000;

  AlphaSchedule() = default;
  AlphaSchedule(double start, double end, std::int64_t steps) : alpha_start(start), alpha_end(end), anneal_steps(steps) {
    validate();
  }

  /// A schedule that returns `alpha` at every step.
  static AlphaSchedule constant(double alpha) { return AlphaSchedule(alpha, alpha, 1); }

  void validate() const {
    if (!std::isfinite(alpha_start) || alpha_start < 0.0 || !std::isfinite(alpha_end) || alpha_end < 0.0) {
      throw ParameterError("AlphaSchedule: endpoints must be finite and >= 0");
    }
    if (anneal_steps <= 0) throw ParameterError("AlphaSchedule: anneal_steps must be positive");
  }

  double at(std::int64_t step) const noexcept {
    if (step <= 0) return alpha_start;
    if (step >= anneal_steps) return alpha_end;
    const double t = static_cast<double>(step) / static_cast<double>(anneal_steps);
    return alpha_start + t * (alpha_end - alpha_start);
  }
};

inline double alpha_at(const AlphaSchedule& schedule, std::int64_t step) noexcept { return schedule.at(step); }

/// Target distribution with mass 1 - epsilon on `class_index` and epsilon / C on each other entry.
inline CategoricalDistribution softened_one_hot(std::size_t class_index, double epsilon, std::size_t num_foreground) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) {
    throw ParameterError("softened_one_hot: epsilon must be in (0, 1), got " + std::to_string(epsilon));
  }
  if (num_foreground == 0) throw ParameterError("softened_one_hot: need at least one foreground class");
  if (class_index > num_foreground) {
    throw ParameterError("softened_one_hot: class index " + std::to_string(class_index) + " out of range");
  }
  std::vector<double> p(num_foreground + 1, epsilon / static_cast<double>(num_foreground));
  p[class_index] = 1.0 - epsilon;
  return CategoricalDistribution::from_probabilities(p);
}

}  // namespace robustst
