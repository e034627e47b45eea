#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "robustst/box.hpp"
#include "robustst/errors.hpp"

namespace robustst {

/// Numerically stable softmax of a logit vector.
inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = std::exp(logits[k] - m);
    z += out[k];
  }
  for (double& v : out) v /= z;
  return out;
}

inline std::vector<double> log_softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - m);
  const double lse = m + std::log(z);
  for (std::size_t k = 0; k < logits.size(); ++k) out[k] = logits[k] - lse;
  return out;
}

/// Categorical distribution over background (index 0) and C foreground classes,
/// stored as unnormalized logits.
class CategoricalDistribution {
 public:
  CategoricalDistribution() = default;
  explicit CategoricalDistribution(std::vector<double> logits) : logits_(std::move(logits)) {}

  /// Builds a distribution whose softmax reproduces `probs`. Zero entries map to -inf logits.
  static CategoricalDistribution from_probabilities(std::span<const double> probs) {
    std::vector<double> l(probs.size());
    for (std::size_t k = 0; k < probs.size(); ++k) {
      if (!(probs[k] >= 0.0)) throw ParameterError("from_probabilities: negative probability");
      l[k] = probs[k] > 0.0 ? std::log(probs[k]) : -std::numeric_limits<double>::infinity();
    }
    return CategoricalDistribution(std::move(l));
  }

  static CategoricalDistribution uniform(std::size_t size) {
    return CategoricalDistribution(std::vector<double>(size, 0.0));
  }

  std::size_t size() const noexcept { return logits_.size(); }
  const std::vector<double>& logits() const noexcept { return logits_; }
  std::vector<double> probabilities() const { return softmax(logits_); }
  std::vector<double> log_probabilities() const { return log_softmax(logits_); }

  std::size_t argmax() const noexcept {
    return static_cast<std::size_t>(std::max_element(logits_.begin(), logits_.end()) - logits_.begin());
  }

 private:
  std::vector<double> logits_;
};

/// Isotropic Normal model of a box location: N(mean, sigma * I).
struct GaussianBox {
  BoundingBox mean;
  double sigma = 1.0;

  GaussianBox() = default;
  GaussianBox(BoundingBox m, double s) : mean(m), sigma(s) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ParameterError("GaussianBox: sigma must be > 0");
  }
};

inline void require_same_size(const CategoricalDistribution& a, const CategoricalDistribution& b,
                              const char* what) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(what) + ": length mismatch (" + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + ")");
  }
}

/// Total variation distance: half the L1 distance between probability vectors.
inline double tv_distance(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw DimensionError("tv_distance: length mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) s += std::abs(p[k] - q[k]);
  return 0.5 * s;
}

inline double tv_distance(const CategoricalDistribution& p, const CategoricalDistribution& q) {
  require_same_size(p, q, "tv_distance");
  const auto pp = p.probabilities();
  const auto qq = q.probabilities();
  return tv_distance(pp, qq);
}

}  // namespace robustst
