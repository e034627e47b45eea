#pragma once

// Iterative minimizers of the two fusion objectives. They only evaluate the
// objectives and their gradients, never the closed forms in fusion.hpp, so
// they serve as independent references for those closed forms.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "robustst/box.hpp"
#include "robustst/distribution.hpp"
#include "robustst/fusion.hpp"

namespace robustst::oracle {

template <typename T>
struct Result {
  T value;
  bool converged = false;
  std::size_t iterations = 0;
  double objective = 0.0;
};

/// KL(q||p1) + alpha KL(q||p2) with q, p1, p2 given as probability vectors.
inline double categorical_objective(const std::vector<double>& q, const std::vector<double>& p1,
                                    const std::vector<double>& p2, double alpha) {
  double s = 0.0;
  for (std::size_t k = 0; k < q.size(); ++k) {
    if (q[k] <= 0.0) continue;
    s += q[k] * (std::log(q[k] / p1[k]) + alpha * std::log(q[k] / p2[k]));
  }
  return s;
}

/// Descent on the unconstrained logits of q (softmax keeps q on the simplex). The logit
/// gradient q_k (g_k - E_q[g]) is preconditioned by 1/q_k, which keeps classes with tiny
/// mass from stalling. Steps of `step_size` are halved until the objective does not rise
/// by more than rounding noise.
inline Result<CategoricalDistribution> minimize_categorical(const CategoricalDistribution& p1,
                                                           const CategoricalDistribution& p2, double alpha,
                                                           std::size_t max_steps = 10000,
                                                           double step_size = 0.5) {
  require_same_size(p1, p2, "oracle::minimize_categorical");
  require_alpha(alpha, "oracle::minimize_categorical");
  const auto a = p1.probabilities();
  const auto b = p2.probabilities();
  const std::size_t n = a.size();
  // Scaled by 1/(1 + alpha) so one step size suits every alpha.
  auto objective = [&](const std::vector<double>& q) { return categorical_objective(q, a, b, alpha) / (1.0 + alpha); };
  auto direction = [&](const std::vector<double>& q) {
    std::vector<double> g(n);
    for (std::size_t k = 0; k < n; ++k) {
      g[k] = (std::log(q[k]) + 1.0) - (std::log(a[k]) + alpha * std::log(b[k])) / (1.0 + alpha);
    }
    double mean_g = 0.0;
    for (std::size_t k = 0; k < n; ++k) mean_g += q[k] * g[k];
    for (double& v : g) v -= mean_g;
    return g;
  };

  std::vector<double> theta(n, 0.0);
  std::vector<double> q = softmax(theta);
  double f = objective(q);
  Result<CategoricalDistribution> out;
  for (std::size_t it = 0; it < max_steps; ++it) {
    const std::vector<double> d = direction(q);
    double dmax = 0.0;
    for (double v : d) dmax = std::max(dmax, std::abs(v));
    if (dmax < 1e-12) {
      out.converged = true;
      break;
    }
    const double slack = 8.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(f));
    double step = step_size;
    std::vector<double> next(n), q_next;
    double f_next = 0.0;
    bool accepted = false;
    for (int tries = 0; tries < 60 && !accepted; ++tries) {
      for (std::size_t k = 0; k < n; ++k) next[k] = theta[k] - step * d[k];
      q_next = softmax(next);
      f_next = objective(q_next);
      accepted = f_next <= f + slack;
      step *= 0.5;
    }
    out.iterations = it + 1;
    if (!accepted) break;
    theta = std::move(next);
    q = std::move(q_next);
    f = f_next;
  }
  out.objective = f * (1.0 + alpha);
  out.value = CategoricalDistribution(theta);
  return out;
}

/// KL(N(m, sigma I) || N(mu1, sigma I)) + alpha KL(N(m, sigma I) || N(mu2, sigma I)).
inline double gaussian_objective(const std::array<double, 4>& m, const std::array<double, 4>& mu1,
                                 const std::array<double, 4>& mu2, double alpha, double sigma) {
  double d1 = 0.0, d2 = 0.0;
  for (std::size_t j = 0; j < 4; ++j) {
    d1 += (m[j] - mu1[j]) * (m[j] - mu1[j]);
    d2 += (m[j] - mu2[j]) * (m[j] - mu2[j]);
  }
  return (d1 + alpha * d2) / (2.0 * sigma);
}

/// Gradient descent on the mean of q, with step 1/(2L) for the objective's Lipschitz constant L.
inline Result<BoundingBox> minimize_gaussian(const BoundingBox& mu1, const BoundingBox& mu2, double alpha,
                                             double sigma, std::size_t max_steps = 10000) {
  require_alpha(alpha, "oracle::minimize_gaussian");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ParameterError("oracle::minimize_gaussian: sigma must be > 0");
  const auto a = mu1.as_array();
  const auto b = mu2.as_array();
  const double lipschitz = (1.0 + alpha) / sigma;
  const double step = 0.5 / lipschitz;

  std::array<double, 4> m = a;
  Result<BoundingBox> out;
  double f = gaussian_objective(m, a, b, alpha, sigma);
  for (std::size_t it = 0; it < max_steps; ++it) {
    double gmax = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      const double g = ((m[j] - a[j]) + alpha * (m[j] - b[j])) / sigma;
      m[j] -= step * g;
      gmax = std::max(gmax, std::abs(g * step) / std::max(1.0, std::abs(m[j])));
    }
    const double f_next = gaussian_objective(m, a, b, alpha, sigma);
    out.iterations = it + 1;
    const double decrease = f - f_next;
    f = f_next;
    if (gmax < 1e-15 || (decrease <= 0.0 && gmax < 1e-12)) {
      out.converged = true;
      break;
    }
  }
  out.objective = f;
  out.value = BoundingBox::from_array(m);
  return out;
}

}  // namespace robustst::oracle
