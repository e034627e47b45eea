#pragma once

// Randomized agreement checks between the closed-form fusions and the iterative minimizers.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "robustst/distribution.hpp"
#include "robustst/fusion.hpp"
#include "robustst/oracle.hpp"
#include "robustst/scene.hpp"

namespace robustst {

struct CategoricalTrial {
  CategoricalDistribution p1, p2;
  double alpha = 0.0;
};

struct GaussianTrial {
  BoundingBox mu1, mu2;
  double alpha = 0.0;
};

/// p1, p2 with 2..8 classes and N(0, 2) logits; alpha uniform on [0, 100].
inline std::vector<CategoricalTrial> random_categorical_trials(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<int> classes(2, 8);
  std::normal_distribution<double> logit(0.0, 2.0);
  std::uniform_real_distribution<double> alpha(0.0, 100.0);
  std::vector<CategoricalTrial> out;
  for (std::size_t i = 0; i < n; ++i) {
    const int k = classes(rng);
    std::vector<double> a(static_cast<std::size_t>(k)), b(static_cast<std::size_t>(k));
    for (double& v : a) v = logit(rng);
    for (double& v : b) v = logit(rng);
    out.push_back({CategoricalDistribution(a), CategoricalDistribution(b), alpha(rng)});
  }
  return out;
}

inline std::vector<GaussianTrial> random_gaussian_trials(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> pos(0.0, 30.0);
  std::uniform_real_distribution<double> ext(0.5, 12.0);
  std::uniform_real_distribution<double> alpha(0.0, 100.0);
  std::vector<GaussianTrial> out;
  for (std::size_t i = 0; i < n; ++i) {
    GaussianTrial t;
    t.mu1 = {pos(rng), pos(rng), ext(rng), ext(rng)};
    t.mu2 = {pos(rng), pos(rng), ext(rng), ext(rng)};
    t.alpha = alpha(rng);
    out.push_back(t);
  }
  return out;
}

struct TheoremCheck {
  std::size_t trials = 0;
  double max_categorical_tv = 0.0;
  std::size_t worst_categorical = 0;
  double max_gaussian_error = 0.0;  // max |fuse_box - oracle| over coordinates, trials and sigmas
  std::size_t worst_gaussian = 0;
  double worst_gaussian_sigma = 0.0;
  double max_sigma_spread = 0.0;    // max |fuse_gaussian(sigma) - fuse_gaussian(sigma')| over coordinates
  bool oracles_converged = true;
  double categorical_seconds = 0.0;
  double gaussian_seconds = 0.0;
};

inline constexpr double kCheckSigmas[] = {0.1, 1.0, 10.0};

inline TheoremCheck verify_theorems(std::size_t trials, std::uint64_t seed = 0) {
  TheoremCheck r;
  r.trials = trials;
  auto now = [] { return std::chrono::steady_clock::now(); };
  auto secs = [](auto a, auto b) { return std::chrono::duration<double>(b - a).count(); };

  const auto t0 = now();
  const auto cats = random_categorical_trials(trials, seed);
  for (std::size_t i = 0; i < cats.size(); ++i) {
    const auto& t = cats[i];
    const auto ref = oracle::minimize_categorical(t.p1, t.p2, t.alpha);
    r.oracles_converged = r.oracles_converged && ref.converged;
    const double tv = tv_distance(fuse_categorical(t.p1, t.p2, t.alpha), ref.value);
    if (tv > r.max_categorical_tv || i == 0) {
      r.max_categorical_tv = tv;
      r.worst_categorical = i;
    }
  }
  const auto t1 = now();
  r.categorical_seconds = secs(t0, t1);

  const auto gauss = random_gaussian_trials(trials, seed + 1);
  for (std::size_t i = 0; i < gauss.size(); ++i) {
    const auto& t = gauss[i];
    const auto closed = fuse_box(t.mu1, t.mu2, t.alpha).as_array();
    std::vector<std::array<double, 4>> per_sigma;
    for (double sigma : kCheckSigmas) {
      const auto ref = oracle::minimize_gaussian(t.mu1, t.mu2, t.alpha, sigma);
      r.oracles_converged = r.oracles_converged && ref.converged;
      const auto m = ref.value.as_array();
      for (std::size_t j = 0; j < 4; ++j) {
        const double e = std::abs(closed[j] - m[j]);
        if (e > r.max_gaussian_error) {
          r.max_gaussian_error = e;
          r.worst_gaussian = i;
          r.worst_gaussian_sigma = sigma;
        }
      }
      per_sigma.push_back(
          fuse_gaussian(GaussianBox(t.mu1, sigma), GaussianBox(t.mu2, sigma), t.alpha).mean.as_array());
    }
    for (const auto& a : per_sigma)
      for (const auto& b : per_sigma)
        for (std::size_t j = 0; j < 4; ++j) r.max_sigma_spread = std::max(r.max_sigma_spread, std::abs(a[j] - b[j]));
  }
  r.gaussian_seconds = secs(t1, now());
  return r;
}

}  // namespace robustst
