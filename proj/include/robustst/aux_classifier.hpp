#pragma once

// Auxiliary crop classifier used to rescore mined boxes. Trained on clean source
// crops and noisy target crops; the target for a noisy crop is the KL fusion of
// the classifier's current prediction with a softened one-hot of its noisy label.

#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <sstream>
#include <vector>

#include "robustst/box.hpp"
#include "robustst/detector.hpp"
#include "robustst/distribution.hpp"
#include "robustst/errors.hpp"
#include "robustst/fusion.hpp"
#include "robustst/scene.hpp"

namespace robustst {

enum class CropProvenance { source_clean, target_noisy, mined_background };

struct CropSample {
  std::vector<double> pooled_features;
  int label = 0;
  CropProvenance provenance = CropProvenance::source_clean;
};

struct AuxParams {
  Matrix weights;  // (F + 1) x (C + 1)

  std::size_t feature_dim() const noexcept { return weights.rows == 0 ? 0 : weights.rows - 1; }
  std::size_t num_outputs() const noexcept { return weights.cols; }

  static AuxParams zeros(std::size_t feature_dim, std::size_t num_foreground) {
    return {Matrix(feature_dim + 1, num_foreground + 1)};
  }
  static AuxParams random(std::size_t feature_dim, std::size_t num_foreground, Rng& rng, double scale = 0.01) {
    AuxParams p = zeros(feature_dim, num_foreground);
    std::uniform_real_distribution<double> u(-scale, scale);
    for (double& v : p.weights.data) v = u(rng);
    return p;
  }
  bool operator==(const AuxParams&) const = default;
};

inline std::vector<double> aux_logits(const AuxParams& params, std::span<const double> features) {
  if (features.size() != params.feature_dim()) throw DimensionError("aux classifier: feature length mismatch");
  const std::size_t f = params.feature_dim();
  std::vector<double> logits(params.num_outputs(), 0.0);
  for (std::size_t k = 0; k < logits.size(); ++k) {
    double s = params.weights(f, k);
    for (std::size_t i = 0; i < f; ++i) s += features[i] * params.weights(i, k);
    logits[k] = s;
  }
  return logits;
}

/// p_img: softmax of the linear logits.
inline CategoricalDistribution score(const AuxParams& params, std::span<const double> pooled_features) {
  return CategoricalDistribution(aux_logits(params, pooled_features));
}

/// Crop window for the auxiliary classifier: the box grown by `margin` cells on every side.
inline BoundingBox context_window(const BoundingBox& box, double margin, int width, int height) {
  return clamp_to_scene({box.x - margin, box.y - margin, box.w + 2.0 * margin, box.h + 2.0 * margin}, width, height);
}

struct BackgroundMiningOptions {
  int min_size = 4;
  int max_size = 10;
};

/// Rejection-samples up to `count` integer-aligned boxes with zero IoU against every known box.
inline std::vector<BoundingBox> mine_background_boxes(int width, int height, std::span<const BoundingBox> known_boxes,
                                                      std::size_t count, Rng& rng,
                                                      const BackgroundMiningOptions& options = {}) {
  std::vector<BoundingBox> out;
  const int lo = std::max(1, std::min({options.min_size, width, height}));
  const int hi_w = std::max(lo, std::min(options.max_size, width));
  const int hi_h = std::max(lo, std::min(options.max_size, height));
  for (std::size_t n = 0; n < count; ++n) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      const int w = std::uniform_int_distribution<int>(lo, hi_w)(rng);
      const int h = std::uniform_int_distribution<int>(lo, hi_h)(rng);
      const int x = std::uniform_int_distribution<int>(0, width - w)(rng);
      const int y = std::uniform_int_distribution<int>(0, height - h)(rng);
      const BoundingBox b{static_cast<double>(x), static_cast<double>(y), static_cast<double>(w),
                          static_cast<double>(h)};
      bool clear = true;
      for (const BoundingBox& k : known_boxes) {
        if (iou(b, k) > 0.0) {
          clear = false;
          break;
        }
      }
      if (clear) {
        out.push_back(b);
        break;
      }
    }
  }
  return out;
}

inline std::vector<BoundingBox> mine_background_boxes(const Scene& scene, std::span<const BoundingBox> known_boxes,
                                                      std::size_t count, Rng& rng,
                                                      const BackgroundMiningOptions& options = {}) {
  return mine_background_boxes(scene.width, scene.height, known_boxes, count, rng, options);
}

/// Training target for a noisy target crop: fuse(current prediction, softened one-hot(label), alpha).
inline CategoricalDistribution noisy_crop_target(std::span<const double> current_logits, int noisy_label,
                                                 double epsilon, double alpha, std::size_t num_foreground) {
  const CategoricalDistribution current(std::vector<double>(current_logits.begin(), current_logits.end()));
  return fuse_categorical(current, softened_one_hot(static_cast<std::size_t>(noisy_label), epsilon, num_foreground),
                          alpha);
}

struct AuxTrainOptions {
  std::size_t batch_size = 64;
};

struct AuxTrainResult {
  AuxParams params;
  double final_loss = 0.0;
  std::size_t steps = 0;
};

/// Minibatch SGD on cross-entropy. Clean and background crops use hard one-hot targets,
/// noisy target crops use noisy_crop_target with alpha = schedule.at(step).
inline AuxTrainResult train_aux(std::span<const CropSample> source_crops, std::span<const CropSample> target_crops,
                                const AlphaSchedule& schedule, double epsilon, std::size_t steps, double lr,
                                std::size_t num_foreground, Rng& rng, const AuxTrainOptions& options = {}) {
  if (source_crops.empty()) throw ParameterError("train_aux: need at least one source crop");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ParameterError("train_aux: epsilon must be in (0, 1)");
  const std::size_t f = source_crops.front().pooled_features.size();
  AuxTrainResult out;
  out.params = AuxParams::random(f, num_foreground, rng);
  const std::size_t n_total = source_crops.size() + target_crops.size();
  auto sample_at = [&](std::size_t i) -> const CropSample& {
    return i < source_crops.size() ? source_crops[i] : target_crops[i - source_crops.size()];
  };
  std::uniform_int_distribution<std::size_t> pick(0, n_total - 1);
  const std::size_t k_out = num_foreground + 1;
  const std::size_t batch = std::max<std::size_t>(1, std::min(options.batch_size, n_total));
  Matrix grad(f + 1, k_out);
  std::vector<double> target(k_out);

  for (std::size_t step = 0; step < steps; ++step) {
    std::fill(grad.data.begin(), grad.data.end(), 0.0);
    const double alpha = schedule.at(static_cast<std::int64_t>(step));
    double loss = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const CropSample& s = sample_at(pick(rng));
      const auto logits = aux_logits(out.params, s.pooled_features);
      const auto logp = log_softmax(logits);
      if (s.provenance == CropProvenance::target_noisy) {
        target = noisy_crop_target(logits, s.label, epsilon, alpha, num_foreground).probabilities();
      } else {
        std::fill(target.begin(), target.end(), 0.0);
        target[static_cast<std::size_t>(s.label)] = 1.0;
      }
      for (std::size_t k = 0; k < k_out; ++k) {
        if (target[k] > 0.0) loss -= target[k] * logp[k];
        const double d = std::exp(logp[k]) - target[k];
        for (std::size_t i = 0; i < f; ++i) grad(i, k) += s.pooled_features[i] * d;
        grad(f, k) += d;
      }
    }
    loss /= static_cast<double>(batch);
    if (!std::isfinite(loss)) {
      std::ostringstream msg;
      msg << "train_aux: non-finite loss at step " << step << " (alpha=" << alpha << ", batch " << batch << ")";
      throw NumericalError(msg.str());
    }
    const double scale = lr / static_cast<double>(batch);
    for (std::size_t i = 0; i < grad.data.size(); ++i) out.params.weights.data[i] -= scale * grad.data[i];
    out.final_loss = loss;
    out.steps = step + 1;
  }
  return out;
}

}  // namespace robustst
