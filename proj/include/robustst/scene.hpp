#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "robustst/box.hpp"
#include "robustst/distribution.hpp"
#include "robustst/errors.hpp"

namespace robustst {

/// All randomness in the library flows through explicitly seeded engines of this type.
using Rng = std::mt19937_64;

/// A synthetic image: a height x width grid of F-dimensional feature cells, row-major.
struct Scene {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> features;

  Scene() = default;
  Scene(int w, int h, int f) : width(w), height(h), channels(f), features(static_cast<std::size_t>(w * h * f), 0.0) {
    if (w <= 0 || h <= 0 || f <= 0) throw ParameterError("Scene: dimensions must be positive");
  }

  std::span<double> cell(int row, int col) noexcept {
    return {features.data() + (static_cast<std::size_t>(row) * width + col) * channels,
            static_cast<std::size_t>(channels)};
  }
  std::span<const double> cell(int row, int col) const noexcept {
    return {features.data() + (static_cast<std::size_t>(row) * width + col) * channels,
            static_cast<std::size_t>(channels)};
  }

  bool finite() const noexcept {
    for (double v : features)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Scene&, const Scene&) = default;
};

/// Ground-truth or mined object. Class 0 is background and only appears on mined negatives.
struct Annotation {
  int class_index = 0;
  BoundingBox box;
  std::optional<CategoricalDistribution> soft_label;
  std::optional<BoundingBox> box_target_initial;
};

inline bool operator==(const Annotation& a, const Annotation& b) {
  auto same_soft = [&] {
    if (a.soft_label.has_value() != b.soft_label.has_value()) return false;
    return !a.soft_label || a.soft_label->logits() == b.soft_label->logits();
  };
  return a.class_index == b.class_index && a.box == b.box && same_soft() &&
         a.box_target_initial == b.box_target_initial;
}

/// Index range of the cells whose centres (c + 0.5) lie in the half-open interval [lo, lo + extent).
struct CellRange {
  int begin = 0;
  int end = 0;  // exclusive
  bool empty() const noexcept { return end <= begin; }
};

inline CellRange cells_with_centres_in(double lo, double extent, int limit) noexcept {
  int b = static_cast<int>(std::ceil(lo - 0.5));
  int e = static_cast<int>(std::ceil(lo + extent - 0.5));
  b = std::max(b, 0);
  e = std::min(e, limit);
  return {b, e};
}

/// Mean of the feature vectors of all cells whose centres fall inside `box`;
/// the single cell nearest the box centre when none does.
inline std::vector<double> roi_pool(const Scene& scene, const BoundingBox& box) {
  if (!(box.w > 0.0) || !(box.h > 0.0)) throw ParameterError("roi_pool: zero-area box");
  std::vector<double> out(static_cast<std::size_t>(scene.channels), 0.0);
  const CellRange cols = cells_with_centres_in(box.x, box.w, scene.width);
  const CellRange rows = cells_with_centres_in(box.y, box.h, scene.height);
  if (cols.empty() || rows.empty()) {
    const int c = std::clamp(static_cast<int>(std::floor(box.center_x())), 0, scene.width - 1);
    const int r = std::clamp(static_cast<int>(std::floor(box.center_y())), 0, scene.height - 1);
    const auto f = scene.cell(r, c);
    std::copy(f.begin(), f.end(), out.begin());
    return out;
  }
  for (int r = rows.begin; r < rows.end; ++r) {
    for (int c = cols.begin; c < cols.end; ++c) {
      const auto f = scene.cell(r, c);
      for (std::size_t k = 0; k < out.size(); ++k) out[k] += f[k];
    }
  }
  const double n = static_cast<double>((rows.end - rows.begin) * (cols.end - cols.begin));
  for (double& v : out) v /= n;
  return out;
}

/// Summed-area table over a scene; pools any box in O(F) with the same cell rule as roi_pool.
class IntegralFeatures {
 public:
  explicit IntegralFeatures(const Scene& scene)
      : width_(scene.width), height_(scene.height), channels_(scene.channels), scene_(&scene),
        table_(static_cast<std::size_t>((scene.width + 1) * (scene.height + 1) * scene.channels), 0.0) {
    for (int r = 0; r < height_; ++r) {
      for (int c = 0; c < width_; ++c) {
        const auto f = scene.cell(r, c);
        for (int k = 0; k < channels_; ++k) {
          at(r + 1, c + 1, k) = f[static_cast<std::size_t>(k)] + at(r, c + 1, k) + at(r + 1, c, k) - at(r, c, k);
        }
      }
    }
  }

  struct Sum {
    std::vector<double> sum;
    int count = 0;
  };

  /// Feature sum and cell count over the cells whose centres fall inside `box` (count may be 0).
  Sum pool_sum(const BoundingBox& box) const {
    Sum out{std::vector<double>(static_cast<std::size_t>(channels_), 0.0), 0};
    const CellRange cols = cells_with_centres_in(box.x, box.w, width_);
    const CellRange rows = cells_with_centres_in(box.y, box.h, height_);
    if (cols.empty() || rows.empty()) return out;
    out.count = (rows.end - rows.begin) * (cols.end - cols.begin);
    for (int k = 0; k < channels_; ++k) {
      out.sum[static_cast<std::size_t>(k)] = at(rows.end, cols.end, k) - at(rows.begin, cols.end, k) -
                                             at(rows.end, cols.begin, k) + at(rows.begin, cols.begin, k);
    }
    return out;
  }

  std::vector<double> pool(const BoundingBox& box) const {
    if (!(box.w > 0.0) || !(box.h > 0.0)) throw ParameterError("roi_pool: zero-area box");
    const CellRange cols = cells_with_centres_in(box.x, box.w, width_);
    const CellRange rows = cells_with_centres_in(box.y, box.h, height_);
    if (cols.empty() || rows.empty()) return roi_pool(*scene_, box);
    std::vector<double> out(static_cast<std::size_t>(channels_));
    const double n = static_cast<double>((rows.end - rows.begin) * (cols.end - cols.begin));
    for (int k = 0; k < channels_; ++k) {
      const double s = at(rows.end, cols.end, k) - at(rows.begin, cols.end, k) - at(rows.end, cols.begin, k) +
                       at(rows.begin, cols.begin, k);
      out[static_cast<std::size_t>(k)] = s / n;
    }
    return out;
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }

 private:
  double& at(int r, int c, int k) {
    return table_[(static_cast<std::size_t>(r) * (width_ + 1) + c) * channels_ + k];
  }
  double at(int r, int c, int k) const {
    return table_[(static_cast<std::size_t>(r) * (width_ + 1) + c) * channels_ + k];
  }

  int width_, height_, channels_;
  const Scene* scene_;
  std::vector<double> table_;
};

/// Proposal descriptor fed to the detector heads: the box mean (roi_pool) followed, when
/// context_margin > 0, by the mean of the ring of cells within context_margin of the box.
struct RoiFeatureOptions {
  double context_margin = 1.0;    // absolute ring width in cells
  double context_fraction = 0.5;  // ring width relative to box extent; the larger of the two is used

  /// Box mean only (length F).
  static RoiFeatureOptions box_only() { return {0.0, 0.0}; }
};

inline std::size_t roi_feature_dim(std::size_t channels, const RoiFeatureOptions& opt) noexcept {
  return opt.context_margin > 0.0 ? 2 * channels : channels;
}

inline std::vector<double> roi_features(const IntegralFeatures& integral, const BoundingBox& box,
                                        const RoiFeatureOptions& opt) {
  std::vector<double> out = integral.pool(box);
  if (!(opt.context_margin > 0.0)) return out;
  const double mx = std::max(opt.context_margin, opt.context_fraction * box.w);
  const double my = std::max(opt.context_margin, opt.context_fraction * box.h);
  const auto inner = integral.pool_sum(box);
  const auto outer = integral.pool_sum({box.x - mx, box.y - my, box.w + 2.0 * mx, box.h + 2.0 * my});
  const int ring = outer.count - inner.count;
  out.resize(2 * static_cast<std::size_t>(integral.channels()), 0.0);
  if (ring > 0) {
    for (std::size_t k = 0; k < inner.sum.size(); ++k) {
      out[inner.sum.size() + k] = (outer.sum[k] - inner.sum[k]) / static_cast<double>(ring);
    }
  }
  return out;
}

inline std::vector<double> roi_features(const Scene& scene, const BoundingBox& box, const RoiFeatureOptions& opt) {
  return roi_features(IntegralFeatures(scene), box, opt);
}

}  // namespace robustst
