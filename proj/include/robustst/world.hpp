#pragma once

// Synthetic detection world with a parametric source -> target domain shift.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "robustst/box.hpp"
#include "robustst/errors.hpp"
#include "robustst/scene.hpp"

namespace robustst {

struct DomainShift {
  /// When non-empty (length F), added to every prototype. Otherwise each prototype
  /// moves by `prototype_shift` in L2 along its own seeded random direction.
  std::vector<double> prototype_shift_vector;
  double prototype_shift = 0.0;
  std::uint64_t direction_seed = 7;
  double extra_noise = 0.0;
  double size_scale = 1.0;

  bool operator==(const DomainShift&) const = default;
};

struct WorldConfig {
  int scene_width = 32;
  int scene_height = 32;
  int feature_dim = 8;
  int num_classes = 3;
  int objects_min = 1;
  int objects_max = 4;
  std::vector<std::vector<double>> class_prototypes = default_prototypes();
  double appearance_noise = 0.5;
  double background_level = 0.5;
  double size_min = 4.0;
  double size_max = 10.0;
  DomainShift domain_shift;

  static std::vector<std::vector<double>> default_prototypes() {
    return {{1.5, 1.5, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0},
            {0.0, 1.5, 1.5, 0.0, 0.0, 0.5, 0.0, 0.0},
            {0.0, 0.0, 1.5, 1.5, 0.0, 0.0, 0.5, 0.0}};
  }

  void validate() const {
    if (scene_width <= 0 || scene_height <= 0) throw ConfigError("world.scene_width", "scene dimensions must be positive");
    if (feature_dim <= 0) throw ConfigError("world.feature_dim", "must be positive");
    if (num_classes <= 0) throw ConfigError("world.num_classes", "must be positive");
    if (objects_min < 0 || objects_max < objects_min) throw ConfigError("world.objects_per_scene", "need 0 <= min <= max");
    if (static_cast<int>(class_prototypes.size()) != num_classes) {
      throw ConfigError("world.class_prototypes", "need one prototype per class");
    }
    for (std::size_t i = 0; i < class_prototypes.size(); ++i) {
      if (static_cast<int>(class_prototypes[i].size()) != feature_dim) {
        throw ConfigError("world.class_prototypes", "prototype " + std::to_string(i) + " has wrong length");
      }
      for (std::size_t j = 0; j < i; ++j) {
        if (class_prototypes[i] == class_prototypes[j]) {
          throw ConfigError("world.class_prototypes", "prototypes must be pairwise distinct");
        }
      }
    }
    if (!(appearance_noise >= 0.0)) throw ConfigError("world.appearance_noise", "must be >= 0");
    if (!(background_level >= 0.0)) throw ConfigError("world.background_level", "must be >= 0");
    if (!(size_min >= 1.0) || size_max < size_min) throw ConfigError("world.object_size_range", "need 1 <= min <= max");
    if (std::ceil(size_min) > std::min(scene_width, scene_height)) {
      throw ConfigError("world.object_size_range", "objects do not fit in the scene");
    }
    if (!domain_shift.prototype_shift_vector.empty() &&
        static_cast<int>(domain_shift.prototype_shift_vector.size()) != feature_dim) {
      throw ConfigError("world.domain_shift.prototype_shift", "vector must have feature_dim entries");
    }
    if (!(domain_shift.prototype_shift >= 0.0)) throw ConfigError("world.domain_shift.prototype_shift", "must be >= 0");
    if (!(domain_shift.extra_noise >= 0.0)) throw ConfigError("world.domain_shift.extra_noise", "must be >= 0");
    if (!(domain_shift.size_scale > 0.0)) throw ConfigError("world.domain_shift.size_scale", "must be > 0");
  }

  bool operator==(const WorldConfig&) const = default;
};

enum class DomainTag { source, target };

inline const char* to_string(DomainTag t) noexcept { return t == DomainTag::source ? "source" : "target"; }

struct SampledScene {
  Scene scene;
  std::vector<Annotation> annotations;
  int placement_failures = 0;
};

inline constexpr int kPlacementTries = 100;
inline constexpr double kMaxObjectOverlap = 0.3;

/// Background ~ N(0, background_level); objects are integer-aligned rectangles filled with
/// prototype + N(0, appearance_noise), kept at pairwise IoU < 0.3.
inline SampledScene sample_scene(const WorldConfig& config, Rng& rng) {
  SampledScene out;
  out.scene = Scene(config.scene_width, config.scene_height, config.feature_dim);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (double& v : out.scene.features) v = config.background_level * unit(rng);

  std::uniform_int_distribution<int> count_dist(config.objects_min, config.objects_max);
  std::uniform_int_distribution<int> class_dist(1, config.num_classes);
  const int lo = static_cast<int>(std::ceil(config.size_min));
  const int hi = std::max(lo, static_cast<int>(std::floor(config.size_max)));
  const int n_objects = count_dist(rng);
  for (int n = 0; n < n_objects; ++n) {
    const int cls = class_dist(rng);
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementTries && !placed; ++attempt) {
      const int w = std::min(std::uniform_int_distribution<int>(lo, hi)(rng), config.scene_width);
      const int h = std::min(std::uniform_int_distribution<int>(lo, hi)(rng), config.scene_height);
      const int x = std::uniform_int_distribution<int>(0, config.scene_width - w)(rng);
      const int y = std::uniform_int_distribution<int>(0, config.scene_height - h)(rng);
      const BoundingBox box{static_cast<double>(x), static_cast<double>(y), static_cast<double>(w),
                            static_cast<double>(h)};
      const bool clear = std::all_of(out.annotations.begin(), out.annotations.end(),
                                     [&](const Annotation& a) { return iou(a.box, box) < kMaxObjectOverlap; });
      if (!clear) continue;
      const auto& proto = config.class_prototypes[static_cast<std::size_t>(cls - 1)];
      for (int r = y; r < y + h; ++r) {
        for (int c = x; c < x + w; ++c) {
          auto cell = out.scene.cell(r, c);
          for (std::size_t k = 0; k < cell.size(); ++k) cell[k] = proto[k] + config.appearance_noise * unit(rng);
        }
      }
      out.annotations.push_back({cls, box, std::nullopt, std::nullopt});
      placed = true;
    }
    if (!placed) ++out.placement_failures;
  }
  return out;
}

/// Target-domain config: shifted prototypes, extra appearance noise, scaled object sizes.
inline WorldConfig apply_domain_shift(const WorldConfig& config) {
  WorldConfig t = config;
  const DomainShift& s = config.domain_shift;
  if (!s.prototype_shift_vector.empty()) {
    for (auto& p : t.class_prototypes)
      for (std::size_t k = 0; k < p.size(); ++k) p[k] += s.prototype_shift_vector[k];
  } else if (s.prototype_shift > 0.0) {
    Rng rng(s.direction_seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    for (auto& p : t.class_prototypes) {
      std::vector<double> dir(p.size());
      double norm = 0.0;
      for (double& d : dir) {
        d = unit(rng);
        norm += d * d;
      }
      norm = std::sqrt(norm);
      for (std::size_t k = 0; k < p.size(); ++k) p[k] += s.prototype_shift * dir[k] / norm;
    }
  }
  t.appearance_noise += s.extra_noise;
  t.size_min *= s.size_scale;
  t.size_max *= s.size_scale;
  return t;
}

struct LabeledDataset {
  WorldConfig config;  // the config the scenes were drawn from (already shifted for target data)
  DomainTag domain = DomainTag::source;
  std::uint64_t seed = 0;
  std::vector<Scene> scenes;
  std::vector<std::vector<Annotation>> annotations;
  int placement_failures = 0;

  std::size_t size() const noexcept { return scenes.size(); }
  bool operator==(const LabeledDataset& o) const {
    return config == o.config && domain == o.domain && seed == o.seed && scenes == o.scenes &&
           annotations == o.annotations;
  }
};

/// Deterministic in (config, seed): scene i is the i-th draw from one seeded stream.
inline LabeledDataset generate_dataset(const WorldConfig& config, std::size_t n_scenes, std::uint64_t seed,
                                       DomainTag domain = DomainTag::source) {
  if (n_scenes == 0) throw ParameterError("generate_dataset: n_scenes must be positive");
  config.validate();
  LabeledDataset ds;
  ds.config = config;
  ds.domain = domain;
  ds.seed = seed;
  ds.scenes.reserve(n_scenes);
  ds.annotations.reserve(n_scenes);
  Rng rng(seed);
  for (std::size_t i = 0; i < n_scenes; ++i) {
    SampledScene s = sample_scene(config, rng);
    ds.placement_failures += s.placement_failures;
    ds.scenes.push_back(std::move(s.scene));
    ds.annotations.push_back(std::move(s.annotations));
  }
  return ds;
}

}  // namespace robustst
