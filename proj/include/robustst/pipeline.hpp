#pragma once

// Three-phase adaptation pipeline:
//   1. train the detector on source scenes and mine pseudo-labels on target scenes,
//   2. train the auxiliary crop classifier and rescore every mined box,
//   3. retrain the detector on source ground truth plus target pseudo-labels with
//      fused class targets (Cls-Cor), fused box targets (Box-R) and softened
//      background targets for target negatives (FN-Cor).
// Baselines and ablations are configurations of the same loop.

#include <algorithm>
#include <array>
#include <chrono>
#include <exception>
#include <cstdint>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "robustst/aux_classifier.hpp"
#include "robustst/detector.hpp"
#include "robustst/eval.hpp"
#include "robustst/fusion.hpp"
#include "robustst/pseudo_labels.hpp"
#include "robustst/world.hpp"

namespace robustst {

struct LearningRateSchedule {
  double initial = 0.5;
  std::int64_t drop_step = 2000;
  double dropped = 0.05;

  double at(std::int64_t step) const noexcept { return step < drop_step ? initial : dropped; }
  bool operator==(const LearningRateSchedule&) const = default;
};

struct AblationFlags {
  bool cls_cor = true;
  bool box_r = true;
  bool fn_cor = true;
  bool operator==(const AblationFlags&) const = default;
};

struct BatchMix {
  int n_source = 2;  // scenes per minibatch
  int n_target = 2;
  bool operator==(const BatchMix&) const = default;
};

/// Default experiment world: target prototypes moved by 1.5 along seeded directions,
/// appearance noise raised by 0.3.
inline WorldConfig default_shifted_world() {
  WorldConfig w;
  w.domain_shift.prototype_shift = 1.5;
  w.domain_shift.extra_noise = 0.3;
  return w;
}

struct PipelineConfig {
  WorldConfig world = default_shifted_world();
  AnchorConfig anchors;
  RoiFeatureOptions roi;
  std::size_t n_source_scenes = 200;
  std::size_t n_target_scenes = 200;
  std::size_t n_eval_scenes = 100;  // held-out target scenes used only for AP

  std::int64_t phase1_steps = 2800;
  std::int64_t phase2_steps = 1400;
  std::int64_t phase3_steps = 2800;
  LearningRateSchedule lr;
  AlphaSchedule alpha_schedule{100.0, 0.5, 2000};

  double mining_score_threshold = 0.8;
  double nms_iou = 0.3;
  double eval_score_threshold = 0.05;
  double eval_iou = 0.5;
  double epsilon_fn = 0.05;
  double epsilon_aux = 0.1;
  AblationFlags ablation;
  BatchMix batch_mix;
  int rois_per_scene = 32;
  double fg_fraction = 0.25;
  int hard_negative_count = 4;
  double reg_weight = 1.0;
  std::size_t hidden_units = 0;
  bool warm_start = false;
  bool use_phase2 = true;

  double aux_lr = 0.1;
  std::size_t aux_batch = 64;
  double aux_context = 1.0;
  int aux_backgrounds_per_scene = 2;

  double sigma = 1.0;  // box Normal scale; the fused mean does not depend on it
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  int jobs = 1;

  void validate() const {
    world.validate();
    auto unit_open = [](double v) { return v > 0.0 && v < 1.0; };
    if (!unit_open(mining_score_threshold)) throw ConfigError("method.mining_score_threshold", "must be in (0, 1)");
    if (!unit_open(nms_iou)) throw ConfigError("method.nms_iou", "must be in (0, 1)");
    if (!unit_open(eval_score_threshold)) throw ConfigError("eval.score_threshold", "must be in (0, 1)");
    if (!unit_open(eval_iou)) throw ConfigError("eval.iou", "must be in (0, 1)");
    if (!unit_open(epsilon_fn)) throw ConfigError("method.epsilon_fn", "must be in (0, 1)");
    if (!unit_open(epsilon_aux)) throw ConfigError("method.epsilon_aux", "must be in (0, 1)");
    if (!unit_open(fg_fraction)) throw ConfigError("training.fg_fraction", "must be in (0, 1)");
    if (phase1_steps <= 0) throw ConfigError("training.phase1_steps", "must be positive");
    if (phase2_steps <= 0) throw ConfigError("training.phase2_steps", "must be positive");
    if (phase3_steps <= 0) throw ConfigError("training.phase3_steps", "must be positive");
    if (n_source_scenes == 0) throw ConfigError("data.n_source_scenes", "must be positive");
    if (n_target_scenes == 0) throw ConfigError("data.n_target_scenes", "must be positive");
    if (n_eval_scenes == 0) throw ConfigError("data.n_eval_scenes", "must be positive");
    if (!(lr.initial >= 0.0) || !(lr.dropped >= 0.0)) throw ConfigError("training.lr_schedule", "rates must be >= 0");
    try {
      alpha_schedule.validate();
    } catch (const ParameterError& e) {
      throw ConfigError("method.alpha_schedule", e.what());
    }
    if (batch_mix.n_source < 0 || batch_mix.n_target < 0 || batch_mix.n_source + batch_mix.n_target == 0) {
      throw ConfigError("training.batch_mix", "need a non-negative, non-empty scene mix");
    }
    if (rois_per_scene <= 0) throw ConfigError("training.rois_per_scene", "must be positive");
    if (hard_negative_count < 0) throw ConfigError("training.hard_negative_count", "must be >= 0");
    if (!(reg_weight >= 0.0)) throw ConfigError("training.reg_weight", "must be >= 0");
    if (anchors.stride <= 0 || anchors.scales.empty() || anchors.ratios.empty()) {
      throw ConfigError("anchors", "need positive stride and at least one scale and ratio");
    }
    for (double s : anchors.scales)
      if (!(s > 0.0)) throw ConfigError("anchors.scales", "must be positive");
    for (double r : anchors.ratios)
      if (!(r > 0.0)) throw ConfigError("anchors.ratios", "must be positive");
    if (!(aux_lr > 0.0)) throw ConfigError("aux.lr", "must be positive");
    if (aux_batch == 0) throw ConfigError("aux.batch", "must be positive");
    if (!(aux_context >= 0.0)) throw ConfigError("aux.context", "must be >= 0");
    if (aux_backgrounds_per_scene < 0) throw ConfigError("aux.backgrounds_per_scene", "must be >= 0");
    if (!(roi.context_margin >= 0.0)) throw ConfigError("roi.context_margin", "must be >= 0");
    if (!(roi.context_fraction >= 0.0)) throw ConfigError("roi.context_fraction", "must be >= 0");
    if (!(sigma > 0.0)) throw ConfigError("method.sigma", "must be > 0");
    if (seeds.empty()) throw ConfigError("seeds", "need at least one seed");
    if (jobs <= 0) throw ConfigError("jobs", "must be positive");
  }
};

// ---------------------------------------------------------------------------
// Seeds

/// splitmix64 finalizer; derives independent stream seeds from (seed, stream id).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + stream + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace stream {
inline constexpr std::uint64_t source_data = 1;
inline constexpr std::uint64_t target_data = 2;
inline constexpr std::uint64_t eval_data = 3;
inline constexpr std::uint64_t phase1 = 11;
inline constexpr std::uint64_t phase2 = 12;
inline constexpr std::uint64_t phase3 = 13;
inline constexpr std::uint64_t oracle = 14;
}  // namespace stream

// ---------------------------------------------------------------------------
// Per-seed data with cached proposal features

/// Proposal-level view of one scene: pooled features for every anchor plus the
/// IoU-based assignment of anchors to reference boxes (GT or pseudo-labels).
struct SceneCache {
  std::vector<double> pooled;  // proposals x F, row-major

  struct Assignment {
    std::vector<std::size_t> positives;          // max IoU >= 0.5
    std::vector<std::size_t> positive_ref;       // index of the assigned reference box
    std::vector<std::size_t> negatives;          // max IoU < 0.3
  };
  Assignment assignment;

  std::span<const double> features(std::size_t proposal, std::size_t dim) const noexcept {
    return {pooled.data() + proposal * dim, dim};
  }
};

inline constexpr double kPositiveIou = 0.5;
inline constexpr double kNegativeIou = 0.3;

inline SceneCache::Assignment assign_proposals(std::span<const Proposal> proposals,
                                               std::span<const BoundingBox> references) {
  SceneCache::Assignment a;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    double best = 0.0;
    std::size_t best_ref = 0;
    for (std::size_t r = 0; r < references.size(); ++r) {
      const double o = iou(proposals[i].box, references[r]);
      if (o > best) {
        best = o;
        best_ref = r;
      }
    }
    if (best >= kPositiveIou) {
      a.positives.push_back(i);
      a.positive_ref.push_back(best_ref);
    } else if (best < kNegativeIou) {
      a.negatives.push_back(i);
    }
  }
  return a;
}

struct DatasetCache {
  LabeledDataset data;
  std::vector<SceneCache> scenes;
};

struct Workspace {
  const PipelineConfig* config = nullptr;
  std::uint64_t seed = 0;
  std::vector<Proposal> proposals;  // shared by every scene (fixed scene size)
  DatasetCache source;
  DatasetCache target;
  DatasetCache eval;

  /// Length of the detector's proposal descriptor.
  std::size_t feature_dim() const noexcept {
    return roi_feature_dim(static_cast<std::size_t>(config->world.feature_dim), config->roi);
  }
  std::size_t num_foreground() const noexcept { return static_cast<std::size_t>(config->world.num_classes); }
};

inline std::vector<BoundingBox> boxes_of(const std::vector<Annotation>& annotations) {
  std::vector<BoundingBox> out;
  out.reserve(annotations.size());
  for (const Annotation& a : annotations) out.push_back(a.box);
  return out;
}

inline std::vector<BoundingBox> boxes_of(const std::vector<PseudoLabel>& labels) {
  std::vector<BoundingBox> out;
  out.reserve(labels.size());
  for (const PseudoLabel& a : labels) out.push_back(a.box);
  return out;
}

inline DatasetCache build_cache(LabeledDataset data, std::span<const Proposal> proposals,
                                const RoiFeatureOptions& roi) {
  DatasetCache c;
  c.data = std::move(data);
  c.scenes.resize(c.data.size());
  for (std::size_t s = 0; s < c.data.size(); ++s) {
    const Scene& scene = c.data.scenes[s];
    const IntegralFeatures integral(scene);
    auto& pooled = c.scenes[s].pooled;
    pooled.reserve(proposals.size() * roi_feature_dim(static_cast<std::size_t>(scene.channels), roi));
    for (const Proposal& p : proposals) {
      const auto f = roi_features(integral, p.box, roi);
      pooled.insert(pooled.end(), f.begin(), f.end());
    }
    const auto gt = boxes_of(c.data.annotations[s]);
    c.scenes[s].assignment = assign_proposals(proposals, gt);
  }
  return c;
}

inline Workspace make_workspace(const PipelineConfig& config, std::uint64_t seed) {
  config.validate();
  Workspace ws;
  ws.config = &config;
  ws.seed = seed;
  ws.proposals = generate_proposals(config.world.scene_width, config.world.scene_height, config.anchors);
  const WorldConfig target_world = apply_domain_shift(config.world);
  ws.source = build_cache(
      generate_dataset(config.world, config.n_source_scenes, derive_seed(seed, stream::source_data), DomainTag::source),
      ws.proposals, config.roi);
  ws.target = build_cache(
      generate_dataset(target_world, config.n_target_scenes, derive_seed(seed, stream::target_data), DomainTag::target),
      ws.proposals, config.roi);
  ws.eval = build_cache(
      generate_dataset(target_world, config.n_eval_scenes, derive_seed(seed, stream::eval_data), DomainTag::target),
      ws.proposals, config.roi);
  return ws;
}

// ---------------------------------------------------------------------------
// Reports

struct PhaseReport {
  int phase = 0;
  std::int64_t steps = 0;
  double final_loss = 0.0;
  double seconds = 0.0;
  std::optional<PseudoLabelQuality> pseudo_quality;  // phase 1
  std::size_t num_pseudo_labels = 0;
  double aux_agreement = 0.0;  // phase 2: aux argmax == noisy label
  double aux_accuracy = 0.0;   // phase 2: aux argmax == GT class, among GT-matched pseudo-labels
  std::vector<std::string> warnings;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// ---------------------------------------------------------------------------
// Minibatch assembly

/// k distinct indices drawn from `pool` by a partial Fisher-Yates shuffle.
/// Consumes exactly min(k, pool.size()) draws from rng.
inline std::vector<std::size_t> sample_without_replacement(std::vector<std::size_t> pool, std::size_t k, Rng& rng) {
  k = std::min(k, pool.size());
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(i, pool.size() - 1)(rng);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

inline std::vector<double> one_hot(std::size_t index, std::size_t size) {
  std::vector<double> v(size, 0.0);
  v[index] = 1.0;
  return v;
}

/// Target-domain training options for one retraining run.
struct RetrainOptions {
  AblationFlags flags;
  AlphaSchedule alpha;
  bool use_aux = true;  // false: fuse against softened one-hot of the noisy class instead
};

/// Number of foreground rois per scene under the configured fraction.
inline std::size_t foreground_quota(const PipelineConfig& c) {
  return static_cast<std::size_t>(std::lround(c.fg_fraction * c.rois_per_scene));
}

/// Adds positives (matched to ground truth) and random negatives of a labeled scene.
inline void add_supervised_rois(const Workspace& ws, const DatasetCache& cache, std::size_t scene, Rng& rng,
                                std::vector<TrainingInstance>& batch) {
  const PipelineConfig& c = *ws.config;
  const SceneCache& sc = cache.scenes[scene];
  const auto& gts = cache.data.annotations[scene];
  const std::size_t k_out = ws.num_foreground() + 1;

  std::vector<std::size_t> pos_slots(sc.assignment.positives.size());
  std::iota(pos_slots.begin(), pos_slots.end(), std::size_t{0});
  const auto pos = sample_without_replacement(std::move(pos_slots), foreground_quota(c), rng);
  for (std::size_t slot : pos) {
    const std::size_t i = sc.assignment.positives[slot];
    const Annotation& gt = gts[sc.assignment.positive_ref[slot]];
    batch.push_back({sc.features(i, ws.feature_dim()), ws.proposals[i].box,
                     one_hot(static_cast<std::size_t>(gt.class_index), k_out), gt.box});
  }
  const std::size_t n_neg = static_cast<std::size_t>(c.rois_per_scene) - pos.size();
  for (std::size_t i : sample_without_replacement(sc.assignment.negatives, n_neg, rng)) {
    batch.push_back({sc.features(i, ws.feature_dim()), ws.proposals[i].box, one_hot(0, k_out), std::nullopt});
  }
}

/// Adds pseudo-labeled positives, hard negatives and random negatives of a target scene.
inline void add_target_rois(const Workspace& ws, std::size_t scene, const std::vector<PseudoLabel>& labels,
                            const SceneCache::Assignment& assignment, const DetectorParams& params,
                            const RetrainOptions& opt, double alpha, Rng& rng, std::vector<TrainingInstance>& batch) {
  const PipelineConfig& c = *ws.config;
  const SceneCache& sc = ws.target.scenes[scene];
  const std::size_t f = ws.feature_dim();
  const std::size_t n_fg = ws.num_foreground();
  const std::size_t k_out = n_fg + 1;

  std::vector<std::size_t> pos_slots(assignment.positives.size());
  std::iota(pos_slots.begin(), pos_slots.end(), std::size_t{0});
  const auto pos = sample_without_replacement(std::move(pos_slots), foreground_quota(c), rng);
  for (std::size_t slot : pos) {
    const std::size_t i = assignment.positives[slot];
    const PseudoLabel& pl = labels[assignment.positive_ref[slot]];
    const BoundingBox& proposal = ws.proposals[i].box;
    TrainingInstance inst{sc.features(i, f), proposal, {}, pl.box};
    const bool need_live = opt.flags.cls_cor || opt.flags.box_r;
    const DetectorOutput live = need_live ? forward_pooled(params, inst.features, proposal) : DetectorOutput{};
    if (opt.flags.cls_cor) {
      const CategoricalDistribution aux =
          opt.use_aux && !pl.aux_logits.empty()
              ? CategoricalDistribution(pl.aux_logits)
              : softened_one_hot(static_cast<std::size_t>(pl.class_index), c.epsilon_aux, n_fg);
      inst.soft_label = fuse_categorical(live.classes, aux, alpha).probabilities();
    } else {
      inst.soft_label = one_hot(static_cast<std::size_t>(pl.class_index), k_out);
    }
    if (opt.flags.box_r) inst.box_target = fuse_box(live.box, pl.box, alpha);
    batch.push_back(std::move(inst));
  }

  // Hard negatives: highest foreground score among proposals clear of every pseudo-label.
  const std::size_t n_neg_total = static_cast<std::size_t>(c.rois_per_scene) - pos.size();
  const std::size_t n_hard = std::min({static_cast<std::size_t>(c.hard_negative_count), n_neg_total,
                                       assignment.negatives.size()});
  std::vector<std::size_t> hard;
  std::vector<std::size_t> rest;
  if (n_hard > 0) {
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(assignment.negatives.size());
    for (std::size_t slot = 0; slot < assignment.negatives.size(); ++slot) {
      const std::size_t i = assignment.negatives[slot];
      const auto logits = evaluate_heads(params, sc.features(i, f)).logits;
      scored.emplace_back(1.0 - softmax(logits)[0], slot);
    }
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n_hard), scored.end(),
                      [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
    std::vector<bool> taken(assignment.negatives.size(), false);
    for (std::size_t j = 0; j < n_hard; ++j) {
      hard.push_back(assignment.negatives[scored[j].second]);
      taken[scored[j].second] = true;
    }
    for (std::size_t slot = 0; slot < assignment.negatives.size(); ++slot)
      if (!taken[slot]) rest.push_back(assignment.negatives[slot]);
  } else {
    rest = assignment.negatives;
  }
  const auto random_neg = sample_without_replacement(std::move(rest), n_neg_total - hard.size(), rng);

  const std::vector<double> hard_background =
      opt.flags.fn_cor ? softened_one_hot(0, c.epsilon_fn, n_fg).probabilities() : one_hot(0, k_out);
  for (std::size_t i : hard) batch.push_back({sc.features(i, f), ws.proposals[i].box, hard_background, std::nullopt});
  for (std::size_t i : random_neg) batch.push_back({sc.features(i, f), ws.proposals[i].box, one_hot(0, k_out), std::nullopt});
}

/// Every soft target must be a distribution and every box target must have positive extent.
inline void check_targets(std::span<const TrainingInstance> batch, std::int64_t step) {
  for (const TrainingInstance& inst : batch) {
    double s = 0.0;
    bool ok = true;
    for (double v : inst.soft_label) {
      ok = ok && v >= 0.0 && std::isfinite(v);
      s += v;
    }
    if (!ok || std::abs(s - 1.0) > 1e-9) {
      throw NumericalError("step " + std::to_string(step) + ": soft target is not a distribution");
    }
    if (inst.box_target && !inst.box_target->valid()) {
      throw NumericalError("step " + std::to_string(step) + ": box target has non-positive extent");
    }
  }
}

struct TrainOutcome {
  DetectorParams params;
  double final_loss = 0.0;
  std::int64_t steps = 0;
};

/// Shared SGD loop. Each step draws `n_labeled` scenes from `labeled` (ground truth) and,
/// when `pseudo` is given, `n_target` target scenes with pseudo-labels.
inline TrainOutcome train_detector(const Workspace& ws, const DatasetCache& labeled, int n_labeled,
                                   const PseudoLabelSet* pseudo,
                                   const std::vector<SceneCache::Assignment>* pseudo_assignment, int n_target,
                                   const RetrainOptions& opt, std::int64_t steps, DetectorParams params, Rng& rng) {
  const PipelineConfig& c = *ws.config;
  LossOptions loss_opt;
  loss_opt.reg_weight = c.reg_weight;
  TrainOutcome out;
  std::vector<TrainingInstance> batch;
  std::uniform_int_distribution<std::size_t> pick_labeled(0, labeled.data.size() - 1);
  const std::size_t n_target_scenes = pseudo ? pseudo->size() : 0;
  for (std::int64_t step = 0; step < steps; ++step) {
    batch.clear();
    const double alpha = opt.alpha.at(step);
    for (int i = 0; i < n_labeled; ++i) add_supervised_rois(ws, labeled, pick_labeled(rng), rng, batch);
    if (pseudo && n_target_scenes > 0) {
      std::uniform_int_distribution<std::size_t> pick_target(0, n_target_scenes - 1);
      for (int i = 0; i < n_target; ++i) {
        const std::size_t s = pick_target(rng);
        add_target_rois(ws, s, (*pseudo)[s], (*pseudo_assignment)[s], params, opt, alpha, rng, batch);
      }
    }
    check_targets(batch, step);
    LossResult r;
    try {
      r = loss_and_gradients(params, batch, loss_opt);
    } catch (const NumericalError& e) {
      throw NumericalError("training step " + std::to_string(step) + " (alpha=" + std::to_string(alpha) +
                           "): " + e.what());
    }
    params = sgd_step(std::move(params), r.gradients, c.lr.at(step));
    out.final_loss = r.loss;
    out.steps = step + 1;
  }
  out.params = std::move(params);
  return out;
}

inline DetectorParams initial_params(const Workspace& ws, std::uint64_t stream_id) {
  Rng rng(derive_seed(ws.seed, stream_id * 1000 + 1));
  return DetectorParams::random(ws.feature_dim(), ws.num_foreground(), rng, ws.config->hidden_units);
}

/// Detector trained on ground truth of one dataset only (source-only and target-oracle models).
inline TrainOutcome train_supervised(const Workspace& ws, const DatasetCache& data, std::uint64_t stream_id,
                                     std::int64_t steps) {
  Rng rng(derive_seed(ws.seed, stream_id));
  RetrainOptions opt;
  opt.flags = {false, false, false};
  opt.alpha = AlphaSchedule::constant(0.0);
  const int n = ws.config->batch_mix.n_source + ws.config->batch_mix.n_target;
  return train_detector(ws, data, n, nullptr, nullptr, 0, opt, steps, initial_params(ws, stream_id), rng);
}

// ---------------------------------------------------------------------------
// Detection and evaluation helpers

inline std::vector<Detection> detect_cached(const Workspace& ws, const DatasetCache& cache, std::size_t scene,
                                            const DetectorParams& params, double threshold, double nms_iou) {
  const std::size_t f = ws.feature_dim();
  const SceneCache& sc = cache.scenes[scene];
  std::vector<Detection> candidates;
  const Scene& s = cache.data.scenes[scene];
  for (std::size_t i = 0; i < ws.proposals.size(); ++i) {
    const DetectorOutput out = forward_pooled(params, sc.features(i, f), ws.proposals[i].box);
    const auto p = out.classes.probabilities();
    const BoundingBox box = clamp_to_scene(out.box, s.width, s.height);
    for (std::size_t k = 1; k < p.size(); ++k)
      if (p[k] >= threshold) candidates.push_back({static_cast<int>(k), p[k], box, i});
  }
  return non_max_suppression(std::move(candidates), nms_iou);
}

struct EvalResult {
  double map = 0.0;
  std::vector<double> class_ap;  // index k-1 for class k
};

inline EvalResult evaluate_detector(const Workspace& ws, const DetectorParams& params) {
  const PipelineConfig& c = *ws.config;
  std::vector<DetectionRecord> records;
  for (std::size_t s = 0; s < ws.eval.data.size(); ++s) {
    for (const Detection& d : detect_cached(ws, ws.eval, s, params, c.eval_score_threshold, c.nms_iou)) {
      records.push_back({s, d.class_index, d.score, d.box});
    }
  }
  EvalResult r;
  r.map = mean_ap(records, ws.eval.data.annotations, c.eval_iou);
  for (int k = 1; k <= c.world.num_classes; ++k) {
    r.class_ap.push_back(average_precision(records, ws.eval.data.annotations, k, c.eval_iou).ap);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Phases

struct Phase1Result {
  DetectorParams params;
  PseudoLabelSet pseudo_labels;
  PhaseReport report;
};

/// Source-only training followed by mining on every target scene.
inline Phase1Result phase1_mine(const Workspace& ws) {
  const PipelineConfig& c = *ws.config;
  Stopwatch clock;
  Phase1Result r;
  TrainOutcome t = train_supervised(ws, ws.source, stream::phase1, c.phase1_steps);
  r.params = std::move(t.params);
  r.pseudo_labels.resize(ws.target.data.size());
  for (std::size_t s = 0; s < ws.target.data.size(); ++s) {
    for (const Detection& d : detect_cached(ws, ws.target, s, r.params, c.mining_score_threshold, c.nms_iou)) {
      r.pseudo_labels[s].push_back({d.box, d.class_index, d.score, {}});
    }
  }
  r.report.phase = 1;
  r.report.steps = t.steps;
  r.report.final_loss = t.final_loss;
  r.report.num_pseudo_labels = count_labels(r.pseudo_labels);
  r.report.pseudo_quality = pseudo_label_quality(r.pseudo_labels, ws.target.data.annotations);
  if (r.report.num_pseudo_labels == 0) {
    r.report.warnings.push_back("phase 1 mined no pseudo-labels; retraining degenerates to source-only");
  }
  r.report.seconds = clock.seconds();
  return r;
}

inline Phase1Result phase1_mine(const PipelineConfig& config) {
  const Workspace ws = make_workspace(config, config.seed);
  return phase1_mine(ws);
}

struct Phase2Result {
  PseudoLabelSet pseudo_labels;
  AuxParams aux;
  PhaseReport report;
};

/// Crops from source ground truth (clean), mined target boxes (noisy) and mined backgrounds.
struct CropSets {
  std::vector<CropSample> source;  // clean and background crops
  std::vector<CropSample> target;  // noisy crops
};

inline CropSets build_crops(const Workspace& ws, const PseudoLabelSet& pseudo, Rng& rng) {
  const PipelineConfig& c = *ws.config;
  CropSets crops;
  BackgroundMiningOptions bg;
  bg.min_size = static_cast<int>(std::ceil(c.world.size_min));
  bg.max_size = static_cast<int>(std::floor(c.world.size_max));
  const auto bg_count = static_cast<std::size_t>(c.aux_backgrounds_per_scene);
  for (std::size_t s = 0; s < ws.source.data.size(); ++s) {
    const Scene& scene = ws.source.data.scenes[s];
    const IntegralFeatures integral(scene);
    for (const Annotation& a : ws.source.data.annotations[s]) {
      crops.source.push_back({integral.pool(context_window(a.box, c.aux_context, scene.width, scene.height)),
                              a.class_index, CropProvenance::source_clean});
    }
    const auto known = boxes_of(ws.source.data.annotations[s]);
    for (const BoundingBox& b : mine_background_boxes(scene, known, bg_count, rng, bg)) {
      crops.source.push_back({integral.pool(context_window(b, c.aux_context, scene.width, scene.height)), 0,
                              CropProvenance::mined_background});
    }
  }
  for (std::size_t s = 0; s < ws.target.data.size(); ++s) {
    const Scene& scene = ws.target.data.scenes[s];
    const IntegralFeatures integral(scene);
    for (const PseudoLabel& pl : pseudo[s]) {
      crops.target.push_back({integral.pool(context_window(pl.box, c.aux_context, scene.width, scene.height)),
                              pl.class_index, CropProvenance::target_noisy});
    }
    const auto known = boxes_of(pseudo[s]);
    for (const BoundingBox& b : mine_background_boxes(scene, known, bg_count, rng, bg)) {
      crops.source.push_back({integral.pool(context_window(b, c.aux_context, scene.width, scene.height)), 0,
                              CropProvenance::mined_background});
    }
  }
  return crops;
}

/// Aux schedule: 100 -> 0.5 over the first 5/7 of the aux steps (same proportion as the detector anneal).
inline AlphaSchedule aux_alpha_schedule(const PipelineConfig& c) {
  const auto anneal = std::max<std::int64_t>(1, (c.phase2_steps * 5) / 7);
  return AlphaSchedule(c.alpha_schedule.alpha_start, c.alpha_schedule.alpha_end, anneal);
}

inline Phase2Result phase2_rescore(const Workspace& ws, const PseudoLabelSet& pseudo) {
  const PipelineConfig& c = *ws.config;
  Stopwatch clock;
  Phase2Result r;
  r.pseudo_labels = pseudo;
  r.report.phase = 2;
  if (!c.use_phase2) {
    for (auto& scene : r.pseudo_labels)
      for (auto& pl : scene) pl.aux_logits.clear();
    r.report.warnings.push_back("phase 2 disabled; class correction falls back to softened one-hot labels");
    return r;
  }
  Rng rng(derive_seed(ws.seed, stream::phase2));
  const CropSets crops = build_crops(ws, pseudo, rng);
  AuxTrainOptions opt;
  opt.batch_size = c.aux_batch;
  AuxTrainResult trained = train_aux(crops.source, crops.target, aux_alpha_schedule(c), c.epsilon_aux,
                                     static_cast<std::size_t>(c.phase2_steps), c.aux_lr, ws.num_foreground(), rng, opt);
  r.aux = trained.params;

  std::size_t agree = 0, total = 0, correct = 0, matched = 0;
  for (std::size_t s = 0; s < r.pseudo_labels.size(); ++s) {
    const Scene& scene = ws.target.data.scenes[s];
    const IntegralFeatures integral(scene);
    for (PseudoLabel& pl : r.pseudo_labels[s]) {
      pl.aux_logits = aux_logits(r.aux, integral.pool(context_window(pl.box, c.aux_context, scene.width, scene.height)));
      const auto arg = static_cast<int>(CategoricalDistribution(pl.aux_logits).argmax());
      ++total;
      agree += arg == pl.class_index ? 1 : 0;
      double best = kPositiveIou;
      const Annotation* gt = nullptr;
      for (const Annotation& a : ws.target.data.annotations[s]) {
        const double o = iou(a.box, pl.box);
        if (o >= best) {
          best = o;
          gt = &a;
        }
      }
      if (gt) {
        ++matched;
        correct += arg == gt->class_index ? 1 : 0;
      }
    }
  }
  r.report.steps = static_cast<std::int64_t>(trained.steps);
  r.report.final_loss = trained.final_loss;
  r.report.num_pseudo_labels = total;
  r.report.aux_agreement = total ? static_cast<double>(agree) / static_cast<double>(total) : 0.0;
  r.report.aux_accuracy = matched ? static_cast<double>(correct) / static_cast<double>(matched) : 0.0;
  r.report.seconds = clock.seconds();
  return r;
}

struct Phase3Result {
  DetectorParams params;
  PhaseReport report;
};

inline std::vector<SceneCache::Assignment> assign_pseudo_labels(const Workspace& ws, const PseudoLabelSet& pseudo) {
  std::vector<SceneCache::Assignment> out(pseudo.size());
  for (std::size_t s = 0; s < pseudo.size(); ++s) out[s] = assign_proposals(ws.proposals, boxes_of(pseudo[s]));
  return out;
}

/// Robust retraining on source ground truth plus target pseudo-labels.
/// `warm` supplies phase-1 weights when warm starts are enabled.
inline Phase3Result phase3_robust_retrain(const Workspace& ws, const PseudoLabelSet& pseudo, const RetrainOptions& opt,
                                          const DetectorParams* warm = nullptr) {
  const PipelineConfig& c = *ws.config;
  Stopwatch clock;
  const auto assignment = assign_pseudo_labels(ws, pseudo);
  Rng rng(derive_seed(ws.seed, stream::phase3));
  DetectorParams init = (c.warm_start && warm) ? *warm : initial_params(ws, stream::phase3);
  TrainOutcome t = train_detector(ws, ws.source, c.batch_mix.n_source, &pseudo, &assignment, c.batch_mix.n_target,
                                  opt, c.phase3_steps, std::move(init), rng);
  Phase3Result r;
  r.params = std::move(t.params);
  r.report.phase = 3;
  r.report.steps = t.steps;
  r.report.final_loss = t.final_loss;
  r.report.num_pseudo_labels = count_labels(pseudo);
  r.report.seconds = clock.seconds();
  return r;
}

inline Phase3Result phase3_robust_retrain(const Workspace& ws, const PseudoLabelSet& pseudo,
                                          const DetectorParams* warm = nullptr) {
  const PipelineConfig& c = *ws.config;
  return phase3_robust_retrain(ws, pseudo, RetrainOptions{c.ablation, c.alpha_schedule, c.use_phase2}, warm);
}

// ---------------------------------------------------------------------------
// Experiments

enum class Variant { source_only, pseudo_label, ours_cls, ours_cls_box, ours_full, oracle_target };

inline constexpr std::array<Variant, 6> kAllVariants{Variant::source_only, Variant::pseudo_label, Variant::ours_cls,
                                                     Variant::ours_cls_box, Variant::ours_full, Variant::oracle_target};

inline std::string_view to_string(Variant v) noexcept {
  switch (v) {
    case Variant::source_only: return "source_only";
    case Variant::pseudo_label: return "pseudo_label";
    case Variant::ours_cls: return "ours_cls";
    case Variant::ours_cls_box: return "ours_cls_box";
    case Variant::ours_full: return "ours_full";
    case Variant::oracle_target: return "oracle_target";
  }
  return "?";
}

inline Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants)
    if (to_string(v) == name) return v;
  throw ConfigError("variants", "unknown variant '" + std::string(name) + "'");
}

/// Ablation flags and alpha schedule for a variant that retrains on pseudo-labels.
/// The pseudo-labeling baseline is the method with every correction off and alpha fixed at 0.
inline RetrainOptions retrain_options(const PipelineConfig& c, Variant v) {
  switch (v) {
    case Variant::pseudo_label: return {{false, false, false}, AlphaSchedule::constant(0.0), c.use_phase2};
    case Variant::ours_cls: return {{true, false, false}, c.alpha_schedule, c.use_phase2};
    case Variant::ours_cls_box: return {{true, true, false}, c.alpha_schedule, c.use_phase2};
    case Variant::ours_full: return {{true, true, true}, c.alpha_schedule, c.use_phase2};
    default: throw ConfigError("variants", std::string(to_string(v)) + " does not retrain on pseudo-labels");
  }
}

inline bool uses_pseudo_labels(Variant v) noexcept {
  return v != Variant::source_only && v != Variant::oracle_target;
}

struct ReportRow {
  Variant variant = Variant::source_only;
  std::uint64_t seed = 0;
  EvalResult eval;
  std::optional<PseudoLabelQuality> pseudo_quality;
  std::optional<double> aux_accuracy;
};

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<ReportRow> rows;
  std::vector<PhaseReport> phases;
};

inline SeedRun run_seed(const PipelineConfig& config, std::uint64_t seed, const std::vector<Variant>& variants) {
  const Workspace ws = make_workspace(config, seed);
  SeedRun run;
  run.seed = seed;
  const bool need_phase1 = std::any_of(variants.begin(), variants.end(), [](Variant v) {
    return v != Variant::oracle_target;
  });
  const bool need_pseudo = std::any_of(variants.begin(), variants.end(), uses_pseudo_labels);
  std::optional<Phase1Result> p1;
  std::optional<Phase2Result> p2;
  if (need_phase1) {
    p1 = phase1_mine(ws);
    run.phases.push_back(p1->report);
  }
  if (need_pseudo) {
    p2 = phase2_rescore(ws, p1->pseudo_labels);
    run.phases.push_back(p2->report);
  }
  for (Variant v : kAllVariants) {
    if (std::find(variants.begin(), variants.end(), v) == variants.end()) continue;
    ReportRow row;
    row.variant = v;
    row.seed = seed;
    if (v == Variant::source_only) {
      row.eval = evaluate_detector(ws, p1->params);
    } else if (v == Variant::oracle_target) {
      row.eval = evaluate_detector(ws, train_supervised(ws, ws.target, stream::oracle, config.phase3_steps).params);
    } else {
      const Phase3Result p3 = phase3_robust_retrain(ws, p2->pseudo_labels, retrain_options(config, v), &p1->params);
      run.phases.push_back(p3.report);
      row.eval = evaluate_detector(ws, p3.params);
      row.pseudo_quality = p1->report.pseudo_quality;
      if (config.use_phase2) row.aux_accuracy = p2->report.aux_accuracy;
    }
    run.rows.push_back(std::move(row));
  }
  return run;
}

struct VariantSummary {
  Variant variant = Variant::source_only;
  double mean_map = 0.0;
  std::vector<double> mean_class_ap;
};

struct ExperimentReport {
  std::vector<Variant> variants;  // canonical order
  std::vector<std::uint64_t> seeds;
  std::vector<ReportRow> rows;  // sorted by (variant, seed)
  std::vector<VariantSummary> means;
  std::vector<SeedRun> runs;  // per-seed phase reports, seed order

  const VariantSummary* mean_of(Variant v) const {
    for (const auto& m : means)
      if (m.variant == v) return &m;
    return nullptr;
  }
  std::vector<double> per_seed(Variant v) const {
    std::vector<double> out;
    for (const auto& r : rows)
      if (r.variant == v) out.push_back(r.eval.map);
    return out;
  }
};

/// Runs every requested variant for every configured seed. Seeds are independent and may be
/// spread over `config.jobs` threads; the report does not depend on that.
inline ExperimentReport run_experiment(const PipelineConfig& config, const std::vector<Variant>& requested) {
  config.validate();
  if (requested.empty()) throw ConfigError("variants", "need at least one variant");
  ExperimentReport report;
  for (Variant v : kAllVariants)
    if (std::find(requested.begin(), requested.end(), v) != requested.end()) report.variants.push_back(v);
  report.seeds = config.seeds;

  std::vector<SeedRun> runs(config.seeds.size());
  std::vector<std::exception_ptr> errors(config.seeds.size());
  const std::size_t jobs = std::min<std::size_t>(static_cast<std::size_t>(config.jobs), config.seeds.size());
  auto worker = [&](std::size_t first) {
    for (std::size_t i = first; i < config.seeds.size(); i += jobs) {
      try {
        runs[i] = run_seed(config, config.seeds[i], report.variants);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (jobs <= 1) {
    worker(0);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t j = 0; j < jobs; ++j) threads.emplace_back(worker, j);
    for (auto& t : threads) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  for (Variant v : report.variants) {
    VariantSummary m;
    m.variant = v;
    m.mean_class_ap.assign(static_cast<std::size_t>(config.world.num_classes), 0.0);
    for (const SeedRun& run : runs) {
      for (const ReportRow& row : run.rows) {
        if (row.variant != v) continue;
        report.rows.push_back(row);
        m.mean_map += row.eval.map;
        for (std::size_t k = 0; k < m.mean_class_ap.size(); ++k) m.mean_class_ap[k] += row.eval.class_ap[k];
      }
    }
    const double n = static_cast<double>(runs.size());
    m.mean_map /= n;
    for (double& a : m.mean_class_ap) a /= n;
    report.means.push_back(std::move(m));
  }
  report.runs = std::move(runs);
  return report;
}

}  // namespace robustst
