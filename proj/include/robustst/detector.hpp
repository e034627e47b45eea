#pragma once

// Two-stage-style toy detector over feature grids. Proposals come from a fixed
// anchor grid; each proposal is mean-pooled and fed to a linear (optionally one
// tanh hidden layer) softmax classification head and a class-agnostic box
// offset regression head. Gradients are analytic.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "robustst/box.hpp"
#include "robustst/distribution.hpp"
#include "robustst/errors.hpp"
#include "robustst/scene.hpp"

namespace robustst {

/// Dense row-major matrix; just enough for the heads.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) noexcept { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data[r * cols + c]; }
  bool empty() const noexcept { return data.empty(); }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

struct AnchorConfig {
  int stride = 2;
  std::vector<double> scales{5.0, 8.0};  // side of the square anchor of equal area
  std::vector<double> ratios{0.5, 1.0, 2.0};  // height / width
};

enum class ProposalSource { anchor, mined };

struct Proposal {
  BoundingBox box;
  ProposalSource source = ProposalSource::anchor;
};

/// Anchors at the centre of every stride x stride tile, one per (scale, ratio), clamped to the scene.
inline std::vector<Proposal> generate_proposals(int width, int height, const AnchorConfig& cfg) {
  if (cfg.stride <= 0) throw ParameterError("generate_proposals: stride must be positive");
  const int nx = (width + cfg.stride - 1) / cfg.stride;
  const int ny = (height + cfg.stride - 1) / cfg.stride;
  std::vector<Proposal> out;
  out.reserve(static_cast<std::size_t>(nx * ny) * cfg.scales.size() * cfg.ratios.size());
  for (int gy = 0; gy < ny; ++gy) {
    for (int gx = 0; gx < nx; ++gx) {
      const double cx = gx * cfg.stride + 0.5 * cfg.stride;
      const double cy = gy * cfg.stride + 0.5 * cfg.stride;
      for (double s : cfg.scales) {
        for (double r : cfg.ratios) {
          const double w = s / std::sqrt(r);
          const double h = s * std::sqrt(r);
          const BoundingBox raw{cx - 0.5 * w, cy - 0.5 * h, w, h};
          out.push_back({clamp_to_scene(raw, width, height), ProposalSource::anchor});
        }
      }
    }
  }
  return out;
}

inline std::vector<Proposal> generate_proposals(const Scene& scene, const AnchorConfig& cfg) {
  return generate_proposals(scene.width, scene.height, cfg);
}

/// Weights of both heads. Input rows carry a trailing bias row.
struct DetectorParams {
  std::size_t feature_dim = 0;
  std::size_t num_foreground = 0;
  std::size_t hidden_units = 0;  // 0 = linear heads
  Matrix hidden;                 // (F + 1) x H, empty when linear
  Matrix cls;                    // (D + 1) x (C + 1)
  Matrix reg;                    // (D + 1) x 4

  std::size_t head_input_dim() const noexcept { return hidden_units > 0 ? hidden_units : feature_dim; }
  std::size_t num_outputs() const noexcept { return num_foreground + 1; }

  static DetectorParams zeros(std::size_t feature_dim, std::size_t num_foreground, std::size_t hidden_units = 0) {
    DetectorParams p;
    p.feature_dim = feature_dim;
    p.num_foreground = num_foreground;
    p.hidden_units = hidden_units;
    if (hidden_units > 0) p.hidden = Matrix(feature_dim + 1, hidden_units);
    p.cls = Matrix(p.head_input_dim() + 1, num_foreground + 1);
    p.reg = Matrix(p.head_input_dim() + 1, 4);
    return p;
  }

  /// Zero-mean uniform(+-scale) initialization.
  static DetectorParams random(std::size_t feature_dim, std::size_t num_foreground, Rng& rng,
                               std::size_t hidden_units = 0, double scale = 0.01) {
    DetectorParams p = zeros(feature_dim, num_foreground, hidden_units);
    std::uniform_real_distribution<double> u(-scale, scale);
    p.for_each_matrix([&](Matrix& m) {
      for (double& v : m.data) v = u(rng);
    });
    return p;
  }

  template <typename F>
  void for_each_matrix(F&& f) {
    if (hidden_units > 0) f(hidden);
    f(cls);
    f(reg);
  }
  template <typename F>
  void for_each_matrix(F&& f) const {
    if (hidden_units > 0) f(hidden);
    f(cls);
    f(reg);
  }

  bool finite() const {
    bool ok = true;
    for_each_matrix([&](const Matrix& m) {
      for (double v : m.data) ok = ok && std::isfinite(v);
    });
    return ok;
  }

  friend bool operator==(const DetectorParams&, const DetectorParams&) = default;
};

/// Offsets beyond this are clipped before exponentiation in predictions.
inline constexpr double kMaxLogScale = 4.135166556742356;  // log(1000 / 16)

struct HeadActivations {
  std::vector<double> head_input;  // [h; 1] or [x; 1]
  std::vector<double> hidden;      // tanh outputs, empty when linear
  std::vector<double> logits;
  BoxOffsets offsets{};
};

inline HeadActivations evaluate_heads(const DetectorParams& params, std::span<const double> features) {
  if (features.size() != params.feature_dim) {
    throw DimensionError("detector: expected " + std::to_string(params.feature_dim) + " features, got " +
                         std::to_string(features.size()));
  }
  HeadActivations a;
  const std::size_t d = params.head_input_dim();
  a.head_input.resize(d + 1);
  if (params.hidden_units > 0) {
    a.hidden.assign(params.hidden_units, 0.0);
    for (std::size_t j = 0; j < params.hidden_units; ++j) {
      double s = params.hidden(params.feature_dim, j);
      for (std::size_t i = 0; i < params.feature_dim; ++i) s += features[i] * params.hidden(i, j);
      a.hidden[j] = std::tanh(s);
    }
    std::copy(a.hidden.begin(), a.hidden.end(), a.head_input.begin());
  } else {
    std::copy(features.begin(), features.end(), a.head_input.begin());
  }
  a.head_input[d] = 1.0;

  a.logits.assign(params.num_outputs(), 0.0);
  for (std::size_t k = 0; k < params.num_outputs(); ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i <= d; ++i) s += a.head_input[i] * params.cls(i, k);
    a.logits[k] = s;
  }
  for (std::size_t j = 0; j < 4; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i <= d; ++i) s += a.head_input[i] * params.reg(i, j);
    a.offsets[j] = s;
  }
  return a;
}

struct DetectorOutput {
  CategoricalDistribution classes;
  BoxOffsets offsets{};
  BoundingBox box;  // proposal decoded with the predicted offsets
};

inline BoundingBox decode_prediction(const BoxOffsets& t, const BoundingBox& proposal) noexcept {
  BoxOffsets c = t;
  c[2] = std::min(c[2], kMaxLogScale);
  c[3] = std::min(c[3], kMaxLogScale);
  return decode_box(c, proposal);
}

inline DetectorOutput forward_pooled(const DetectorParams& params, std::span<const double> pooled,
                                     const BoundingBox& proposal) {
  HeadActivations a = evaluate_heads(params, pooled);
  DetectorOutput out;
  out.offsets = a.offsets;
  out.box = decode_prediction(a.offsets, proposal);
  out.classes = CategoricalDistribution(std::move(a.logits));
  return out;
}

inline DetectorOutput forward(const DetectorParams& params, const Scene& scene, const Proposal& proposal,
                              const RoiFeatureOptions& roi = RoiFeatureOptions::box_only()) {
  const auto pooled = roi_features(scene, proposal.box, roi);
  return forward_pooled(params, pooled, proposal.box);
}

/// One training instance: pooled proposal features, a soft class target and an optional box target.
struct TrainingInstance {
  std::span<const double> features;
  BoundingBox proposal;
  std::vector<double> soft_label;       // probabilities over C + 1 entries
  std::optional<BoundingBox> box_target;  // foreground only
};

struct LossOptions {
  double reg_weight = 1.0;
};

struct LossResult {
  double loss = 0.0;
  double classification = 0.0;
  double regression = 0.0;
  DetectorParams gradients;
};

/// loss = (1/N) sum_i [ -sum_k q_ik log softmax_k(logits_i) ]
///      + reg_weight (1/N) sum_{i with box target} || t_i - encode(target_i, proposal_i) ||^2
inline LossResult loss_and_gradients(const DetectorParams& params, std::span<const TrainingInstance> batch,
                                     const LossOptions& options = {}) {
  LossResult r;
  r.gradients = DetectorParams::zeros(params.feature_dim, params.num_foreground, params.hidden_units);
  if (batch.empty()) return r;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  const std::size_t d = params.head_input_dim();
  const std::size_t k_out = params.num_outputs();
  std::vector<double> dlogits(k_out);
  std::vector<double> dz(d + 1);

  for (std::size_t b = 0; b < batch.size(); ++b) {
    const TrainingInstance& inst = batch[b];
    if (inst.soft_label.size() != k_out) throw DimensionError("loss_and_gradients: soft label length mismatch");
    const HeadActivations a = evaluate_heads(params, inst.features);
    const auto logp = log_softmax(a.logits);
    double ce = 0.0;
    for (std::size_t k = 0; k < k_out; ++k) {
      if (inst.soft_label[k] > 0.0) ce -= inst.soft_label[k] * logp[k];
      dlogits[k] = (std::exp(logp[k]) - inst.soft_label[k]) * inv_n;
    }
    r.classification += ce * inv_n;

    BoxOffsets dt{0.0, 0.0, 0.0, 0.0};
    if (inst.box_target) {
      const BoxOffsets target = encode_box(*inst.box_target, inst.proposal);
      double sq = 0.0;
      for (std::size_t j = 0; j < 4; ++j) {
        const double diff = a.offsets[j] - target[j];
        sq += diff * diff;
        dt[j] = 2.0 * options.reg_weight * diff * inv_n;
      }
      r.regression += options.reg_weight * sq * inv_n;
    }

    for (std::size_t i = 0; i <= d; ++i) {
      for (std::size_t k = 0; k < k_out; ++k) r.gradients.cls(i, k) += a.head_input[i] * dlogits[k];
      if (inst.box_target) {
        for (std::size_t j = 0; j < 4; ++j) r.gradients.reg(i, j) += a.head_input[i] * dt[j];
      }
    }
    if (params.hidden_units > 0) {
      for (std::size_t i = 0; i < d; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < k_out; ++k) s += params.cls(i, k) * dlogits[k];
        if (inst.box_target) {
          for (std::size_t j = 0; j < 4; ++j) s += params.reg(i, j) * dt[j];
        }
        dz[i] = s * (1.0 - a.hidden[i] * a.hidden[i]);
      }
      for (std::size_t f = 0; f <= params.feature_dim; ++f) {
        const double x = f < params.feature_dim ? inst.features[f] : 1.0;
        for (std::size_t j = 0; j < d; ++j) r.gradients.hidden(f, j) += x * dz[j];
      }
    }
  }
  r.loss = r.classification + r.regression;
  if (!std::isfinite(r.loss)) {
    std::ostringstream msg;
    msg << "loss_and_gradients: non-finite loss (ce=" << r.classification << ", reg=" << r.regression
        << ", batch size " << batch.size() << ")";
    throw NumericalError(msg.str());
  }
  return r;
}

/// params <- params - learning_rate * grads, elementwise.
inline DetectorParams sgd_step(DetectorParams params, const DetectorParams& grads, double learning_rate) {
  auto apply = [learning_rate](Matrix& p, const Matrix& g) {
    if (p.rows != g.rows || p.cols != g.cols) throw DimensionError("sgd_step: gradient shape mismatch");
    for (std::size_t i = 0; i < p.data.size(); ++i) p.data[i] -= learning_rate * g.data[i];
  };
  if (params.hidden_units > 0) apply(params.hidden, grads.hidden);
  apply(params.cls, grads.cls);
  apply(params.reg, grads.reg);
  return params;
}

struct Detection {
  int class_index = 0;
  double score = 0.0;
  BoundingBox box;
  std::size_t proposal_index = 0;
};

/// Greedy per-class NMS. Highest score first; ties go to the smaller proposal index.
/// Output is grouped by class (ascending) and ordered by keep order within each class.
inline std::vector<Detection> non_max_suppression(std::vector<Detection> candidates, double nms_iou) {
  std::stable_sort(candidates.begin(), candidates.end(), [](const Detection& a, const Detection& b) {
    if (a.class_index != b.class_index) return a.class_index < b.class_index;
    if (a.score != b.score) return a.score > b.score;
    return a.proposal_index < b.proposal_index;
  });
  std::vector<Detection> kept;
  std::size_t class_begin = 0;
  for (const Detection& c : candidates) {
    if (!kept.empty() && kept.back().class_index != c.class_index) class_begin = kept.size();
    bool suppressed = false;
    for (std::size_t i = class_begin; i < kept.size(); ++i) {
      if (kept[i].class_index == c.class_index && iou(kept[i].box, c.box) > nms_iou) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(c);
  }
  return kept;
}

/// Detection over precomputed pooled features, one row per proposal.
inline std::vector<Detection> detect_pooled(const DetectorParams& params, std::span<const std::vector<double>> pooled,
                                            std::span<const Proposal> proposals, int width, int height,
                                            double score_threshold, double nms_iou) {
  if (pooled.size() != proposals.size()) throw DimensionError("detect: pooled/proposal count mismatch");
  std::vector<Detection> candidates;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    const DetectorOutput out = forward_pooled(params, pooled[i], proposals[i].box);
    const auto p = out.classes.probabilities();
    const BoundingBox box = clamp_to_scene(out.box, width, height);
    for (std::size_t k = 1; k < p.size(); ++k) {
      if (p[k] >= score_threshold) candidates.push_back({static_cast<int>(k), p[k], box, i});
    }
  }
  return non_max_suppression(std::move(candidates), nms_iou);
}

inline std::vector<Detection> detect(const DetectorParams& params, const Scene& scene, const AnchorConfig& anchors,
                                     double score_threshold, double nms_iou,
                                     const RoiFeatureOptions& roi = RoiFeatureOptions::box_only()) {
  const auto proposals = generate_proposals(scene, anchors);
  const IntegralFeatures integral(scene);
  std::vector<std::vector<double>> pooled;
  pooled.reserve(proposals.size());
  for (const Proposal& p : proposals) pooled.push_back(roi_features(integral, p.box, roi));
  return detect_pooled(params, pooled, proposals, scene.width, scene.height, score_threshold, nms_iou);
}

}  // namespace robustst
