#pragma once

// Detection metrics: greedy IoU matching, all-points AP, mAP and pseudo-label quality.

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <set>
#include <vector>

#include "robustst/box.hpp"
#include "robustst/pseudo_labels.hpp"
#include "robustst/scene.hpp"

namespace robustst {

struct DetectionRecord {
  std::size_t scene_id = 0;
  int class_index = 0;
  double score = 0.0;
  BoundingBox box;
};

/// Ground truth indexed by scene id.
using GroundTruth = std::vector<std::vector<Annotation>>;

struct ApResult {
  double ap = 0.0;
  bool no_ground_truth = false;  // class had zero GT boxes; ap reported as 0
  std::size_t num_ground_truth = 0;
  std::size_t num_detections = 0;
};

/// Marks each detection (in ranked order) as a true or false positive.
/// Ranking: descending score, then scene id, then insertion order.
inline std::vector<std::size_t> rank_detections(const std::vector<DetectionRecord>& dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    return dets[a].scene_id < dets[b].scene_id;
  });
  return order;
}

inline ApResult average_precision(const std::vector<DetectionRecord>& detections, const GroundTruth& ground_truth,
                                  int class_index, double iou_threshold = 0.5) {
  ApResult r;
  std::vector<std::vector<bool>> matched(ground_truth.size());
  for (std::size_t s = 0; s < ground_truth.size(); ++s) {
    matched[s].assign(ground_truth[s].size(), false);
    for (const Annotation& a : ground_truth[s]) r.num_ground_truth += a.class_index == class_index ? 1 : 0;
  }
  std::vector<DetectionRecord> dets;
  for (const auto& d : detections)
    if (d.class_index == class_index) dets.push_back(d);
  r.num_detections = dets.size();
  if (r.num_ground_truth == 0) {
    r.no_ground_truth = true;
    return r;
  }

  std::vector<double> precision, recall;
  std::size_t tp = 0, fp = 0;
  for (std::size_t idx : rank_detections(dets)) {
    const DetectionRecord& d = dets[idx];
    double best = -1.0;
    std::size_t best_gt = 0;
    if (d.scene_id < ground_truth.size()) {
      const auto& gts = ground_truth[d.scene_id];
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (gts[g].class_index != class_index || matched[d.scene_id][g]) continue;
        const double o = iou(d.box, gts[g].box);
        if (o >= iou_threshold && o > best) {
          best = o;
          best_gt = g;
        }
      }
    }
    if (best >= 0.0) {
      matched[d.scene_id][best_gt] = true;
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(r.num_ground_truth));
  }
  // Precision envelope, then area under it over recall.
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    r.ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return r;
}

/// Unweighted mean of per-class AP over classes with at least one GT instance.
inline double mean_ap(const std::vector<DetectionRecord>& detections, const GroundTruth& ground_truth,
                      double iou_threshold = 0.5) {
  std::set<int> classes;
  for (const auto& scene : ground_truth)
    for (const Annotation& a : scene)
      if (a.class_index > 0) classes.insert(a.class_index);
  if (classes.empty()) return 0.0;
  double s = 0.0;
  for (int c : classes) s += average_precision(detections, ground_truth, c, iou_threshold).ap;
  return s / static_cast<double>(classes.size());
}

struct PseudoLabelQuality {
  std::size_t num_pseudo = 0;
  std::size_t num_ground_truth = 0;
  std::size_t true_positives = 0;   // pseudo-labels matched to a GT box at IoU >= 0.5
  std::size_t false_positives = 0;  // unmatched pseudo-labels
  std::size_t false_negatives = 0;  // unmatched GT boxes
  std::size_t class_correct = 0;
  double class_accuracy = 0.0;  // among matched
  double mean_iou = 0.0;        // among matched
  double fp_rate = 0.0;         // false_positives / num_pseudo
  double fn_rate = 0.0;         // false_negatives / num_ground_truth
};

/// Class-agnostic greedy matching: pseudo-labels by descending score, each takes the unmatched
/// GT with highest IoU >= `iou_threshold`.
inline PseudoLabelQuality pseudo_label_quality(const PseudoLabelSet& pseudo_labels, const GroundTruth& ground_truth,
                                               double iou_threshold = 0.5) {
  PseudoLabelQuality q;
  double iou_sum = 0.0;
  for (std::size_t s = 0; s < ground_truth.size(); ++s) {
    const auto& gts = ground_truth[s];
    q.num_ground_truth += gts.size();
    std::vector<bool> used(gts.size(), false);
    if (s >= pseudo_labels.size()) {
      q.false_negatives += gts.size();
      continue;
    }
    const auto& pls = pseudo_labels[s];
    q.num_pseudo += pls.size();
    std::vector<std::size_t> order(pls.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return pls[a].score > pls[b].score; });
    for (std::size_t i : order) {
      double best = -1.0;
      std::size_t best_g = 0;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (used[g]) continue;
        const double o = iou(pls[i].box, gts[g].box);
        if (o >= iou_threshold && o > best) {
          best = o;
          best_g = g;
        }
      }
      if (best < 0.0) {
        ++q.false_positives;
        continue;
      }
      used[best_g] = true;
      ++q.true_positives;
      iou_sum += best;
      if (pls[i].class_index == gts[best_g].class_index) ++q.class_correct;
    }
    q.false_negatives += static_cast<std::size_t>(std::count(used.begin(), used.end(), false));
  }
  for (std::size_t s = ground_truth.size(); s < pseudo_labels.size(); ++s) {
    q.num_pseudo += pseudo_labels[s].size();
    q.false_positives += pseudo_labels[s].size();
  }
  if (q.true_positives > 0) {
    q.class_accuracy = static_cast<double>(q.class_correct) / static_cast<double>(q.true_positives);
    q.mean_iou = iou_sum / static_cast<double>(q.true_positives);
  }
  q.fp_rate = q.num_pseudo > 0 ? static_cast<double>(q.false_positives) / static_cast<double>(q.num_pseudo) : 0.0;
  q.fn_rate =
      q.num_ground_truth > 0 ? static_cast<double>(q.false_negatives) / static_cast<double>(q.num_ground_truth) : 0.0;
  return q;
}

}  // namespace robustst
