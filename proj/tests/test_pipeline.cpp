#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "robustst/config.hpp"
#include "robustst/pipeline.hpp"
#include "robustst/report.hpp"

using namespace robustst;

namespace {

PipelineConfig small_config(double shift = 0.0) {
  PipelineConfig c;
  c.world = WorldConfig{};
  c.world.domain_shift.prototype_shift = shift;
  c.n_source_scenes = 40;
  c.n_target_scenes = 20;
  c.n_eval_scenes = 20;
  c.phase1_steps = 600;
  c.phase2_steps = 300;
  c.phase3_steps = 300;
  c.lr = {0.5, 400, 0.05};
  c.alpha_schedule = AlphaSchedule(100.0, 0.5, 200);
  return c;
}

// Target scene with one pseudo-label taken from its first ground-truth object.
struct SingleLabelScene {
  std::size_t scene = 0;
  std::vector<PseudoLabel> labels;
  SceneCache::Assignment assignment;
};

SingleLabelScene single_label_scene(const Workspace& ws, const std::vector<double>& aux_logits) {
  for (std::size_t s = 0; s < ws.target.data.size(); ++s) {
    const auto& gts = ws.target.data.annotations[s];
    if (gts.empty()) continue;
    SingleLabelScene out;
    out.scene = s;
    out.labels.push_back({gts[0].box, gts[0].class_index, 0.9, aux_logits});
    out.assignment = assign_proposals(ws.proposals, boxes_of(out.labels));
    if (out.assignment.positives.empty()) continue;
    return out;
  }
  throw std::runtime_error("no usable target scene");
}

std::vector<TrainingInstance> target_batch(const Workspace& ws, const SingleLabelScene& s, const DetectorParams& params,
                                           const RetrainOptions& opt, double alpha, std::uint64_t seed = 1) {
  Rng rng(seed);
  std::vector<TrainingInstance> batch;
  add_target_rois(ws, s.scene, s.labels, s.assignment, params, opt, alpha, rng, batch);
  return batch;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
  return m;
}

double box_diff(const BoundingBox& a, const BoundingBox& b) {
  return std::max({std::abs(a.x - b.x), std::abs(a.y - b.y), std::abs(a.w - b.w), std::abs(a.h - b.h)});
}

}  // namespace

TEST(Seeds, DeriveSeedSeparatesStreams) {
  EXPECT_EQ(derive_seed(3, stream::phase1), derive_seed(3, stream::phase1));
  EXPECT_NE(derive_seed(3, stream::phase1), derive_seed(3, stream::phase2));
  EXPECT_NE(derive_seed(3, stream::phase1), derive_seed(4, stream::phase1));
}

TEST(Workspace, DeterministicAndShaped) {
  const PipelineConfig c = small_config(1.0);
  const Workspace a = make_workspace(c, 7);
  const Workspace b = make_workspace(c, 7);
  EXPECT_EQ(a.source.data, b.source.data);
  EXPECT_EQ(a.target.data, b.target.data);
  EXPECT_EQ(a.target.scenes[0].pooled, b.target.scenes[0].pooled);
  EXPECT_EQ(a.source.data.size(), 40u);
  EXPECT_EQ(a.target.data.size(), 20u);
  EXPECT_EQ(a.eval.data.size(), 20u);
  EXPECT_EQ(a.target.scenes[0].pooled.size(), a.proposals.size() * a.feature_dim());
  EXPECT_NE(a.target.data.scenes, a.eval.data.scenes);
}

TEST(AssignProposals, PositivesAndNegativesRespectThresholds) {
  const PipelineConfig c = small_config();
  const Workspace ws = make_workspace(c, 0);
  for (std::size_t s = 0; s < 5; ++s) {
    const auto gts = boxes_of(ws.source.data.annotations[s]);
    const auto& a = ws.source.scenes[s].assignment;
    for (std::size_t j = 0; j < a.positives.size(); ++j) {
      EXPECT_GE(iou(ws.proposals[a.positives[j]].box, gts[a.positive_ref[j]]), kPositiveIou);
    }
    for (std::size_t i : a.negatives)
      for (const BoundingBox& g : gts) EXPECT_LT(iou(ws.proposals[i].box, g), kNegativeIou);
  }
}

TEST(Phase1, ZeroShiftPseudoLabelsAreMostlyCorrectlyClassified) {
  const PipelineConfig c = small_config(0.0);
  double accuracy = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Workspace ws = make_workspace(c, seed);
    const Phase1Result r = phase1_mine(ws);
    ASSERT_TRUE(r.report.pseudo_quality.has_value());
    const PseudoLabelQuality& q = *r.report.pseudo_quality;
    EXPECT_GT(q.num_pseudo, 0u);
    EXPECT_EQ(q.true_positives + q.false_positives, r.report.num_pseudo_labels);
    EXPECT_EQ(r.pseudo_labels.size(), ws.target.data.size());
    for (const auto& scene : r.pseudo_labels)
      for (const PseudoLabel& pl : scene) {
        EXPECT_GE(pl.score, c.mining_score_threshold);
        EXPECT_TRUE(pl.aux_logits.empty());
      }
    accuracy += q.class_accuracy;
  }
  EXPECT_GT(accuracy / 5.0, 0.9);
}

TEST(Phase1, NearUnitThresholdMinesAlmostNothing) {
  PipelineConfig c = small_config(0.0);
  c.phase1_steps = 50;
  c.mining_score_threshold = 0.999;
  const Workspace ws = make_workspace(c, 0);
  const Phase1Result r = phase1_mine(ws);
  EXPECT_LT(r.report.num_pseudo_labels, 5u);
  if (r.report.num_pseudo_labels == 0) EXPECT_FALSE(r.report.warnings.empty());
}

TEST(Phase2, RescoresEveryLabelAndAgreesAtZeroShift) {
  const PipelineConfig c = small_config(0.0);
  const Workspace ws = make_workspace(c, 1);
  const Phase1Result p1 = phase1_mine(ws);
  const Phase2Result p2 = phase2_rescore(ws, p1.pseudo_labels);
  ASSERT_EQ(p2.pseudo_labels.size(), p1.pseudo_labels.size());
  for (std::size_t s = 0; s < p2.pseudo_labels.size(); ++s) {
    ASSERT_EQ(p2.pseudo_labels[s].size(), p1.pseudo_labels[s].size());
    for (std::size_t i = 0; i < p2.pseudo_labels[s].size(); ++i) {
      const PseudoLabel& a = p2.pseudo_labels[s][i];
      const PseudoLabel& b = p1.pseudo_labels[s][i];
      EXPECT_EQ(a.aux_logits.size(), static_cast<std::size_t>(c.world.num_classes + 1));
      EXPECT_EQ(a.box, b.box);
      EXPECT_EQ(a.class_index, b.class_index);
    }
  }
  EXPECT_EQ(p2.report.num_pseudo_labels, p1.report.num_pseudo_labels);
  EXPECT_GT(p2.report.aux_agreement, 0.9);
  EXPECT_GT(p2.report.aux_accuracy, 0.9);
}

TEST(Phase2, DisabledLeavesNoAuxScoresAndWarns) {
  PipelineConfig c = small_config(0.0);
  c.phase1_steps = 100;
  c.use_phase2 = false;
  const Workspace ws = make_workspace(c, 0);
  const Phase1Result p1 = phase1_mine(ws);
  const Phase2Result p2 = phase2_rescore(ws, p1.pseudo_labels);
  for (const auto& scene : p2.pseudo_labels)
    for (const PseudoLabel& pl : scene) EXPECT_TRUE(pl.aux_logits.empty());
  EXPECT_EQ(p2.report.warnings.size(), 1u);
}

TEST(TargetRois, HugeAlphaTargetsReachAuxAndMinedBox) {
  const PipelineConfig c = small_config();
  const Workspace ws = make_workspace(c, 2);
  Rng rng(3);
  const DetectorParams params = DetectorParams::random(ws.feature_dim(), ws.num_foreground(), rng, 0, 1.0);
  const std::vector<double> aux{-1.0, 0.4, 2.0, -0.3};
  const SingleLabelScene s = single_label_scene(ws, aux);
  const RetrainOptions opt{{true, true, true}, AlphaSchedule::constant(1e6), true};
  const auto batch = target_batch(ws, s, params, opt, 1e6);
  const auto want = CategoricalDistribution(aux).probabilities();
  std::size_t positives = 0;
  for (const TrainingInstance& inst : batch) {
    if (!inst.box_target) continue;
    ++positives;
    EXPECT_LT(max_abs_diff(inst.soft_label, want), 1e-3);
    EXPECT_LT(box_diff(*inst.box_target, s.labels[0].box), 1e-3);
  }
  EXPECT_EQ(positives, std::min(foreground_quota(c), s.assignment.positives.size()));
  EXPECT_EQ(batch.size(), static_cast<std::size_t>(c.rois_per_scene));
  EXPECT_NO_THROW(check_targets(batch, 0));
}

TEST(TargetRois, WithoutAuxHugeAlphaTargetsReachSoftenedOneHot) {
  const PipelineConfig c = small_config();
  const Workspace ws = make_workspace(c, 2);
  Rng rng(4);
  const DetectorParams params = DetectorParams::random(ws.feature_dim(), ws.num_foreground(), rng, 0, 1.0);
  const SingleLabelScene s = single_label_scene(ws, {});
  const auto want = softened_one_hot(static_cast<std::size_t>(s.labels[0].class_index), c.epsilon_aux,
                                     ws.num_foreground()).probabilities();
  for (bool use_aux : {true, false}) {
    const RetrainOptions opt{{true, false, false}, AlphaSchedule::constant(1e6), use_aux};
    for (const TrainingInstance& inst : target_batch(ws, s, params, opt, 1e6)) {
      if (inst.box_target) EXPECT_LT(max_abs_diff(inst.soft_label, want), 1e-3);
    }
  }
}

TEST(TargetRois, AlphaZeroTargetsAreOwnPrediction) {
  const PipelineConfig c = small_config();
  const Workspace ws = make_workspace(c, 2);
  Rng rng(5);
  const DetectorParams params = DetectorParams::random(ws.feature_dim(), ws.num_foreground(), rng, 0, 1.0);
  const SingleLabelScene s = single_label_scene(ws, {0.1, 0.2, 0.3, 0.4});
  const RetrainOptions opt{{true, true, false}, AlphaSchedule::constant(0.0), true};
  for (const TrainingInstance& inst : target_batch(ws, s, params, opt, 0.0)) {
    if (!inst.box_target) continue;
    const DetectorOutput live = forward_pooled(params, inst.features, inst.proposal);
    EXPECT_LT(max_abs_diff(inst.soft_label, live.classes.probabilities()), 1e-12);
    EXPECT_LT(box_diff(*inst.box_target, live.box), 1e-12);
  }
}

TEST(TargetRois, CorrectionsOffGiveHardLabelsAndMinedBox) {
  const PipelineConfig c = small_config();
  const Workspace ws = make_workspace(c, 2);
  Rng rng(6);
  const DetectorParams params = DetectorParams::random(ws.feature_dim(), ws.num_foreground(), rng, 0, 1.0);
  const SingleLabelScene s = single_label_scene(ws, {0.1, 0.2, 0.3, 0.4});
  const RetrainOptions opt{{false, false, false}, AlphaSchedule::constant(0.0), true};
  const std::size_t k_out = ws.num_foreground() + 1;
  for (const TrainingInstance& inst : target_batch(ws, s, params, opt, 0.0)) {
    if (inst.box_target) {
      EXPECT_EQ(inst.soft_label, one_hot(static_cast<std::size_t>(s.labels[0].class_index), k_out));
      EXPECT_EQ(*inst.box_target, s.labels[0].box);
    } else {
      EXPECT_EQ(inst.soft_label, one_hot(0, k_out));
    }
  }
}

TEST(TargetRois, SoftenedBackgroundGoesToHighestScoringNegatives) {
  const PipelineConfig c = small_config();
  const Workspace ws = make_workspace(c, 2);
  Rng rng(7);
  const DetectorParams params = DetectorParams::random(ws.feature_dim(), ws.num_foreground(), rng, 0, 1.0);
  const SingleLabelScene s = single_label_scene(ws, {});
  const RetrainOptions opt{{false, false, true}, AlphaSchedule::constant(0.0), true};
  const auto batch = target_batch(ws, s, params, opt, 0.0);
  const auto softened = softened_one_hot(0, c.epsilon_fn, ws.num_foreground()).probabilities();

  auto fg_score = [&](std::span<const double> f) { return 1.0 - softmax(evaluate_heads(params, f).logits)[0]; };
  double lowest_softened = 2.0;
  std::size_t n_softened = 0;
  for (const TrainingInstance& inst : batch) {
    if (inst.box_target || inst.soft_label != softened) continue;
    ++n_softened;
    lowest_softened = std::min(lowest_softened, fg_score(inst.features));
  }
  EXPECT_EQ(n_softened, static_cast<std::size_t>(c.hard_negative_count));
  const SceneCache& sc = ws.target.scenes[s.scene];
  std::vector<double> neg_scores;
  for (std::size_t i : s.assignment.negatives) neg_scores.push_back(fg_score(sc.features(i, ws.feature_dim())));
  std::sort(neg_scores.rbegin(), neg_scores.rend());
  EXPECT_EQ(lowest_softened, neg_scores[static_cast<std::size_t>(c.hard_negative_count) - 1]);
}

TEST(CheckTargets, RejectsNonDistributionsAndDegenerateBoxes) {
  const std::vector<double> f{1.0};
  const BoundingBox p{0, 0, 2, 2};
  std::vector<TrainingInstance> batch{{f, p, {0.5, 0.5}, std::nullopt}};
  EXPECT_NO_THROW(check_targets(batch, 0));
  batch[0].soft_label = {0.6, 0.6};
  EXPECT_THROW(check_targets(batch, 3), NumericalError);
  batch[0].soft_label = {1.5, -0.5};
  EXPECT_THROW(check_targets(batch, 3), NumericalError);
  batch[0].soft_label = {std::nan(""), 1.0};
  EXPECT_THROW(check_targets(batch, 3), NumericalError);
  batch[0].soft_label = {0.0, 1.0};
  batch[0].box_target = BoundingBox{0, 0, 0, 1};
  EXPECT_THROW(check_targets(batch, 3), NumericalError);
}

TEST(Phase3, BaselineIgnoresAlphaWhenCorrectionsAreOff) {
  PipelineConfig c = small_config(1.0);
  c.phase1_steps = 200;
  c.phase3_steps = 150;
  const Workspace ws = make_workspace(c, 3);
  const Phase1Result p1 = phase1_mine(ws);
  ASSERT_GT(p1.report.num_pseudo_labels, 0u);
  const Phase2Result p2 = phase2_rescore(ws, p1.pseudo_labels);
  const auto baseline = phase3_robust_retrain(ws, p2.pseudo_labels, retrain_options(c, Variant::pseudo_label)).params;
  const AblationFlags off{false, false, false};
  for (const RetrainOptions& opt : {RetrainOptions{off, AlphaSchedule::constant(0.0), true},
                                    RetrainOptions{off, c.alpha_schedule, true},
                                    RetrainOptions{off, AlphaSchedule::constant(1e6), false}}) {
    EXPECT_EQ(phase3_robust_retrain(ws, p2.pseudo_labels, opt).params, baseline);
  }
  const auto corrected = phase3_robust_retrain(ws, p2.pseudo_labels, retrain_options(c, Variant::ours_full)).params;
  EXPECT_NE(corrected, baseline);
}

TEST(Phase3, NoPseudoLabelsStillTrainsOnSource) {
  PipelineConfig c = small_config();
  c.phase3_steps = 20;
  const Workspace ws = make_workspace(c, 0);
  const PseudoLabelSet empty(ws.target.data.size());
  const Phase3Result r = phase3_robust_retrain(ws, empty);
  EXPECT_EQ(r.report.steps, 20);
  EXPECT_TRUE(std::isfinite(r.report.final_loss));
}

TEST(Variants, NamesRoundTripAndUnknownNamesAreConfigErrors) {
  for (Variant v : kAllVariants) EXPECT_EQ(parse_variant(to_string(v)), v);
  EXPECT_THROW(parse_variant("ours"), ConfigError);
  EXPECT_THROW(parse_variant(""), ConfigError);
  const PipelineConfig c;
  EXPECT_THROW(retrain_options(c, Variant::source_only), ConfigError);
  EXPECT_THROW(retrain_options(c, Variant::oracle_target), ConfigError);
  EXPECT_EQ(retrain_options(c, Variant::ours_cls).flags, (AblationFlags{true, false, false}));
  EXPECT_EQ(retrain_options(c, Variant::ours_cls_box).flags, (AblationFlags{true, true, false}));
  EXPECT_EQ(retrain_options(c, Variant::ours_full).flags, (AblationFlags{true, true, true}));
}

TEST(Config, JsonRoundTrip) {
  PipelineConfig c;
  c.world.domain_shift.prototype_shift = 0.75;
  c.phase2_steps = 77;
  c.alpha_schedule = AlphaSchedule(50.0, 1.0, 300);
  c.ablation.box_r = false;
  c.seeds = {4, 9};
  c.jobs = 3;
  const json j = to_json(c);
  EXPECT_EQ(to_json(config_from_json(j)), j);
}

TEST(Config, UnknownKeysAndBadValuesAreConfigErrors) {
  const json base = to_json(PipelineConfig{});
  auto expect_field = [](const json& j, const std::string& field) {
    try {
      config_from_json(j);
      ADD_FAILURE() << "expected ConfigError for " << field;
    } catch (const ConfigError& e) {
      EXPECT_NE(e.field().find(field), std::string::npos) << e.what();
    }
  };
  json j = base;
  j["method"]["alpha_schedule"]["stop"] = 1.0;
  expect_field(j, "method.alpha_schedule");
  j = base;
  j["bogus"] = 1;
  expect_field(j, "bogus");
  j = base;
  j["method"]["nms_iou"] = 1.5;
  expect_field(j, "method.nms_iou");
  j = base;
  j["data"]["n_source_scenes"] = "many";
  expect_field(j, "data.n_source_scenes");
  j = base;
  j["method"]["alpha_schedule"]["end"] = -1.0;
  expect_field(j, "method.alpha_schedule");
  j = base;
  j["seeds"] = json::array();
  expect_field(j, "seeds");
  EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(Experiment, DeterministicReportWithOneRowPerVariantAndSeed) {
  PipelineConfig c = small_config(1.0);
  c.n_source_scenes = 20;
  c.n_target_scenes = 10;
  c.n_eval_scenes = 10;
  c.phase1_steps = 80;
  c.phase2_steps = 40;
  c.phase3_steps = 80;
  c.seeds = {0, 1, 2};
  const std::vector<Variant> vs{Variant::ours_full, Variant::source_only, Variant::pseudo_label};
  const ExperimentReport a = run_experiment(c, vs);
  c.jobs = 3;
  const ExperimentReport b = run_experiment(c, vs);
  EXPECT_EQ(report_csv(a, c.world.num_classes), report_csv(b, c.world.num_classes));

  const std::vector<Variant> canonical{Variant::source_only, Variant::pseudo_label, Variant::ours_full};
  EXPECT_EQ(a.variants, canonical);
  ASSERT_EQ(a.rows.size(), 9u);
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_EQ(a.rows[i].variant, canonical[i / 3]);
    EXPECT_EQ(a.rows[i].seed, c.seeds[i % 3]);
    EXPECT_EQ(a.rows[i].eval.class_ap.size(), static_cast<std::size_t>(c.world.num_classes));
  }
  for (Variant v : canonical) {
    const auto per_seed = a.per_seed(v);
    ASSERT_NE(a.mean_of(v), nullptr);
    EXPECT_NEAR(a.mean_of(v)->mean_map, std::accumulate(per_seed.begin(), per_seed.end(), 0.0) / 3.0, 1e-12);
  }
  EXPECT_FALSE(a.rows[0].pseudo_quality.has_value());
  EXPECT_TRUE(a.rows[3].pseudo_quality.has_value());

  std::istringstream csv(report_csv(a, c.world.num_classes));
  std::size_t lines = 0;
  for (std::string l; std::getline(csv, l);) ++lines;
  EXPECT_EQ(lines, 1u + 9u + 3u);
  EXPECT_THROW(run_experiment(c, {}), ConfigError);
}
