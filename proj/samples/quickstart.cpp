// Runs the three phases once on a small shifted world and prints what each phase produced.

#include <iomanip>
#include <iostream>

#include "robustst/pipeline.hpp"

int main() {
  using namespace robustst;

  PipelineConfig config;
  config.n_source_scenes = 80;
  config.n_target_scenes = 60;
  config.n_eval_scenes = 40;
  config.phase1_steps = 1200;
  config.phase2_steps = 600;
  config.phase3_steps = 1200;
  config.lr.drop_step = 900;
  config.alpha_schedule = AlphaSchedule(100.0, 0.5, 900);

  const Workspace ws = make_workspace(config, 0);
  std::cout << std::fixed << std::setprecision(3);

  const Phase1Result p1 = phase1_mine(ws);
  const PseudoLabelQuality& q = *p1.report.pseudo_quality;
  std::cout << "phase 1: " << q.num_pseudo << " pseudo-labels, " << q.false_positives << " false positives, "
            << q.false_negatives << " missed objects, class accuracy " << q.class_accuracy << '\n';

  const Phase2Result p2 = phase2_rescore(ws, p1.pseudo_labels);
  std::cout << "phase 2: aux classifier agrees with " << p2.report.aux_agreement << " of the mined labels, accuracy "
            << p2.report.aux_accuracy << '\n';

  const Phase3Result p3 = phase3_robust_retrain(ws, p2.pseudo_labels, &p1.params);
  std::cout << "target AP  source only " << evaluate_detector(ws, p1.params).map << "  after retraining "
            << evaluate_detector(ws, p3.params).map << '\n';
}
