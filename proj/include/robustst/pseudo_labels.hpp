#pragma once

#include <vector>

#include "robustst/box.hpp"

namespace robustst {

/// A box mined from a target scene by the source-trained detector.
struct PseudoLabel {
  BoundingBox box;          // initial location, kept fixed through retraining
  int class_index = 1;      // noisy foreground class, 1..C
  double score = 0.0;       // detector score at mining time, in (0, 1]
  std::vector<double> aux_logits;  // auxiliary classifier logits (C + 1), empty until rescored

  bool operator==(const PseudoLabel&) const = default;
};

/// One entry per target scene.
using PseudoLabelSet = std::vector<std::vector<PseudoLabel>>;

inline std::size_t count_labels(const PseudoLabelSet& set) noexcept {
  std::size_t n = 0;
  for (const auto& s : set) n += s.size();
  return n;
}

}  // namespace robustst
