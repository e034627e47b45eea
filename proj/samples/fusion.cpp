// Fused class target and box for a noisy pseudo-label as alpha anneals.

#include <iomanip>
#include <iostream>

#include "robustst/fusion.hpp"

int main() {
  using namespace robustst;

  // Model thinks class 2; the mined label (softened) says class 1.
  const CategoricalDistribution model({0.2, 0.5, 2.0});
  const CategoricalDistribution noisy = softened_one_hot(1, 0.1, 2);
  const BoundingBox predicted{10.0, 12.0, 6.0, 5.0};
  const BoundingBox mined{9.0, 11.0, 8.0, 6.0};

  const AlphaSchedule schedule(100.0, 0.5, 2000);
  std::cout << std::fixed << std::setprecision(3);
  for (std::int64_t step : {0, 500, 1000, 1500, 2000}) {
    const double alpha = schedule.at(step);
    const auto p = fuse_categorical(model, noisy, alpha).probabilities();
    const BoundingBox b = fuse_box(predicted, mined, alpha);
    std::cout << "step " << std::setw(4) << step << "  alpha " << std::setw(7) << alpha << "  q = [" << p[0] << ", "
              << p[1] << ", " << p[2] << "]  box = (" << b.x << ", " << b.y << ", " << b.w << ", " << b.h << ")\n";
  }
}
