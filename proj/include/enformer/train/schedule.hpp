#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace enformer {

struct OneCycleConfig {
  double pct_start = 0.3;
  double div_factor = 25.0;
  double final_div_factor = 1e4;
};

// One-cycle learning rate: cosine warmup from max_lr/div to max_lr over the
// first pct_start of the run, cosine anneal down to max_lr/(div*final_div).
// The peak value max_lr is hit exactly once, at the end of the warmup.
inline double one_cycle_lr(int64_t step, int64_t total_steps, double max_lr,
                           const OneCycleConfig& cfg = {}) {
  if (total_steps < 1) throw std::invalid_argument("one_cycle_lr: total_steps must be positive");
  if (step < 0 || step >= total_steps)
    throw std::out_of_range("one_cycle_lr: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(total_steps) + ")");
  const double initial = max_lr / cfg.div_factor;
  const double floor_lr = initial / cfg.final_div_factor;
  const int64_t peak = std::max<int64_t>(
      1, std::min<int64_t>(total_steps - 2,
                           std::llround(cfg.pct_start * static_cast<double>(total_steps))));
  const double pi = std::acos(-1.0);
  if (step <= peak) {
    double t = static_cast<double>(step) / static_cast<double>(peak);
    return initial + (max_lr - initial) * 0.5 * (1.0 - std::cos(pi * t));
  }
  double t = static_cast<double>(step - peak) / static_cast<double>(total_steps - 1 - peak);
  return floor_lr + (max_lr - floor_lr) * 0.5 * (1.0 + std::cos(pi * t));
}

}  // namespace enformer
