// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "conlm/common.hpp"

namespace conlm {

// Piecewise-linear learning-rate law: linear warmup to max_lr, flat hold,
// linear decay to zero.
struct LRSchedule {
  Index warmup_steps = 250;
  Index hold_steps = 5000;
  Index decay_steps = 1750;
  double max_lr = 1.8e-3;

  Index total_steps() const { return warmup_steps + hold_steps + decay_steps; }

  void validate() const {
    if (warmup_steps < 0 || hold_steps < 0 || decay_steps < 0)
      throw ConfigError("LRSchedule: negative segment length");
    if (total_steps() < 1) throw ConfigError("LRSchedule: total_steps must be >= 1");
    if (!(max_lr > 0.0)) throw ConfigError("LRSchedule: max_lr must be positive");
  }

  bool operator==(const LRSchedule&) const = default;
};

inline LRSchedule outer_schedule_default() { return {250, 5000, 1750, 1.8e-3}; }
inline LRSchedule inner_schedule_default() { return {250, 0, 1750, 1.8e-3}; }

inline double lr_at(const LRSchedule& s, Index step) {
  if (step < 0 || step >= s.total_steps())
    throw ConfigError("lr_at: step " + std::to_string(step) + " outside [0, " +
                      std::to_string(s.total_steps()) + ")");
  if (step < s.warmup_steps)
    return s.max_lr * static_cast<double>(step + 1) / static_cast<double>(s.warmup_steps);
  if (step < s.warmup_steps + s.hold_steps) return s.max_lr;
  return s.max_lr * static_cast<double>(s.total_steps() - step) / static_cast<double>(s.decay_steps);
}

}  // namespace conlm
