#pragma once

#include <span>
#include <string>
#include <vector>

#include "elab/orch/cycle_log.hpp"

namespace elab::orch {

// Aggregates over a span of cycle rows, mirroring the paper-style metric set.
struct Summary {
  long cycles = 0;
  double rmse_pmi = 0.0;        // sqrt(mean((pmi - setpoint)^2))
  double stability = 0.0;       // sqrt(sum over consecutive cycles of (d alpha50)^2)
  long dp_violations = 0;       // cycles with dpmax above the limit
  double mean_overshoot = 0.0;  // mean(dpmax - limit) over violating cycles
  double mean_eta = 0.0;        // mean thermal efficiency over firing cycles
  double ethanol_rmse = 0.0;    // sqrt(mean((share - target)^2))
  double mean_reward = 0.0;
  double cum_reward = 0.0;
  long replaced = 0;
  long fallbacks = 0;
  long misfires = 0;
};

Summary summarize(std::span<const CycleRow> rows, const EngineConstants& constants,
                  double ethanol_target);

std::string summary_to_json(const Summary& s);

// Non-discounted cumulative reward per group of `group_size` consecutive
// rows (the presentation used for training curves).
std::vector<double> grouped_cumulative_reward(std::span<const CycleRow> rows, long group_size);

}  // namespace elab::orch
