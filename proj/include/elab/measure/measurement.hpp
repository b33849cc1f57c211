#pragma once

#include <functional>
#include <string>
#include <vector>

#include "elab/core/rng.hpp"
#include "elab/core/types.hpp"
#include "elab/safety/monitor.hpp"

namespace elab::measure {

struct MeasurementConfig {
  double dr_expl = 0.02;  // radial step in normalized action space
  double r_max = 1.0;
  enum class DirectionPolicy { Random, RoundRobin };
  DirectionPolicy direction_policy = DirectionPolicy::Random;
  // Optional early stop: every cell of every visited class has this many
  // limit updates. 0 disables the criterion; the cycle budget always applies.
  int min_z_per_cell = 0;

  void validate() const;
};

// Safe cycle: pressure gradient at or below the limit and IMEP no more than
// the misfire tolerance below the setpoint.
bool is_safe(const CycleOutputs& out, double setpoint, const EngineConstants& k);

// First half of the per-cycle update: advance the cell's radius by one
// oriented step, clipped to [0, r_max], and reverse the orientation when a
// clip boundary is reached. Returns the new radius (the one the next probe
// runs at).
double advance_radius(safety::LimitationMatrices& mats, int k, int l,
                      const MeasurementConfig& cfg);

// Second half: fold the safety observation made at the cell's current radius
// into the limit estimate. Safe above the estimate or unsafe below it updates
// the running average and increments the counter; any unsafe observation
// turns the exploration back toward the start point. Returns true when the
// limit was updated.
bool apply_observation(safety::LimitationMatrices& mats, int k, int l, bool observed_safe);

// Advance + observation fold in one call; the observation is attributed to
// the post-advance radius.
void measurement_step(safety::LimitationMatrices& mats, int k, int l, bool observed_safe,
                      const MeasurementConfig& cfg);

// Probe action for the cell's current radius: start point plus r * v_l in
// normalized space, denormalized and clamped componentwise.
ActionVector next_probe_action(const safety::LimitationMatrices& mats, int k, int l,
                               double setpoint, const ActionBounds& bounds);

struct MeasurementCycle {
  long cycle = 0;
  int class_index = 0;
  int direction = 0;
  double radius = 0.0;
  bool recovery = false;  // misfire-class radius shrink applied this cycle
  CycleState state{};
  double setpoint = 0.0;
  ActionVector action{};
  CycleOutputs out{};
  bool safe = true;
  bool updated = false;
};

struct MeasurementResult {
  safety::LimitationMatrices mats;
  long cycles_run = 0;
  bool partial = false;
  std::string fault;
};

// Drives the environment through `budget` cycles: classify the previous
// cycle, pick a direction, advance the cell's radius, probe, observe, fold
// the observation back in. The setpoint follows random steps over
// `setpoints` with dwell times in [dwell_min, dwell_max]. `on_cycle` sees
// every probed cycle (for logging and replay-buffer prefill).
MeasurementResult run_measurement(CycleEnv& env, safety::LimitationMatrices mats,
                                  const ActionBounds& bounds, const ClassifierConfig& classifier,
                                  const EngineConstants& constants, const MeasurementConfig& cfg,
                                  const std::vector<double>& setpoints, int dwell_min,
                                  int dwell_max, long budget, RngStream& dir_rng,
                                  RngStream& profile_rng,
                                  const std::function<void(const MeasurementCycle&)>& on_cycle = {});

}  // namespace elab::measure
