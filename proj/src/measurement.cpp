#include "elab/measure/measurement.hpp"

#include <algorithm>
#include <cmath>

#include "elab/core/errors.hpp"

namespace elab::measure {

namespace {

constexpr double kBoundaryTol = 1e-9;

double clip(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

}  // namespace

void MeasurementConfig::validate() const {
  if (!(dr_expl > 0.0 && dr_expl <= r_max && r_max <= 1.0))
    throw ConfigError("measurement requires 0 < dr_expl <= r_max <= 1");
  if (min_z_per_cell < 0) throw ConfigError("min_z_per_cell must be non-negative");
}

bool is_safe(const CycleOutputs& out, double setpoint, const EngineConstants& k) {
  return out.dpmax <= k.dpmax_limit && out.pmi >= setpoint - k.misfire_tolerance;
}

double advance_radius(safety::LimitationMatrices& mats, int k, int l,
                      const MeasurementConfig& cfg) {
  const size_t i = mats.idx(k, l);
  double r = clip(mats.r[i] + mats.o[i] * cfg.dr_expl, 0.0, cfg.r_max);
  // Snap onto the clip boundaries so the orientation flip is exact even after
  // long walks.
  if (r < kBoundaryTol) r = 0.0;
  if (r > cfg.r_max - kBoundaryTol) r = cfg.r_max;
  if (r == 0.0 || r == cfg.r_max) mats.o[i] = -mats.o[i];
  mats.r[i] = r;
  return r;
}

bool apply_observation(safety::LimitationMatrices& mats, int k, int l, bool observed_safe) {
  const size_t i = mats.idx(k, l);
  const double r = mats.r[i];
  bool update = false;
  if (observed_safe) {
    update = r > mats.r_lim[i];
  } else {
    mats.o[i] = -1;
    update = r < mats.r_lim[i];
  }
  if (update) {
    const double z = static_cast<double>(mats.z_lim[i]);
    mats.r_lim[i] = (z * mats.r_lim[i] + r) / (z + 1.0);
    mats.z_lim[i] += 1;
  }
  return update;
}

void measurement_step(safety::LimitationMatrices& mats, int k, int l, bool observed_safe,
                      const MeasurementConfig& cfg) {
  advance_radius(mats, k, l, cfg);
  apply_observation(mats, k, l, observed_safe);
}

ActionVector next_probe_action(const safety::LimitationMatrices& mats, int k, int l,
                               double setpoint, const ActionBounds& bounds) {
  const double r = mats.r[mats.idx(k, l)];
  Vec3 u_norm = scaled(mats.directions.dirs[l], r);
  for (auto& c : u_norm) c = clip(c, -1.0, 1.0);
  return denormalize_action(u_norm, bounds.start_point(setpoint), bounds);
}

namespace {

// Random load steps with random dwell, mirroring transient operation.
struct SetpointWalk {
  const std::vector<double>& setpoints;
  int dwell_min, dwell_max;
  double current = 0.0;
  int remaining = 0;

  double next(RngStream& rng) {
    if (remaining <= 0) {
      current = setpoints[rng.uniform_index(setpoints.size())];
      remaining = static_cast<int>(rng.uniform_int(dwell_min, dwell_max));
    }
    --remaining;
    return current;
  }
};

CycleState make_state(const CycleOutputs& prev, double sp_prev, double sp) {
  return {prev.alpha50, prev.q, prev.pmi, prev.dpmax, prev.ion_max, prev.ion_int, sp_prev, sp};
}

}  // namespace

MeasurementResult run_measurement(CycleEnv& env, safety::LimitationMatrices mats,
                                  const ActionBounds& bounds, const ClassifierConfig& classifier,
                                  const EngineConstants& constants, const MeasurementConfig& cfg,
                                  const std::vector<double>& setpoints, int dwell_min,
                                  int dwell_max, long budget, RngStream& dir_rng,
                                  RngStream& profile_rng,
                                  const std::function<void(const MeasurementCycle&)>& on_cycle) {
  cfg.validate();
  if (setpoints.empty()) throw ConfigError("measurement needs a non-empty setpoint set");
  if (dwell_min < 1 || dwell_max < dwell_min) throw ConfigError("invalid dwell range");

  MeasurementResult result;
  const int l_count = mats.directions.count();
  std::vector<int> round_robin(mats.classes, 0);

  SetpointWalk walk{setpoints, dwell_min, dwell_max};
  double sp = walk.next(profile_rng);
  double sp_prev = sp;

  // Prime the one-cycle state with a start-point cycle.
  CycleOutputs prev_out;
  try {
    prev_out = env.step(bounds.start_point(sp), sp);
  } catch (const std::exception& e) {
    result.mats = std::move(mats);
    result.partial = true;
    result.fault = e.what();
    return result;
  }

  for (long cycle = 0; cycle < budget; ++cycle) {
    const double sp_next = walk.next(profile_rng);
    const CycleState state = make_state(prev_out, sp_prev, sp_next);
    sp_prev = sp_next;
    sp = sp_next;

    const int k = classify_state(state, classifier);
    int l;
    if (cfg.direction_policy == MeasurementConfig::DirectionPolicy::Random) {
      l = static_cast<int>(dir_rng.uniform_index(l_count));
    } else {
      l = round_robin[k];
      round_robin[k] = (round_robin[k] + 1) % l_count;
    }

    MeasurementCycle mc;
    mc.cycle = cycle;
    mc.class_index = k;
    mc.direction = l;
    mc.state = state;
    mc.setpoint = sp;

    // Recovery heuristic: after a misfire, pull the probe radius halfway
    // back toward the start point before continuing.
    if (k == classifier.misfire_class()) {
      const size_t i = mats.idx(k, l);
      const double steps = std::floor(mats.r[i] / cfg.dr_expl / 2.0 + 1e-9);
      mats.r[i] = steps * cfg.dr_expl;
      mc.recovery = true;
    }

    mc.radius = advance_radius(mats, k, l, cfg);
    mc.action = next_probe_action(mats, k, l, sp, bounds);
    try {
      mc.out = env.step(mc.action, sp);
    } catch (const std::exception& e) {
      result.mats = std::move(mats);
      result.cycles_run = cycle;
      result.partial = true;
      result.fault = e.what();
      return result;
    }
    mc.safe = is_safe(mc.out, sp, constants);
    mc.updated = apply_observation(mats, k, l, mc.safe);
    prev_out = mc.out;

    if (on_cycle) on_cycle(mc);
    result.cycles_run = cycle + 1;

    if (cfg.min_z_per_cell > 0) {
      bool all_done = true;
      for (int kk = 0; kk < mats.classes && all_done; ++kk) {
        bool visited = false;
        for (int ll = 0; ll < l_count; ++ll)
          if (mats.r[mats.idx(kk, ll)] > 0.0 || mats.z_lim[mats.idx(kk, ll)] > 0) visited = true;
        if (!visited) continue;
        for (int ll = 0; ll < l_count; ++ll)
          if (mats.z_lim[mats.idx(kk, ll)] < cfg.min_z_per_cell) all_done = false;
      }
      if (all_done) break;
    }
  }

  result.mats = std::move(mats);
  return result;
}

}  // namespace elab::measure
