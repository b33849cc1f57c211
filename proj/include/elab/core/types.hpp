#pragma once

#include <array>
#include <utility>
#include <vector>

#include "elab/core/vec3.hpp"

namespace elab {

// Observation of one combustion cycle, as seen by the controller at the start
// of the next cycle. All previous-cycle quantities, plus the previous and
// current load setpoints. Order matters: as_array() defines the network input
// layout and the wire layout.
struct CycleState {
  double alpha50_prev = 0.0;   // combustion phasing, deg CA
  double q_prev = 0.0;         // heat release, J
  double pmi_prev = 0.0;       // indicated mean effective pressure, bar
  double dpmax_prev = 0.0;     // max pressure rise rate, bar/deg CA
  double ion_max_prev = 0.0;   // ion-current peak, a.u. (>= 0)
  double ion_int_prev = 0.0;   // ion-current integral, a.u. (>= 0)
  double pmi_sp_prev = 0.0;    // previous load setpoint, bar
  double pmi_sp = 0.0;         // current load setpoint, bar

  static constexpr int kComponents = 8;

  std::array<double, kComponents> as_array() const {
    return {alpha50_prev, q_prev,       pmi_prev,    dpmax_prev,
            ion_max_prev, ion_int_prev, pmi_sp_prev, pmi_sp};
  }
  static CycleState from_array(const std::array<double, kComponents>& a) {
    return {a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7]};
  }
};

// Physical actuator command for one cycle.
struct ActionVector {
  double alpha_nvo = 0.0;  // NVO duration, deg CA
  double t_inj_g = 0.0;    // gasoline injection duration, ms
  double t_inj_e = 0.0;    // ethanol injection duration, ms

  std::array<double, 3> as_array() const { return {alpha_nvo, t_inj_g, t_inj_e}; }
  static ActionVector from_array(const std::array<double, 3>& a) { return {a[0], a[1], a[2]}; }
};

// Unbounded actor output, before the tanh range mapping.
using RawAction = std::array<double, 3>;

// Per-action range plus the load-indexed start-point table. Start points are
// the known-safe operating points the normalized action space is anchored to.
struct ActionBounds {
  ActionVector u_min{170.0, 0.25, 0.0};
  ActionVector u_max{210.0, 1.0, 0.4};
  // (setpoint bar -> start point), keys strictly increasing.
  std::vector<std::pair<double, ActionVector>> start_points;

  // Piecewise-linear interpolation between table entries, clamped outside.
  ActionVector start_point(double setpoint) const;

  void validate() const;  // throws ConfigError on violated invariants
};

ActionBounds default_action_bounds();

// alpha50 bin edges plus dedicated underflow/overflow/misfire classes.
// Class indices: 0 = misfire, 1 = underflow, 2..bins+1 = alpha50 bins in edge
// order, bins+2 = overflow. The enumeration is internal; only totality and
// stability matter.
struct ClassifierConfig {
  std::vector<double> alpha50_edges;  // strictly increasing, deg CA
  double misfire_q_threshold = 50.0;  // J; q_prev below this flags a misfire

  int bins() const { return static_cast<int>(alpha50_edges.size()) - 1; }
  int class_count() const { return bins() + 3; }
  int misfire_class() const { return 0; }
  int underflow_class() const { return 1; }
  int overflow_class() const { return bins() + 2; }

  void validate() const;
};

ClassifierConfig default_classifier();

// Total over all states: every previous cycle maps to exactly one class.
int classify_state(const CycleState& state, const ClassifierConfig& cfg);

// L unit vectors in normalized action space along which limits are measured.
struct DirectionSet {
  std::vector<Vec3> dirs;

  int count() const { return static_cast<int>(dirs.size()); }
  void validate() const;  // unit norm, no duplicates, L >= 2
};

// All 26 nonzero sign vectors of {-1,0,1}^3, normalized. l must be 26 here;
// other direction counts come from an explicit config list.
DirectionSet default_direction_set(int l = 26);

// Physical constants shared by reward and safety checks.
struct EngineConstants {
  double v_h = 0.5e-3;                // displacement, m^3
  double lcv_gasoline = 44.3;         // MJ/kg
  double lcv_ethanol = 26.8;          // MJ/kg
  double dpmax_limit = 5.0;           // bar/deg CA
  double misfire_tolerance = 0.3;     // bar below setpoint still tolerated
  double t_eth_min_open = 0.08;       // ms, injector minimum opening time

  void validate() const;
};

// Per-component mapping of the tanh-squashed raw action onto [u_min, u_max].
ActionVector map_raw_action(const RawAction& u_raw, const ActionBounds& bounds);

// Start-point anchored normalization: u_start maps to 0, u_max to +1, u_min
// to -1, linear on either side.
Vec3 normalize_action(const ActionVector& u, const ActionVector& u_start,
                      const ActionBounds& bounds);

// Exact inverse of normalize_action. Components must lie in [-1, 1].
ActionVector denormalize_action(const Vec3& u_norm, const ActionVector& u_start,
                                const ActionBounds& bounds);

// Outputs of one combustion cycle. Fuel masses are included because the
// reward's efficiency and ethanol-share terms need them.
struct CycleOutputs {
  double alpha50 = 0.0;  // deg CA
  double q = 0.0;        // J
  double pmi = 0.0;      // bar
  double dpmax = 0.0;    // bar/deg CA
  double ion_max = 0.0;  // a.u.
  double ion_int = 0.0;  // a.u.
  double m_g = 0.0;      // mg gasoline injected
  double m_e = 0.0;      // mg ethanol injected
  bool misfire = false;
};

// Anything that turns an actuator command into one cycle of measurements.
class CycleEnv {
 public:
  virtual ~CycleEnv() = default;
  virtual CycleOutputs step(const ActionVector& action, double pmi_sp) = 0;
};

}  // namespace elab
