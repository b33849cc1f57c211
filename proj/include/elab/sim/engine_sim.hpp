#pragma once

#include <string>

#include "elab/core/rng.hpp"
#include "elab/core/types.hpp"

namespace elab::sim {

struct CylinderGeometry {
  double bore = 0.084;       // m
  double stroke = 0.090;     // m
  double compression_ratio = 12.0;
  double v_h = 499e-6;       // m^3, displaced volume
  double conrod_ratio = 3.5; // conrod length / crank radius

  void validate() const;
};

// Crank-slider cylinder volume at crank angle theta (deg CA, 0 = TDC).
// V(0) = V_H/(CR-1), V(180) = V_H*CR/(CR-1), symmetric about TDC.
double cylinder_volume(double theta_deg, const CylinderGeometry& geom);

// Partial IMEP contribution of the expansion from theta_from to 180 deg CA,
// assuming the pressure follows p * V^kappa = const from the known pressure
// p_at_theta (bar) onward. Trapezoidal quadrature with step <= 0.1 deg CA.
double predict_expansion_imep(double p_at_theta_bar, double theta_from_deg, double kappa,
                              const CylinderGeometry& geom);

// Coefficients of the one-cycle-memory surrogate. The structure is what the
// control method needs: residual-gas coupling between consecutive cycles via
// the exhaust temperature, a reachable high-pressure-gradient region, a
// reachable misfire region, and the discrete ethanol injection step.
struct EngineSimConfig {
  double intake_temperature = 323.0;  // K

  // Fuel path: injected mass from injection duration.
  double gasoline_slope = 12.0;     // mg/ms above the dead time
  double gasoline_dead_time = 0.1;  // ms
  double ethanol_min_open = 0.08;   // ms; below this no ethanol is injected
  double ethanol_step_mass = 1.0;   // mg injected right at the minimum opening
  double ethanol_slope = 10.0;      // mg/ms beyond the minimum opening

  // Residual fraction, affine in the NVO duration.
  double residual_base = 0.30;       // at alpha_nvo = residual_ref_nvo
  double residual_slope = 0.005;     // 1/deg CA
  double residual_ref_nvo = 190.0;   // deg CA

  // Exhaust temperature carried to the next cycle. The floor stays warm
  // enough that a misfire at moderate NVO can re-ignite on the next cycle
  // instead of trapping the surrogate in a cold cascade.
  double exhaust_base = 650.0;   // K
  double exhaust_gain = 0.35;    // K/J of heat release
  double exhaust_init = 720.0;   // K, initial internal state

  // Combustion phasing, affine-decreasing in mixture temperature and fuel energy.
  double alpha50_base = 8.0;       // deg CA
  double alpha50_temp_gain = 0.12; // deg CA per K above temp_ref
  double alpha50_temp_ref = 455.0; // K
  double alpha50_fuel_gain = 0.012;  // deg CA per J above fuel_ref
  double alpha50_fuel_ref = 250.0;   // J
  double alpha50_noise_sigma = 0.8;  // deg CA

  // Misfire conditions and burn efficiency.
  double misfire_temperature = 415.0;  // K; colder mixtures misfire
  double misfire_late_alpha50 = 16.0;  // deg CA; later phasing misfires
  double burn_efficiency = 0.95;
  double misfire_burn_fraction = 0.05;

  // Work conversion: thermal-efficiency parabola over phasing.
  double eta_peak = 0.65;
  double eta_curvature = 0.0022;   // 1/(deg CA)^2
  double eta_peak_alpha50 = 8.0;   // deg CA
  double eta_floor = 0.05;

  // Pressure rise rate: dp_max = dp_gain * Q * exp(-dp_alpha_decay * alpha50).
  double dp_gain = 0.032;        // bar/deg CA per J
  double dp_alpha_decay = 0.18;  // 1/deg CA
  double dp_noise_sigma = 0.3;   // bar/deg CA

  // Ion features, increasing in heat release.
  double ion_max_gain = 0.004;
  double ion_int_gain = 0.12;

  bool deterministic = false;  // zeroes both noise sources

  void validate() const;
};

// Stochastic autoregressive surrogate: the only internal state is the
// previous cycle's exhaust temperature, so the process memory spans exactly
// one combustion cycle.
class EngineSim : public CycleEnv {
 public:
  EngineSim(EngineSimConfig cfg, CylinderGeometry geom, const ActionBounds& bounds,
            RngStream noise);

  CycleOutputs step(const ActionVector& action, double pmi_sp) override;

  // Fuel masses for a command, exposed because reward terms need them.
  double gasoline_mass(double t_inj_g) const;
  double ethanol_mass(double t_inj_e) const;

  double exhaust_temperature() const { return t_exhaust_prev_; }
  void set_exhaust_temperature(double t) { t_exhaust_prev_ = t; }

  std::string serialize_state() const;        // internal state + noise stream
  void restore_state(const std::string& text);

  const EngineSimConfig& config() const { return cfg_; }

  // Startup structure check: somewhere within bounds the surrogate exceeds
  // the pressure-gradient limit and somewhere it misfires, so the measurement
  // algorithm has a real boundary to find. Throws ConfigError otherwise.
  void check_safety_structure(const EngineConstants& constants) const;

 private:
  EngineSimConfig cfg_;
  CylinderGeometry geom_;
  ActionBounds bounds_;
  RngStream noise_;
  double t_exhaust_prev_;

  CycleOutputs evaluate(const ActionVector& action, double t_exhaust_prev, double noise_alpha,
                        double noise_dp) const;
};

}  // namespace elab::sim
