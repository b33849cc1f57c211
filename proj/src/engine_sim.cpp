#include "elab/sim/engine_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>

#include "elab/core/errors.hpp"

namespace elab::sim {

using json = nlohmann::json;

void CylinderGeometry::validate() const {
  if (!(bore > 0 && stroke > 0 && v_h > 0)) throw ConfigError("cylinder geometry must be positive");
  if (!(compression_ratio > 1.0)) throw ConfigError("compression ratio must exceed 1");
  if (!(conrod_ratio > 1.0)) throw ConfigError("conrod ratio must exceed 1");
}

double cylinder_volume(double theta_deg, const CylinderGeometry& geom) {
  const double v_c = geom.v_h / (geom.compression_ratio - 1.0);
  const double theta = theta_deg * std::numbers::pi / 180.0;
  const double lam = geom.conrod_ratio;
  // Piston travel as a fraction of the stroke; 0 at TDC, 1 at BDC.
  const double s = std::sin(theta);
  const double travel = 0.5 * ((1.0 - std::cos(theta)) + lam - std::sqrt(lam * lam - s * s));
  return v_c + geom.v_h * travel;
}

double predict_expansion_imep(double p_at_theta_bar, double theta_from_deg, double kappa,
                              const CylinderGeometry& geom) {
  if (!(p_at_theta_bar >= 0.0)) throw ContractError("predict_expansion_imep: pressure must be >= 0");
  if (!(kappa > 1.0 && kappa <= 1.7)) throw ContractError("predict_expansion_imep: kappa out of range");
  const double v_from = cylinder_volume(theta_from_deg, geom);
  const double theta_end = 180.0;
  const int steps = static_cast<int>(std::ceil((theta_end - theta_from_deg) / 0.01));
  const double h = (theta_end - theta_from_deg) / steps;
  // Trapezoid over theta of p(theta) * dV/dtheta, with dV from central differences.
  double integral = 0.0;
  double v_prev = v_from;
  double p_prev = p_at_theta_bar;
  for (int i = 1; i <= steps; ++i) {
    const double theta = theta_from_deg + i * h;
    const double v = cylinder_volume(theta, geom);
    const double p = p_at_theta_bar * std::pow(v_from / v, kappa);
    integral += 0.5 * (p + p_prev) * (v - v_prev);
    v_prev = v;
    p_prev = p;
  }
  return integral / geom.v_h;  // bar, since p stayed in bar
}

void EngineSimConfig::validate() const {
  if (!(alpha50_noise_sigma >= 0.0 && dp_noise_sigma >= 0.0))
    throw ConfigError("engine sim noise sigmas must be non-negative");
  if (!(gasoline_slope > 0.0 && ethanol_slope > 0.0)) throw ConfigError("fuel slopes must be positive");
  if (!(burn_efficiency > 0.0 && burn_efficiency <= 1.0))
    throw ConfigError("burn efficiency must be in (0, 1]");
  if (!(eta_peak > 0.0 && eta_floor > 0.0)) throw ConfigError("eta parameters must be positive");
}

EngineSim::EngineSim(EngineSimConfig cfg, CylinderGeometry geom, const ActionBounds& bounds,
                     RngStream noise)
    : cfg_(std::move(cfg)), geom_(geom), bounds_(bounds), noise_(std::move(noise)),
      t_exhaust_prev_(cfg_.exhaust_init) {
  cfg_.validate();
  geom_.validate();
  bounds_.validate();
}

double EngineSim::gasoline_mass(double t_inj_g) const {
  return cfg_.gasoline_slope * std::max(t_inj_g - cfg_.gasoline_dead_time, 0.0);
}

double EngineSim::ethanol_mass(double t_inj_e) const {
  if (t_inj_e < cfg_.ethanol_min_open) return 0.0;
  return cfg_.ethanol_step_mass + cfg_.ethanol_slope * (t_inj_e - cfg_.ethanol_min_open);
}

CycleOutputs EngineSim::evaluate(const ActionVector& action, double t_exhaust_prev,
                                 double noise_alpha, double noise_dp) const {
  CycleOutputs out;
  out.m_g = gasoline_mass(action.t_inj_g);
  out.m_e = ethanol_mass(action.t_inj_e);
  const double fuel_energy = out.m_g * 44.3 + out.m_e * 26.8;  // J (mg * MJ/kg)

  const double x_res = std::clamp(
      cfg_.residual_base + cfg_.residual_slope * (action.alpha_nvo - cfg_.residual_ref_nvo), 0.05,
      0.95);
  const double t_mix = (1.0 - x_res) * cfg_.intake_temperature + x_res * t_exhaust_prev;

  out.alpha50 = cfg_.alpha50_base - cfg_.alpha50_temp_gain * (t_mix - cfg_.alpha50_temp_ref) -
                cfg_.alpha50_fuel_gain * (fuel_energy - cfg_.alpha50_fuel_ref) + noise_alpha;

  out.misfire = t_mix < cfg_.misfire_temperature || out.alpha50 > cfg_.misfire_late_alpha50;
  out.q = (out.misfire ? cfg_.misfire_burn_fraction : cfg_.burn_efficiency) * fuel_energy;

  const double d = out.alpha50 - cfg_.eta_peak_alpha50;
  const double eta_th = std::max(cfg_.eta_peak * (1.0 - cfg_.eta_curvature * d * d), cfg_.eta_floor);
  out.pmi = eta_th * out.q / (geom_.v_h * 1e5);  // J over m^3*1e5 -> bar

  out.dpmax = std::max(cfg_.dp_gain * out.q * std::exp(-cfg_.dp_alpha_decay * out.alpha50) + noise_dp,
                       0.0);
  out.ion_max = cfg_.ion_max_gain * out.q;
  out.ion_int = cfg_.ion_int_gain * out.q;
  return out;
}

CycleOutputs EngineSim::step(const ActionVector& action, double /*pmi_sp*/) {
  const auto a = action.as_array();
  const auto lo = bounds_.u_min.as_array();
  const auto hi = bounds_.u_max.as_array();
  for (int j = 0; j < 3; ++j) {
    if (a[j] < lo[j] - 1e-9 || a[j] > hi[j] + 1e-9)
      throw ContractError("EngineSim::step: action component outside bounds");
  }
  const double noise_alpha = cfg_.deterministic ? 0.0 : noise_.gaussian(0.0, cfg_.alpha50_noise_sigma);
  const double noise_dp = cfg_.deterministic ? 0.0 : noise_.gaussian(0.0, cfg_.dp_noise_sigma);
  const CycleOutputs out = evaluate(action, t_exhaust_prev_, noise_alpha, noise_dp);
  t_exhaust_prev_ = cfg_.exhaust_base + cfg_.exhaust_gain * out.q;
  return out;
}

std::string EngineSim::serialize_state() const {
  json j;
  j["t_exhaust_prev"] = t_exhaust_prev_;
  j["noise"] = noise_.serialize();
  return j.dump();
}

void EngineSim::restore_state(const std::string& text) {
  const json j = json::parse(text);
  t_exhaust_prev_ = j.at("t_exhaust_prev").get<double>();
  noise_.restore(j.at("noise").get<std::string>());
}

void EngineSim::check_safety_structure(const EngineConstants& constants) const {
  bool gradient_exceeded = false;
  bool misfire_found = false;
  const auto lo = bounds_.u_min.as_array();
  const auto hi = bounds_.u_max.as_array();
  constexpr int kGrid = 7;
  // Scan over the action box and the plausible exhaust-temperature range.
  for (double t_exh : {610.0, 700.0, 800.0, 880.0}) {
    for (int ia = 0; ia < kGrid; ++ia) {
      for (int ig = 0; ig < kGrid; ++ig) {
        for (int ie = 0; ie < kGrid; ++ie) {
          const ActionVector u{lo[0] + (hi[0] - lo[0]) * ia / (kGrid - 1.0),
                               lo[1] + (hi[1] - lo[1]) * ig / (kGrid - 1.0),
                               lo[2] + (hi[2] - lo[2]) * ie / (kGrid - 1.0)};
          const CycleOutputs out = evaluate(u, t_exh, 0.0, 0.0);
          if (out.dpmax > constants.dpmax_limit) gradient_exceeded = true;
          if (out.misfire) misfire_found = true;
          if (gradient_exceeded && misfire_found) return;
        }
      }
    }
  }
  if (!gradient_exceeded)
    throw ConfigError("engine sim: no action within bounds exceeds the pressure-gradient limit");
  throw ConfigError("engine sim: no action within bounds produces a misfire");
}

}  // namespace elab::sim
