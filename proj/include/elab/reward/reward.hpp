#pragma once

#include <array>
#include <string>

#include "elab/core/types.hpp"

namespace elab::reward {

// One row of the reward parameterization: the five constants of the clamped
// tanh term plus an enable flag.
struct TermParams {
  double c1 = 0.0, c2 = 0.0, c3 = 0.0, c4 = 0.0, c5 = 0.0;
  bool enabled = true;
};

enum class EfficiencySign {
  // As printed, f = eta: the linear term then penalizes higher efficiency.
  Verbatim,
  // f = -eta, so higher efficiency raises the (still non-positive) reward.
  Corrected,
};

struct RewardParams {
  TermParams load{3.0, 0.0, -1.5, -0.1, 0.0, true};
  TermParams stability{0.015, 0.0, -0.5, -5e-4, 0.0, true};
  TermParams gradient{20.0, -2.0, -0.25, -1.0, -0.241, true};
  TermParams safety{-7.0, -2.0, -0.25, 0.4, -0.241, true};
  TermParams efficiency{0.0, 0.0, 0.0, -5e-3, -0.2, true};
  TermParams ethanol{100.0, 0.0, -0.75, -10.0, 0.0, false};
  double ethanol_share_target = 0.5;  // active when the ethanol term is enabled
  EfficiencySign efficiency_sign = EfficiencySign::Corrected;
};

// min(tanh(c1*f + c2)*c3 + c4*f + c5, 0) — shared shape of every component.
double reward_term(double f, const TermParams& p);

// eta = pmi*V_H / (m_g*LCV_g + m_e*LCV_e); pmi in bar, masses in mg, LCVs in
// MJ/kg (so the denominator is already in J). Zero total fuel is an error;
// callers substitute eta = 0 for misfire cycles.
double efficiency(double pmi_bar, double m_g_mg, double m_e_mg, const EngineConstants& k);

// Fraction of total fuel energy carried by the ethanol, in [0, 1].
double ethanol_energy_share(double m_g_mg, double m_e_mg, const EngineConstants& k);

// Per-component metric and value, plus the total.
struct RewardBreakdown {
  std::array<double, 6> f{};      // load, stability, gradient, safety, efficiency, ethanol
  std::array<double, 6> value{};  // same order, each <= 0
  double total = 0.0;

  static const std::array<const char*, 6>& component_names();
};

// Computes all enabled components for one cycle. `alpha50_prev` feeds the
// stability metric, `dr_sf` is the (non-positive) distance reported by the
// safety monitor. Misfire cycles enter the efficiency term with eta = 0.
RewardBreakdown total_reward(const CycleOutputs& out, double pmi_sp, double alpha50_prev,
                             double dr_sf, const RewardParams& params, const EngineConstants& k);

}  // namespace elab::reward
