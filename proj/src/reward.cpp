#include "elab/reward/reward.hpp"

#include <algorithm>
#include <cmath>

#include "elab/core/errors.hpp"

namespace elab::reward {

double reward_term(double f, const TermParams& p) {
  const double value = std::tanh(p.c1 * f + p.c2) * p.c3 + p.c4 * f + p.c5;
  return std::min(value, 0.0);
}

double efficiency(double pmi_bar, double m_g_mg, double m_e_mg, const EngineConstants& k) {
  const double fuel_energy_j = m_g_mg * k.lcv_gasoline + m_e_mg * k.lcv_ethanol;
  if (!(fuel_energy_j > 0.0)) throw ContractError("efficiency: zero fuel energy");
  const double work_j = pmi_bar * 1e5 * k.v_h;
  return work_j / fuel_energy_j;
}

double ethanol_energy_share(double m_g_mg, double m_e_mg, const EngineConstants& k) {
  const double total = m_g_mg * k.lcv_gasoline + m_e_mg * k.lcv_ethanol;
  if (!(total > 0.0)) throw ContractError("ethanol_energy_share: zero fuel energy");
  return m_e_mg * k.lcv_ethanol / total;
}

const std::array<const char*, 6>& RewardBreakdown::component_names() {
  static const std::array<const char*, 6> names = {"load",   "stability",  "gradient",
                                                   "safety", "efficiency", "ethanol"};
  return names;
}

RewardBreakdown total_reward(const CycleOutputs& out, double pmi_sp, double alpha50_prev,
                             double dr_sf, const RewardParams& params, const EngineConstants& k) {
  RewardBreakdown r;

  const double d_pmi = out.pmi - pmi_sp;
  r.f[0] = d_pmi * d_pmi;

  const double d_alpha = out.alpha50 - alpha50_prev;
  r.f[1] = d_alpha * d_alpha;

  r.f[2] = out.dpmax - k.dpmax_limit;

  r.f[3] = dr_sf;

  double eta = 0.0;
  if (!out.misfire && (out.m_g > 0.0 || out.m_e > 0.0)) {
    eta = efficiency(out.pmi, out.m_g, out.m_e, k);
  }
  r.f[4] = params.efficiency_sign == EfficiencySign::Corrected ? -eta : eta;

  double d_share = 0.0;
  if (out.m_g > 0.0 || out.m_e > 0.0) {
    d_share = ethanol_energy_share(out.m_g, out.m_e, k) - params.ethanol_share_target;
  } else {
    d_share = -params.ethanol_share_target;
  }
  r.f[5] = d_share * d_share;

  const std::array<const TermParams*, 6> rows = {&params.load,   &params.stability,
                                                 &params.gradient, &params.safety,
                                                 &params.efficiency, &params.ethanol};
  r.total = 0.0;
  for (int i = 0; i < 6; ++i) {
    r.value[i] = rows[i]->enabled ? reward_term(r.f[i], *rows[i]) : 0.0;
    r.total += r.value[i];
  }
  return r;
}

}  // namespace elab::reward
