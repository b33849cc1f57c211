#include "elab/core/types.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "elab/core/errors.hpp"

namespace elab {

namespace {

double lerp(double a, double b, double t) { return a + (b - a) * t; }

}  // namespace

ActionVector ActionBounds::start_point(double setpoint) const {
  if (start_points.empty()) throw ConfigError("start_points table is empty");
  if (setpoint <= start_points.front().first) return start_points.front().second;
  if (setpoint >= start_points.back().first) return start_points.back().second;
  for (size_t i = 0; i + 1 < start_points.size(); ++i) {
    const auto& [s0, u0] = start_points[i];
    const auto& [s1, u1] = start_points[i + 1];
    if (setpoint <= s1) {
      const double t = (setpoint - s0) / (s1 - s0);
      return {lerp(u0.alpha_nvo, u1.alpha_nvo, t), lerp(u0.t_inj_g, u1.t_inj_g, t),
              lerp(u0.t_inj_e, u1.t_inj_e, t)};
    }
  }
  return start_points.back().second;
}

void ActionBounds::validate() const {
  const auto lo = u_min.as_array();
  const auto hi = u_max.as_array();
  for (int j = 0; j < 3; ++j) {
    if (!(lo[j] < hi[j]))
      throw ConfigError("action bounds: u_min must be strictly below u_max (component " +
                        std::to_string(j) + ")");
  }
  if (start_points.empty()) throw ConfigError("start_points table is empty");
  double prev_key = -1e300;
  for (const auto& [sp, u] : start_points) {
    if (!(sp > prev_key)) throw ConfigError("start_points setpoint keys must be strictly increasing");
    prev_key = sp;
    const auto us = u.as_array();
    for (int j = 0; j < 3; ++j) {
      if (!(us[j] > lo[j] && us[j] < hi[j]))
        throw ConfigError("start point at setpoint " + std::to_string(sp) +
                          " is not strictly inside the action bounds");
    }
  }
}

ActionBounds default_action_bounds() {
  ActionBounds b;
  b.u_min = {170.0, 0.25, 0.0};
  b.u_max = {210.0, 1.0, 0.4};
  for (double s : {2.0, 2.5, 3.0, 3.5, 4.0}) {
    b.start_points.push_back(
        {s, ActionVector{200.0 - 6.0 * (s - 2.0), 0.40 + 0.14 * (s - 2.0), 0.04 + 0.03 * (s - 2.0)}});
  }
  return b;
}

void ClassifierConfig::validate() const {
  if (alpha50_edges.size() < 2) throw ConfigError("classifier needs at least two alpha50 edges");
  for (size_t i = 0; i + 1 < alpha50_edges.size(); ++i) {
    if (!(alpha50_edges[i] < alpha50_edges[i + 1]))
      throw ConfigError("classifier alpha50 edges must be strictly increasing");
  }
  if (!(misfire_q_threshold > 0.0)) throw ConfigError("misfire_q_threshold must be positive");
}

ClassifierConfig default_classifier() {
  ClassifierConfig c;
  for (double e = -6.0; e <= 21.0 + 1e-9; e += 3.0) c.alpha50_edges.push_back(e);
  c.misfire_q_threshold = 50.0;
  return c;
}

int classify_state(const CycleState& state, const ClassifierConfig& cfg) {
  if (state.q_prev < cfg.misfire_q_threshold) return cfg.misfire_class();
  const double a = state.alpha50_prev;
  if (a <= cfg.alpha50_edges.front()) return cfg.underflow_class();
  if (a > cfg.alpha50_edges.back()) return cfg.overflow_class();
  // Bins are right-closed: edge_i < alpha50 <= edge_{i+1}.
  const auto it = std::lower_bound(cfg.alpha50_edges.begin(), cfg.alpha50_edges.end(), a);
  const int bin = static_cast<int>(it - cfg.alpha50_edges.begin()) - 1;
  return 2 + bin;
}

void DirectionSet::validate() const {
  if (count() < 2) throw ConfigError("direction set needs at least 2 directions");
  for (const auto& v : dirs) {
    if (std::abs(norm(v) - 1.0) > 1e-12) throw ConfigError("direction vectors must have unit norm");
  }
  for (size_t i = 0; i < dirs.size(); ++i) {
    for (size_t j = i + 1; j < dirs.size(); ++j) {
      if (norm(dirs[i] - dirs[j]) < 1e-12) throw ConfigError("duplicate direction vectors");
    }
  }
}

DirectionSet default_direction_set(int l) {
  if (l < 2) throw ConfigError("direction count must be at least 2");
  if (l != 26)
    throw ConfigError("only the 26-vector default set is generated; other counts need an explicit list");
  DirectionSet set;
  for (int x = -1; x <= 1; ++x) {
    for (int y = -1; y <= 1; ++y) {
      for (int z = -1; z <= 1; ++z) {
        if (x == 0 && y == 0 && z == 0) continue;
        Vec3 v{static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
        const double n = norm(v);
        set.dirs.push_back(scaled(v, 1.0 / n));
      }
    }
  }
  return set;
}

void EngineConstants::validate() const {
  for (double v : {v_h, lcv_gasoline, lcv_ethanol, dpmax_limit, misfire_tolerance, t_eth_min_open}) {
    if (!(v > 0.0)) throw ConfigError("engine constants must be strictly positive");
  }
}

ActionVector map_raw_action(const RawAction& u_raw, const ActionBounds& bounds) {
  const auto lo = bounds.u_min.as_array();
  const auto hi = bounds.u_max.as_array();
  std::array<double, 3> u{};
  for (int j = 0; j < 3; ++j) {
    u[j] = lo[j] + (std::tanh(u_raw[j]) + 1.0) / 2.0 * (hi[j] - lo[j]);
  }
  return ActionVector::from_array(u);
}

Vec3 normalize_action(const ActionVector& u, const ActionVector& u_start,
                      const ActionBounds& bounds) {
  const auto uv = u.as_array();
  const auto sv = u_start.as_array();
  const auto lo = bounds.u_min.as_array();
  const auto hi = bounds.u_max.as_array();
  Vec3 out{};
  for (int j = 0; j < 3; ++j) {
    if (uv[j] >= sv[j]) {
      out[j] = (uv[j] - sv[j]) / (hi[j] - sv[j]);
    } else {
      out[j] = -(uv[j] - sv[j]) / (lo[j] - sv[j]);
    }
  }
  return out;
}

ActionVector denormalize_action(const Vec3& u_norm, const ActionVector& u_start,
                                const ActionBounds& bounds) {
  const auto sv = u_start.as_array();
  const auto lo = bounds.u_min.as_array();
  const auto hi = bounds.u_max.as_array();
  std::array<double, 3> out{};
  for (int j = 0; j < 3; ++j) {
    const double c = u_norm[j];
    if (c < -1.0 - 1e-12 || c > 1.0 + 1e-12)
      throw ContractError("denormalize_action: component " + std::to_string(j) +
                          " outside [-1, 1]: " + std::to_string(c));
    if (c >= 0.0) {
      out[j] = sv[j] + c * (hi[j] - sv[j]);
    } else {
      out[j] = sv[j] - c * (lo[j] - sv[j]);
    }
  }
  return ActionVector::from_array(out);
}

}  // namespace elab
