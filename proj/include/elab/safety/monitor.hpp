#pragma once

#include <string>
#include <vector>

#include "elab/core/types.hpp"
#include "elab/core/vec3.hpp"

namespace elab::safety {

struct SafetyConfig {
  double dr_tol = 0.15;   // tolerance window added to the interpolated limit
  int n_neighbors = 3;    // directions considered for the interpolation

  void validate(int direction_count) const;
};

// Per-(class, direction) exploration state and learned limits, all in
// normalized action space:
//   r      current exploration radius in [0, 1]
//   r_lim  estimated safe radius in [0, 1]
//   z_lim  confidence counter (number of limit updates)
//   o      exploration orientation, +1 away from / -1 toward the start point
// The matrices are only meaningful together with the classifier, bounds and
// direction set they were measured under; config_hash ties them together.
struct LimitationMatrices {
  int classes = 0;
  DirectionSet directions;
  std::vector<double> r;
  std::vector<double> r_lim;
  std::vector<int> z_lim;
  std::vector<int> o;
  std::string config_hash;
  bool partial = false;

  static LimitationMatrices init(int classes, DirectionSet directions, std::string config_hash);

  size_t idx(int k, int l) const { return static_cast<size_t>(k) * directions.count() + l; }
  void validate() const;
};

// Distance from u_norm to the line spanned by the unit direction v.
double perpendicular_distance(const Vec3& u_norm, const Vec3& v);

// Counter-weighted inverse-distance interpolation of neighboring r_lim
// entries along the query direction, plus the tolerance window. Candidate
// directions are those with positive dot product with u_norm. Degenerate
// cases (distance ties, zero counters) fall back as documented in the code.
double safe_radius(const Vec3& u_norm, int k, const LimitationMatrices& mats,
                   const SafetyConfig& cfg);

struct FilterResult {
  ActionVector u_safe{};   // the action that may be applied to the engine
  double dr_sf = 0.0;      // min(r_safe - ||u_norm||, 0), the reward metric
  bool replaced = false;
};

// Maps the raw action into bounds, checks it against the class-dependent safe
// radius and radially projects it back when it violates. Total function.
FilterResult filter_action(const RawAction& u_raw, const CycleState& state,
                           const LimitationMatrices& mats, const SafetyConfig& cfg,
                           const ActionBounds& bounds, const ClassifierConfig& classifier);

// CSV with one row per (class, direction) plus a JSON sidecar carrying the
// version, config hash and partial flag. Loading verifies the sidecar hash
// against the active configuration and refuses mismatches.
void save_matrices(const LimitationMatrices& mats, const std::string& csv_path);
LimitationMatrices load_matrices(const std::string& csv_path, const std::string& expected_hash);

}  // namespace elab::safety
