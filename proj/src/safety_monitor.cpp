#include "elab/safety/monitor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "elab/core/errors.hpp"

namespace elab::safety {

using json = nlohmann::json;

void SafetyConfig::validate(int direction_count) const {
  if (!(dr_tol >= 0.0)) throw ConfigError("safety dr_tol must be non-negative");
  if (n_neighbors < 1 || n_neighbors > direction_count)
    throw ConfigError("safety n_neighbors must be in [1, L]");
}

LimitationMatrices LimitationMatrices::init(int classes, DirectionSet directions,
                                            std::string config_hash) {
  if (classes < 1) throw ConfigError("limitation matrices need at least one class");
  directions.validate();
  LimitationMatrices m;
  m.classes = classes;
  m.directions = std::move(directions);
  const size_t cells = static_cast<size_t>(classes) * m.directions.count();
  m.r.assign(cells, 0.0);
  m.r_lim.assign(cells, 0.0);
  m.z_lim.assign(cells, 0);
  m.o.assign(cells, 1);
  m.config_hash = std::move(config_hash);
  return m;
}

void LimitationMatrices::validate() const {
  const size_t cells = static_cast<size_t>(classes) * directions.count();
  if (r.size() != cells || r_lim.size() != cells || z_lim.size() != cells || o.size() != cells)
    throw ConfigError("limitation matrices: inconsistent dimensions");
  for (size_t i = 0; i < cells; ++i) {
    if (!(r[i] >= 0.0 && r[i] <= 1.0)) throw ConfigError("limitation matrices: r outside [0, 1]");
    if (!(r_lim[i] >= 0.0 && r_lim[i] <= 1.0))
      throw ConfigError("limitation matrices: r_lim outside [0, 1]");
    if (z_lim[i] < 0) throw ConfigError("limitation matrices: negative counter");
    if (o[i] != 1 && o[i] != -1) throw ConfigError("limitation matrices: orientation not in {-1, +1}");
  }
}

double perpendicular_distance(const Vec3& u_norm, const Vec3& v) {
  const double proj = dot(u_norm, v);
  const Vec3 rest = u_norm - scaled(v, proj);
  return norm(rest);
}

double safe_radius(const Vec3& u_norm, int k, const LimitationMatrices& mats,
                   const SafetyConfig& cfg) {
  const int l_count = mats.directions.count();
  // Candidates: directions on the query's side. Perpendicular distance to a
  // line cannot tell +v from -v, so the half-space test does.
  struct Candidate {
    int l;
    double d;
  };
  std::vector<Candidate> cands;
  cands.reserve(l_count);
  for (int l = 0; l < l_count; ++l) {
    const Vec3& v = mats.directions.dirs[l];
    if (dot(v, u_norm) > 0.0) {
      cands.push_back({l, perpendicular_distance(u_norm, v)});
    }
  }
  if (cands.empty()) return cfg.dr_tol;

  const int n = std::min<int>(cfg.n_neighbors, static_cast<int>(cands.size()));
  std::partial_sort(cands.begin(), cands.begin() + n, cands.end(),
                    [](const Candidate& a, const Candidate& b) {
                      return a.d != b.d ? a.d < b.d : a.l < b.l;
                    });
  cands.resize(n);

  double d_min = cands.front().d;
  double d_max = cands.front().d;
  for (const auto& c : cands) {
    d_min = std::min(d_min, c.d);
    d_max = std::max(d_max, c.d);
  }

  // The printed weight formula divides by (d_max - d_min) and by the
  // z-weighted numerator sum; when either vanishes fall back to counter-only
  // weights and, with no counters at all, to the bare tolerance.
  const bool degenerate = (d_max - d_min) < 1e-12;
  double weight_sum = 0.0;
  std::vector<double> weights(cands.size(), 0.0);
  for (size_t i = 0; i < cands.size(); ++i) {
    const double z = static_cast<double>(mats.z_lim[mats.idx(k, cands[i].l)]);
    const double w = degenerate ? z : ((d_max - cands[i].d) / (d_max - d_min)) * z;
    weights[i] = w;
    weight_sum += w;
  }
  if (!(weight_sum > 0.0)) return cfg.dr_tol;

  double interpolated = 0.0;
  for (size_t i = 0; i < cands.size(); ++i) {
    interpolated += (weights[i] / weight_sum) * mats.r_lim[mats.idx(k, cands[i].l)];
  }
  return cfg.dr_tol + interpolated;
}

FilterResult filter_action(const RawAction& u_raw, const CycleState& state,
                           const LimitationMatrices& mats, const SafetyConfig& cfg,
                           const ActionBounds& bounds, const ClassifierConfig& classifier) {
  FilterResult res;
  const ActionVector u = map_raw_action(u_raw, bounds);
  const ActionVector u_start = bounds.start_point(state.pmi_sp);
  const Vec3 u_norm = normalize_action(u, u_start, bounds);
  const double magnitude = norm(u_norm);
  if (magnitude == 0.0) {
    // At the start point: always safe.
    res.u_safe = u;
    return res;
  }
  const int k = classify_state(state, classifier);
  const double r_safe = safe_radius(u_norm, k, mats, cfg);
  res.dr_sf = std::min(r_safe - magnitude, 0.0);
  if (magnitude > r_safe) {
    res.replaced = true;
    const Vec3 safe_norm = scaled(u_norm, r_safe / magnitude);
    res.u_safe = denormalize_action(safe_norm, u_start, bounds);
  } else {
    res.u_safe = u;  // untouched, bit-identical to the mapped input
  }
  return res;
}

static std::string sidecar_path(const std::string& csv_path) { return csv_path + ".json"; }

void save_matrices(const LimitationMatrices& mats, const std::string& csv_path) {
  mats.validate();
  std::ofstream out(csv_path);
  if (!out) throw ConfigError("cannot write " + csv_path);
  out << "class_index,direction_index,v_x,v_y,v_z,r,r_lim,z_lim,o\n";
  char buf[256];
  for (int k = 0; k < mats.classes; ++k) {
    for (int l = 0; l < mats.directions.count(); ++l) {
      const auto& v = mats.directions.dirs[l];
      const size_t i = mats.idx(k, l);
      std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%d\n", k, l, v[0],
                    v[1], v[2], mats.r[i], mats.r_lim[i], mats.z_lim[i], mats.o[i]);
      out << buf;
    }
  }
  json side;
  side["version"] = 1;
  side["config_hash"] = mats.config_hash;
  side["classes"] = mats.classes;
  side["directions"] = mats.directions.count();
  side["partial"] = mats.partial;
  std::ofstream sout(sidecar_path(csv_path));
  if (!sout) throw ConfigError("cannot write " + sidecar_path(csv_path));
  sout << side.dump(2) << "\n";
}

LimitationMatrices load_matrices(const std::string& csv_path, const std::string& expected_hash) {
  std::ifstream sin(sidecar_path(csv_path));
  if (!sin) throw SafetyPreconditionError("missing sidecar " + sidecar_path(csv_path));
  json side = json::parse(sin);
  if (side.at("version").get<int>() != 1)
    throw SafetyPreconditionError("unsupported matrices version in " + sidecar_path(csv_path));
  const std::string hash = side.at("config_hash").get<std::string>();
  if (!expected_hash.empty() && hash != expected_hash)
    throw SafetyPreconditionError("limitation matrices were measured under a different "
                                  "configuration (hash mismatch)");
  const int classes = side.at("classes").get<int>();
  const int l_count = side.at("directions").get<int>();

  std::ifstream in(csv_path);
  if (!in) throw SafetyPreconditionError("missing matrices file " + csv_path);
  std::string line;
  std::getline(in, line);  // header
  LimitationMatrices m;
  m.classes = classes;
  m.config_hash = hash;
  m.partial = side.value("partial", false);
  const size_t cells = static_cast<size_t>(classes) * l_count;
  m.directions.dirs.assign(l_count, Vec3{});
  m.r.assign(cells, 0.0);
  m.r_lim.assign(cells, 0.0);
  m.z_lim.assign(cells, 0);
  m.o.assign(cells, 1);
  size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (fields.size() != 9) throw SafetyPreconditionError("malformed matrices row: " + line);
    const int k = std::stoi(fields[0]);
    const int l = std::stoi(fields[1]);
    if (k < 0 || k >= classes || l < 0 || l >= l_count)
      throw SafetyPreconditionError("matrices row out of range: " + line);
    m.directions.dirs[l] = {std::stod(fields[2]), std::stod(fields[3]), std::stod(fields[4])};
    const size_t i = m.idx(k, l);
    m.r[i] = std::stod(fields[5]);
    m.r_lim[i] = std::stod(fields[6]);
    m.z_lim[i] = std::stoi(fields[7]);
    m.o[i] = std::stoi(fields[8]);
    ++rows;
  }
  if (rows != cells) throw SafetyPreconditionError("matrices file incomplete: " + csv_path);
  m.validate();
  return m;
}

}  // namespace elab::safety
