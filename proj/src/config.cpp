#include "elab/config.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "elab/core/errors.hpp"
#include "elab/core/rng.hpp"

namespace elab {

using json = nlohmann::json;

void EpisodePlan::validate() const {
  if (cycles_per_episode < 1) throw ConfigError("cycles_per_episode must be positive");
  if (validation_every < 1) throw ConfigError("validation_every must be positive");
  if (train_episodes < 1 || adapt_episodes < 1) throw ConfigError("episode budgets must be positive");
  if (dwell_min < 1 || dwell_max < dwell_min) throw ConfigError("invalid dwell range");
  if (setpoints.empty()) throw ConfigError("setpoint set must not be empty");
}

void Config::validate() const {
  bounds.validate();
  classifier.validate();
  directions.validate();
  engine_constants.validate();
  state_ranges.validate();
  agent.validate();
  safety.validate(directions.count());
  measurement.validate();
  engine_sim.validate();
  geometry.validate();
  episode.validate();
  if (udp.deadline_ms < 1) throw ConfigError("udp deadline must be at least 1 ms");
}

namespace {

template <typename T>
void opt(const json& j, const char* key, T& field) {
  if (j.contains(key)) j.at(key).get_to(field);
}

json action_to_json(const ActionVector& a) { return json{a.alpha_nvo, a.t_inj_g, a.t_inj_e}; }
ActionVector action_from_json(const json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

json bounds_to_json(const ActionBounds& b) {
  json j;
  j["u_min"] = action_to_json(b.u_min);
  j["u_max"] = action_to_json(b.u_max);
  json table = json::array();
  for (const auto& [sp, u] : b.start_points) table.push_back({{"setpoint", sp}, {"u", action_to_json(u)}});
  j["start_points"] = table;
  return j;
}

void bounds_from_json(const json& j, ActionBounds& b) {
  if (j.contains("u_min")) b.u_min = action_from_json(j.at("u_min"));
  if (j.contains("u_max")) b.u_max = action_from_json(j.at("u_max"));
  if (j.contains("start_points")) {
    b.start_points.clear();
    for (const auto& row : j.at("start_points")) {
      b.start_points.push_back({row.at("setpoint").get<double>(), action_from_json(row.at("u"))});
    }
  }
}

json term_to_json(const reward::TermParams& t) {
  return json{{"c1", t.c1}, {"c2", t.c2}, {"c3", t.c3}, {"c4", t.c4}, {"c5", t.c5},
              {"enabled", t.enabled}};
}
void term_from_json(const json& j, reward::TermParams& t) {
  opt(j, "c1", t.c1);
  opt(j, "c2", t.c2);
  opt(j, "c3", t.c3);
  opt(j, "c4", t.c4);
  opt(j, "c5", t.c5);
  opt(j, "enabled", t.enabled);
}

}  // namespace

std::string config_to_json(const Config& cfg) {
  json j;
  j["bounds"] = bounds_to_json(cfg.bounds);

  j["classifier"] = {{"alpha50_edges", cfg.classifier.alpha50_edges},
                     {"misfire_q_threshold", cfg.classifier.misfire_q_threshold}};

  json dirs = json::array();
  for (const auto& v : cfg.directions.dirs) dirs.push_back({v[0], v[1], v[2]});
  j["directions"] = {{"vectors", dirs}};

  j["engine_constants"] = {{"v_h", cfg.engine_constants.v_h},
                           {"lcv_gasoline", cfg.engine_constants.lcv_gasoline},
                           {"lcv_ethanol", cfg.engine_constants.lcv_ethanol},
                           {"dpmax_limit", cfg.engine_constants.dpmax_limit},
                           {"misfire_tolerance", cfg.engine_constants.misfire_tolerance},
                           {"t_eth_min_open", cfg.engine_constants.t_eth_min_open}};

  json ranges = json::array();
  for (const auto& [lo, hi] : cfg.state_ranges.ranges) ranges.push_back({lo, hi});
  j["state_ranges"] = ranges;

  j["agent"] = {{"gamma", cfg.agent.gamma},
                {"sigma0", cfg.agent.sigma0},
                {"sigma_decay", cfg.agent.sigma_decay},
                {"batch_size", cfg.agent.batch_size},
                {"lr_critic", cfg.agent.lr_critic},
                {"lr_actor", cfg.agent.lr_actor},
                {"polyak_rho", cfg.agent.polyak_rho},
                {"buffer_capacity", cfg.agent.buffer_capacity},
                {"replay_batches", cfg.agent.replay_batches},
                {"hidden", cfg.agent.hidden},
                {"optimizer",
                 cfg.agent.optimizer == nn::OptimizerState::Mode::Adam ? "adam" : "plain"}};

  j["reward"] = {{"load", term_to_json(cfg.reward.load)},
                 {"stability", term_to_json(cfg.reward.stability)},
                 {"gradient", term_to_json(cfg.reward.gradient)},
                 {"safety", term_to_json(cfg.reward.safety)},
                 {"efficiency", term_to_json(cfg.reward.efficiency)},
                 {"ethanol", term_to_json(cfg.reward.ethanol)},
                 {"ethanol_share_target", cfg.reward.ethanol_share_target},
                 {"efficiency_sign",
                  cfg.reward.efficiency_sign == reward::EfficiencySign::Corrected ? "corrected"
                                                                                  : "verbatim"}};

  j["safety"] = {{"dr_tol", cfg.safety.dr_tol}, {"n_neighbors", cfg.safety.n_neighbors}};

  j["measurement"] = {
      {"dr_expl", cfg.measurement.dr_expl},
      {"r_max", cfg.measurement.r_max},
      {"direction_policy",
       cfg.measurement.direction_policy == measure::MeasurementConfig::DirectionPolicy::Random
           ? "random"
           : "round_robin"},
      {"min_z_per_cell", cfg.measurement.min_z_per_cell}};

  const auto& s = cfg.engine_sim;
  j["engine_sim"] = {{"intake_temperature", s.intake_temperature},
                     {"gasoline_slope", s.gasoline_slope},
                     {"gasoline_dead_time", s.gasoline_dead_time},
                     {"ethanol_min_open", s.ethanol_min_open},
                     {"ethanol_step_mass", s.ethanol_step_mass},
                     {"ethanol_slope", s.ethanol_slope},
                     {"residual_base", s.residual_base},
                     {"residual_slope", s.residual_slope},
                     {"residual_ref_nvo", s.residual_ref_nvo},
                     {"exhaust_base", s.exhaust_base},
                     {"exhaust_gain", s.exhaust_gain},
                     {"exhaust_init", s.exhaust_init},
                     {"alpha50_base", s.alpha50_base},
                     {"alpha50_temp_gain", s.alpha50_temp_gain},
                     {"alpha50_temp_ref", s.alpha50_temp_ref},
                     {"alpha50_fuel_gain", s.alpha50_fuel_gain},
                     {"alpha50_fuel_ref", s.alpha50_fuel_ref},
                     {"alpha50_noise_sigma", s.alpha50_noise_sigma},
                     {"misfire_temperature", s.misfire_temperature},
                     {"misfire_late_alpha50", s.misfire_late_alpha50},
                     {"burn_efficiency", s.burn_efficiency},
                     {"misfire_burn_fraction", s.misfire_burn_fraction},
                     {"eta_peak", s.eta_peak},
                     {"eta_curvature", s.eta_curvature},
                     {"eta_peak_alpha50", s.eta_peak_alpha50},
                     {"eta_floor", s.eta_floor},
                     {"dp_gain", s.dp_gain},
                     {"dp_alpha_decay", s.dp_alpha_decay},
                     {"dp_noise_sigma", s.dp_noise_sigma},
                     {"ion_max_gain", s.ion_max_gain},
                     {"ion_int_gain", s.ion_int_gain},
                     {"deterministic", s.deterministic}};

  j["geometry"] = {{"bore", cfg.geometry.bore},
                   {"stroke", cfg.geometry.stroke},
                   {"compression_ratio", cfg.geometry.compression_ratio},
                   {"v_h", cfg.geometry.v_h},
                   {"conrod_ratio", cfg.geometry.conrod_ratio}};

  j["episode"] = {{"cycles_per_episode", cfg.episode.cycles_per_episode},
                  {"validation_every", cfg.episode.validation_every},
                  {"train_episodes", cfg.episode.train_episodes},
                  {"adapt_episodes", cfg.episode.adapt_episodes},
                  {"dwell_min", cfg.episode.dwell_min},
                  {"dwell_max", cfg.episode.dwell_max},
                  {"setpoints", cfg.episode.setpoints},
                  {"quantize_wire32", cfg.episode.quantize_wire32}};

  j["udp"] = {{"listen", cfg.udp.listen}, {"peer", cfg.udp.peer}, {"deadline_ms", cfg.udp.deadline_ms}};

  j["seed"] = cfg.seed;
  return j.dump(2);
}

Config config_from_json_text(const std::string& text) {
  Config cfg;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  try {
    if (j.contains("bounds")) bounds_from_json(j.at("bounds"), cfg.bounds);
    if (j.contains("classifier")) {
      opt(j.at("classifier"), "alpha50_edges", cfg.classifier.alpha50_edges);
      opt(j.at("classifier"), "misfire_q_threshold", cfg.classifier.misfire_q_threshold);
    }
    if (j.contains("directions") && j.at("directions").contains("vectors")) {
      cfg.directions.dirs.clear();
      for (const auto& row : j.at("directions").at("vectors")) {
        cfg.directions.dirs.push_back(
            {row.at(0).get<double>(), row.at(1).get<double>(), row.at(2).get<double>()});
      }
    }
    if (j.contains("engine_constants")) {
      const json& e = j.at("engine_constants");
      opt(e, "v_h", cfg.engine_constants.v_h);
      opt(e, "lcv_gasoline", cfg.engine_constants.lcv_gasoline);
      opt(e, "lcv_ethanol", cfg.engine_constants.lcv_ethanol);
      opt(e, "dpmax_limit", cfg.engine_constants.dpmax_limit);
      opt(e, "misfire_tolerance", cfg.engine_constants.misfire_tolerance);
      opt(e, "t_eth_min_open", cfg.engine_constants.t_eth_min_open);
    }
    if (j.contains("state_ranges")) {
      const json& r = j.at("state_ranges");
      if (r.size() != CycleState::kComponents) throw ConfigError("state_ranges needs 8 pairs");
      for (int i = 0; i < CycleState::kComponents; ++i) {
        cfg.state_ranges.ranges[i] = {r.at(i).at(0).get<double>(), r.at(i).at(1).get<double>()};
      }
    }
    if (j.contains("agent")) {
      const json& a = j.at("agent");
      opt(a, "gamma", cfg.agent.gamma);
      opt(a, "sigma0", cfg.agent.sigma0);
      opt(a, "sigma_decay", cfg.agent.sigma_decay);
      opt(a, "batch_size", cfg.agent.batch_size);
      opt(a, "lr_critic", cfg.agent.lr_critic);
      opt(a, "lr_actor", cfg.agent.lr_actor);
      opt(a, "polyak_rho", cfg.agent.polyak_rho);
      opt(a, "buffer_capacity", cfg.agent.buffer_capacity);
      opt(a, "replay_batches", cfg.agent.replay_batches);
      opt(a, "hidden", cfg.agent.hidden);
      if (a.contains("optimizer")) {
        cfg.agent.optimizer = a.at("optimizer").get<std::string>() == "plain"
                                  ? nn::OptimizerState::Mode::Plain
                                  : nn::OptimizerState::Mode::Adam;
      }
    }
    if (j.contains("reward")) {
      const json& r = j.at("reward");
      if (r.contains("load")) term_from_json(r.at("load"), cfg.reward.load);
      if (r.contains("stability")) term_from_json(r.at("stability"), cfg.reward.stability);
      if (r.contains("gradient")) term_from_json(r.at("gradient"), cfg.reward.gradient);
      if (r.contains("safety")) term_from_json(r.at("safety"), cfg.reward.safety);
      if (r.contains("efficiency")) term_from_json(r.at("efficiency"), cfg.reward.efficiency);
      if (r.contains("ethanol")) term_from_json(r.at("ethanol"), cfg.reward.ethanol);
      opt(r, "ethanol_share_target", cfg.reward.ethanol_share_target);
      if (r.contains("efficiency_sign")) {
        cfg.reward.efficiency_sign = r.at("efficiency_sign").get<std::string>() == "verbatim"
                                         ? reward::EfficiencySign::Verbatim
                                         : reward::EfficiencySign::Corrected;
      }
    }
    if (j.contains("safety")) {
      opt(j.at("safety"), "dr_tol", cfg.safety.dr_tol);
      opt(j.at("safety"), "n_neighbors", cfg.safety.n_neighbors);
    }
    if (j.contains("measurement")) {
      const json& m = j.at("measurement");
      opt(m, "dr_expl", cfg.measurement.dr_expl);
      opt(m, "r_max", cfg.measurement.r_max);
      opt(m, "min_z_per_cell", cfg.measurement.min_z_per_cell);
      if (m.contains("direction_policy")) {
        cfg.measurement.direction_policy = m.at("direction_policy").get<std::string>() == "round_robin"
                                               ? measure::MeasurementConfig::DirectionPolicy::RoundRobin
                                               : measure::MeasurementConfig::DirectionPolicy::Random;
      }
    }
    if (j.contains("engine_sim")) {
      const json& e = j.at("engine_sim");
      auto& s = cfg.engine_sim;
      opt(e, "intake_temperature", s.intake_temperature);
      opt(e, "gasoline_slope", s.gasoline_slope);
      opt(e, "gasoline_dead_time", s.gasoline_dead_time);
      opt(e, "ethanol_min_open", s.ethanol_min_open);
      opt(e, "ethanol_step_mass", s.ethanol_step_mass);
      opt(e, "ethanol_slope", s.ethanol_slope);
      opt(e, "residual_base", s.residual_base);
      opt(e, "residual_slope", s.residual_slope);
      opt(e, "residual_ref_nvo", s.residual_ref_nvo);
      opt(e, "exhaust_base", s.exhaust_base);
      opt(e, "exhaust_gain", s.exhaust_gain);
      opt(e, "exhaust_init", s.exhaust_init);
      opt(e, "alpha50_base", s.alpha50_base);
      opt(e, "alpha50_temp_gain", s.alpha50_temp_gain);
      opt(e, "alpha50_temp_ref", s.alpha50_temp_ref);
      opt(e, "alpha50_fuel_gain", s.alpha50_fuel_gain);
      opt(e, "alpha50_fuel_ref", s.alpha50_fuel_ref);
      opt(e, "alpha50_noise_sigma", s.alpha50_noise_sigma);
      opt(e, "misfire_temperature", s.misfire_temperature);
      opt(e, "misfire_late_alpha50", s.misfire_late_alpha50);
      opt(e, "burn_efficiency", s.burn_efficiency);
      opt(e, "misfire_burn_fraction", s.misfire_burn_fraction);
      opt(e, "eta_peak", s.eta_peak);
      opt(e, "eta_curvature", s.eta_curvature);
      opt(e, "eta_peak_alpha50", s.eta_peak_alpha50);
      opt(e, "eta_floor", s.eta_floor);
      opt(e, "dp_gain", s.dp_gain);
      opt(e, "dp_alpha_decay", s.dp_alpha_decay);
      opt(e, "dp_noise_sigma", s.dp_noise_sigma);
      opt(e, "ion_max_gain", s.ion_max_gain);
      opt(e, "ion_int_gain", s.ion_int_gain);
      opt(e, "deterministic", s.deterministic);
    }
    if (j.contains("geometry")) {
      const json& g = j.at("geometry");
      opt(g, "bore", cfg.geometry.bore);
      opt(g, "stroke", cfg.geometry.stroke);
      opt(g, "compression_ratio", cfg.geometry.compression_ratio);
      opt(g, "v_h", cfg.geometry.v_h);
      opt(g, "conrod_ratio", cfg.geometry.conrod_ratio);
    }
    if (j.contains("episode")) {
      const json& e = j.at("episode");
      opt(e, "cycles_per_episode", cfg.episode.cycles_per_episode);
      opt(e, "validation_every", cfg.episode.validation_every);
      opt(e, "train_episodes", cfg.episode.train_episodes);
      opt(e, "adapt_episodes", cfg.episode.adapt_episodes);
      opt(e, "dwell_min", cfg.episode.dwell_min);
      opt(e, "dwell_max", cfg.episode.dwell_max);
      opt(e, "setpoints", cfg.episode.setpoints);
      opt(e, "quantize_wire32", cfg.episode.quantize_wire32);
    }
    if (j.contains("udp")) {
      opt(j.at("udp"), "listen", cfg.udp.listen);
      opt(j.at("udp"), "peer", cfg.udp.peer);
      opt(j.at("udp"), "deadline_ms", cfg.udp.deadline_ms);
    }
    opt(j, "seed", cfg.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field error: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

Config load_config(const std::string& path) {
  if (path.empty()) {
    Config cfg;
    cfg.validate();
    return cfg;
  }
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return config_from_json_text(text);
}

namespace {
std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}
}  // namespace

std::string Config::matrices_hash() const {
  const json full = json::parse(config_to_json(*this));
  json j;
  j["bounds"] = full.at("bounds");
  j["classifier"] = full.at("classifier");
  j["directions"] = full.at("directions");
  return hex64(fnv1a64(j.dump()));
}

std::string Config::checkpoint_hash() const {
  // Everything that shapes the agent and its environment. Run lengths, the
  // seed and transport settings are runtime knobs: a checkpoint stays usable
  // across them (resume additionally pins the seed).
  json j = json::parse(config_to_json(*this));
  j.erase("seed");
  j.erase("udp");
  j["episode"].erase("train_episodes");
  j["episode"].erase("adapt_episodes");
  j["episode"].erase("validation_every");
  return hex64(fnv1a64(j.dump()));
}

}  // namespace elab
