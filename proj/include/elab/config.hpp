#pragma once

#include <string>
#include <vector>

#include "elab/ddpg/agent.hpp"
#include "elab/measure/measurement.hpp"
#include "elab/reward/reward.hpp"
#include "elab/safety/monitor.hpp"
#include "elab/sim/engine_sim.hpp"

namespace elab {

struct EpisodePlan {
  int cycles_per_episode = 1000;
  int validation_every = 10;       // episodes between noise-free validations
  int train_episodes = 60;
  int adapt_episodes = 120;
  int dwell_min = 20;              // setpoint dwell range, cycles
  int dwell_max = 100;
  std::vector<double> setpoints = {2.0, 2.5, 3.0, 3.5, 4.0};
  bool quantize_wire32 = false;    // push state/action through 32-bit floats

  void validate() const;
};

struct UdpOptions {
  std::string listen;   // host:port of this endpoint
  std::string peer;     // host:port of the other endpoint
  int deadline_ms = 9;
};

// Everything configurable, in one file. Defaults here are the documented
// ones; a JSON config overrides any subset of fields.
struct Config {
  ActionBounds bounds = default_action_bounds();
  ClassifierConfig classifier = default_classifier();
  DirectionSet directions = default_direction_set();
  EngineConstants engine_constants;
  ddpg::StateScaler state_ranges = ddpg::default_state_scaler();
  ddpg::Hyper agent;
  reward::RewardParams reward;
  safety::SafetyConfig safety;
  measure::MeasurementConfig measurement;
  sim::EngineSimConfig engine_sim;
  sim::CylinderGeometry geometry;
  EpisodePlan episode;
  UdpOptions udp;
  uint64_t seed = 1;

  void validate() const;

  // Hash over the sections the limitation matrices depend on (bounds,
  // start points, classifier, directions). Matrices measured under one
  // configuration are refused under another.
  std::string matrices_hash() const;
  // Hash over everything except the seed-independent runtime paths; used to
  // guard checkpoint resumption.
  std::string checkpoint_hash() const;
};

Config load_config(const std::string& path);          // defaults + overrides
Config config_from_json_text(const std::string& text);
std::string config_to_json(const Config& cfg);        // full canonical dump

}  // namespace elab
