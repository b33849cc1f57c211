#include "elab/orch/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "elab/core/errors.hpp"
#include "elab/ddpg/agent.hpp"
#include "elab/measure/measurement.hpp"
#include "elab/orch/metrics.hpp"

namespace elab::orch {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Cycle log

const std::vector<std::string>& cycle_csv_header() {
  static const std::vector<std::string> header = {
      "episode",      "cycle",        "mode",        "setpoint",     "alpha50_prev",
      "q_prev",       "pmi_prev",     "dpmax_prev",  "ion_max_prev", "ion_int_prev",
      "pmi_sp_prev",  "pmi_sp",       "u_raw_nvo",   "u_raw_g",      "u_raw_e",
      "alpha_nvo",    "t_inj_g",      "t_inj_e",     "replaced",     "dr_sf",
      "fallback",     "alpha50",      "q",           "pmi",          "dpmax",
      "ion_max",      "ion_int",      "m_g",         "m_e",          "misfire",
      "f_load",       "r_load",       "f_stability", "r_stability",  "f_gradient",
      "r_gradient",   "f_safety",     "r_safety",    "f_efficiency", "r_efficiency",
      "f_ethanol",    "r_ethanol",    "reward_total", "done"};
  return header;
}

void CycleLogWriter::write(const CycleRow& r) {
  auto& w = *writer_;
  w.field(r.episode).field(r.cycle).field(r.mode).field(r.setpoint);
  for (double v : r.state.as_array()) w.field(v);
  for (double v : r.u_raw) w.field(v);
  w.field(r.u_applied.alpha_nvo).field(r.u_applied.t_inj_g).field(r.u_applied.t_inj_e);
  w.field(r.replaced).field(r.dr_sf).field(r.fallback);
  w.field(r.out.alpha50).field(r.out.q).field(r.out.pmi).field(r.out.dpmax);
  w.field(r.out.ion_max).field(r.out.ion_int).field(r.out.m_g).field(r.out.m_e);
  w.field(r.out.misfire ? 1 : 0);
  for (int i = 0; i < 6; ++i) w.field(r.rew.f[i]).field(r.rew.value[i]);
  w.field(r.rew.total).field(r.done);
  w.end_row();
}

std::vector<CycleRow> read_cycle_log(const std::string& path) {
  const CsvTable t = read_csv(path);
  std::vector<CycleRow> rows;
  rows.reserve(t.rows.size());
  const int c_episode = t.column("episode");
  const int c_cycle = t.column("cycle");
  const int c_mode = t.column("mode");
  const int c_setpoint = t.column("setpoint");
  const int c_state0 = t.column("alpha50_prev");
  const int c_uraw0 = t.column("u_raw_nvo");
  const int c_applied0 = t.column("alpha_nvo");
  const int c_replaced = t.column("replaced");
  const int c_drsf = t.column("dr_sf");
  const int c_fallback = t.column("fallback");
  const int c_out0 = t.column("alpha50");
  const int c_misfire = t.column("misfire");
  const int c_f0 = t.column("f_load");
  const int c_total = t.column("reward_total");
  const int c_done = t.column("done");
  for (size_t i = 0; i < t.rows.size(); ++i) {
    CycleRow r;
    r.episode = static_cast<long>(t.number(i, c_episode));
    r.cycle = static_cast<long>(t.number(i, c_cycle));
    r.mode = t.rows[i][c_mode];
    r.setpoint = t.number(i, c_setpoint);
    std::array<double, CycleState::kComponents> s{};
    for (int j = 0; j < CycleState::kComponents; ++j) s[j] = t.number(i, c_state0 + j);
    r.state = CycleState::from_array(s);
    for (int j = 0; j < 3; ++j) r.u_raw[j] = t.number(i, c_uraw0 + j);
    r.u_applied = {t.number(i, c_applied0), t.number(i, c_applied0 + 1),
                   t.number(i, c_applied0 + 2)};
    r.replaced = static_cast<int>(t.number(i, c_replaced));
    r.dr_sf = t.number(i, c_drsf);
    r.fallback = static_cast<int>(t.number(i, c_fallback));
    r.out.alpha50 = t.number(i, c_out0);
    r.out.q = t.number(i, c_out0 + 1);
    r.out.pmi = t.number(i, c_out0 + 2);
    r.out.dpmax = t.number(i, c_out0 + 3);
    r.out.ion_max = t.number(i, c_out0 + 4);
    r.out.ion_int = t.number(i, c_out0 + 5);
    r.out.m_g = t.number(i, c_out0 + 6);
    r.out.m_e = t.number(i, c_out0 + 7);
    r.out.misfire = t.number(i, c_misfire) != 0.0;
    for (int j = 0; j < 6; ++j) {
      r.rew.f[j] = t.number(i, c_f0 + 2 * j);
      r.rew.value[j] = t.number(i, c_f0 + 2 * j + 1);
    }
    r.rew.total = t.number(i, c_total);
    r.done = static_cast<int>(t.number(i, c_done));
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Metrics

Summary summarize(std::span<const CycleRow> rows, const EngineConstants& constants,
                  double ethanol_target) {
  if (rows.empty()) throw ContractError("summarize: empty log");
  Summary s;
  s.cycles = static_cast<long>(rows.size());
  double sq_pmi = 0.0, sq_share = 0.0, overshoot = 0.0, eta_sum = 0.0, stab = 0.0;
  long firing = 0;
  for (size_t i = 0; i < rows.size(); ++i) {
    const CycleRow& r = rows[i];
    const double d = r.out.pmi - r.setpoint;
    sq_pmi += d * d;
    if (i > 0) {
      const double da = r.out.alpha50 - rows[i - 1].out.alpha50;
      stab += da * da;
    }
    if (r.out.dpmax > constants.dpmax_limit) {
      s.dp_violations += 1;
      overshoot += r.out.dpmax - constants.dpmax_limit;
    }
    if (!r.out.misfire && (r.out.m_g > 0.0 || r.out.m_e > 0.0)) {
      eta_sum += reward::efficiency(r.out.pmi, r.out.m_g, r.out.m_e, constants);
      ++firing;
    }
    if (r.out.m_g > 0.0 || r.out.m_e > 0.0) {
      const double ds = reward::ethanol_energy_share(r.out.m_g, r.out.m_e, constants) -
                        ethanol_target;
      sq_share += ds * ds;
    } else {
      sq_share += ethanol_target * ethanol_target;
    }
    s.cum_reward += r.rew.total;
    s.replaced += r.replaced;
    s.fallbacks += r.fallback;
    s.misfires += r.out.misfire ? 1 : 0;
  }
  s.rmse_pmi = std::sqrt(sq_pmi / s.cycles);
  s.stability = std::sqrt(stab);
  s.mean_overshoot = s.dp_violations > 0 ? overshoot / s.dp_violations : 0.0;
  s.mean_eta = firing > 0 ? eta_sum / firing : 0.0;
  s.ethanol_rmse = std::sqrt(sq_share / s.cycles);
  s.mean_reward = s.cum_reward / s.cycles;
  return s;
}

std::string summary_to_json(const Summary& s) {
  json j;
  j["cycles"] = s.cycles;
  j["rmse_pmi"] = s.rmse_pmi;
  j["stability"] = s.stability;
  j["dp_violations"] = s.dp_violations;
  j["mean_overshoot"] = s.mean_overshoot;
  j["mean_eta"] = s.mean_eta;
  j["ethanol_rmse"] = s.ethanol_rmse;
  j["mean_reward"] = s.mean_reward;
  j["cum_reward"] = s.cum_reward;
  j["replaced"] = s.replaced;
  j["fallbacks"] = s.fallbacks;
  j["misfires"] = s.misfires;
  return j.dump(2);
}

std::vector<double> grouped_cumulative_reward(std::span<const CycleRow> rows, long group_size) {
  std::vector<double> groups;
  double acc = 0.0;
  long n = 0;
  for (const CycleRow& r : rows) {
    acc += r.rew.total;
    if (++n == group_size) {
      groups.push_back(acc);
      acc = 0.0;
      n = 0;
    }
  }
  return groups;
}

// ---------------------------------------------------------------------------
// Shared helpers

namespace {

double widen32(double v) {
  // The volatile keeps the narrowing observable; GCC 11's SLP vectorizer
  // otherwise drops the float round trip for vectorized lanes.
  volatile float f = static_cast<float>(v);
  return static_cast<double>(f);
}

CycleState quantize_state(const CycleState& s) {
  auto a = s.as_array();
  for (double& v : a) v = widen32(v);
  return CycleState::from_array(a);
}

CycleState make_state(const CycleOutputs& prev, double sp_prev, double sp) {
  return {prev.alpha50, prev.q, prev.pmi, prev.dpmax, prev.ion_max, prev.ion_int, sp_prev, sp};
}

// Raw action whose tanh mapping lands on u (clipped to +-20, where the
// mapping saturates to the bound well below double precision).
RawAction inverse_map_raw(const ActionVector& u, const ActionBounds& bounds) {
  const auto uv = u.as_array();
  const auto lo = bounds.u_min.as_array();
  const auto hi = bounds.u_max.as_array();
  RawAction raw{};
  for (int j = 0; j < 3; ++j) {
    const double t = std::clamp(2.0 * (uv[j] - lo[j]) / (hi[j] - lo[j]) - 1.0, -1.0 + 1e-16,
                                1.0 - 1e-16);
    raw[j] = std::clamp(std::atanh(t), -20.0, 20.0);
  }
  return raw;
}

const char* mode_name(RunMode m) {
  switch (m) {
    case RunMode::Measure: return "measure";
    case RunMode::Train: return "train";
    case RunMode::Adapt: return "adapt";
    case RunMode::Validate: return "validate";
  }
  return "?";
}

}  // namespace

long prefill_buffer_from_log(const std::string& path, ddpg::ReplayBuffer& buffer) {
  const auto rows = read_cycle_log(path);
  long pushed = 0;
  for (size_t i = 0; i + 1 < rows.size(); ++i) {
    ddpg::Experience e;
    e.s_prev = rows[i].state;
    e.u = rows[i].u_raw;
    e.s_next = rows[i + 1].state;
    e.reward = rows[i].rew.total;
    e.done = rows[i].done;
    buffer.push(e);
    ++pushed;
  }
  return pushed;
}

// ---------------------------------------------------------------------------
// Runner

struct Runner::AgentHandle {
  ddpg::Agent agent;
  ddpg::ReplayBuffer buffer;
  RngStream noise;
  RngStream sampling;
  std::vector<ddpg::Experience> episode_exps;
  std::string pristine_hash;

  explicit AgentHandle(const Config& cfg)
      : agent(cfg.agent, cfg.state_ranges, RngStream(cfg.seed, "init")),
        buffer(cfg.agent.buffer_capacity),
        noise(cfg.seed, "noise"),
        sampling(cfg.seed, "sampling") {}
};

namespace {
double next_setpoint(Runner::Walk& w, const EpisodePlan& plan, RngStream& rng) {
  if (w.remaining <= 0) {
    w.sp = plan.setpoints[rng.uniform_index(plan.setpoints.size())];
    w.remaining = static_cast<int>(rng.uniform_int(plan.dwell_min, plan.dwell_max));
  }
  --w.remaining;
  return w.sp;
}
}  // namespace

Runner::Runner(Config cfg, RunMode mode, RunPaths paths, UdpRunOptions udp)
    : cfg_(std::move(cfg)), mode_(mode), paths_(std::move(paths)), udp_(udp),
      profiles_(cfg_.seed, "profiles") {
  cfg_.validate();
  if (paths_.out_dir.empty()) throw ConfigError("output directory required");
  fs::create_directories(paths_.out_dir);

  // The hash binding checkpoints and matrices to the user configuration is
  // computed before any mode-specific adjustments.
  const std::string pristine_hash = cfg_.checkpoint_hash();

  if (mode_ == RunMode::Adapt) {
    // Adaptation explores uncharted regions: monitor off, its reward
    // component zeroed, the ethanol-share objective active.
    cfg_.reward.safety.enabled = false;
    cfg_.reward.ethanol.enabled = true;
  }

  switch (mode_) {
    case RunMode::Measure: episode_budget_ = 0; break;
    case RunMode::Train: episode_budget_ = cfg_.episode.train_episodes; break;
    case RunMode::Adapt: episode_budget_ = cfg_.episode.adapt_episodes; break;
    case RunMode::Validate: episode_budget_ = 0; break;
  }

  if (mode_ == RunMode::Train && paths_.matrices.empty())
    throw SafetyPreconditionError("training requires limitation matrices (--matrices)");
  if ((mode_ == RunMode::Train || mode_ == RunMode::Validate) && !paths_.matrices.empty())
    mats_ = safety::load_matrices(paths_.matrices, cfg_.matrices_hash());

  env_ = std::make_unique<sim::EngineSim>(cfg_.engine_sim, cfg_.geometry, cfg_.bounds,
                                          RngStream(cfg_.seed, "env"));
  if (mode_ != RunMode::Measure) env_->check_safety_structure(cfg_.engine_constants);

  if (udp_.enabled && mode_ != RunMode::Measure) {
    endpoint_ = std::make_unique<udp::EnvEndpoint>(udp_.listen, udp_.peer, udp_.deadline_ms);
  } else if (mode_ != RunMode::Measure) {
    agent_ = std::make_unique<AgentHandle>(cfg_);
    agent_->pristine_hash = pristine_hash;
    if (mode_ == RunMode::Adapt && paths_.checkpoint.empty())
      throw ConfigError("adaptation requires a pre-trained checkpoint");
    if (mode_ == RunMode::Validate && paths_.checkpoint.empty())
      throw ConfigError("validation requires a checkpoint");
    if (!paths_.checkpoint.empty()) load_checkpoint_file(paths_.checkpoint, paths_.resume);
    if (mode_ == RunMode::Adapt) agent_->agent.set_sigma(0.3);
    if (!paths_.prefill_log.empty() && !paths_.resume)
      prefill_buffer_from_log(paths_.prefill_log, agent_->buffer);
  }
}

Runner::~Runner() = default;

void Runner::run() {
  if (mode_ == RunMode::Measure) {
    run_measure();
  } else {
    run_episodes();
  }
}

void Runner::run_measure() {
  auto mats = safety::LimitationMatrices::init(cfg_.classifier.class_count(), cfg_.directions,
                                               cfg_.matrices_hash());
  CycleLogWriter log(paths_.out_dir + "/cycles.csv");
  RngStream dir_rng(cfg_.seed, "directions");

  auto on_cycle = [&](const measure::MeasurementCycle& mc) {
    CycleRow row;
    row.episode = 0;
    row.cycle = mc.cycle;
    row.mode = "measure";
    row.setpoint = mc.setpoint;
    row.state = mc.state;
    row.u_raw = inverse_map_raw(mc.action, cfg_.bounds);
    row.u_applied = mc.action;
    row.out = mc.out;
    row.rew = reward::total_reward(mc.out, mc.setpoint, mc.state.alpha50_prev, 0.0, cfg_.reward,
                                   cfg_.engine_constants);
    row.done = 0;
    log.write(row);
  };

  auto result = measure::run_measurement(*env_, std::move(mats), cfg_.bounds, cfg_.classifier,
                                         cfg_.engine_constants, cfg_.measurement,
                                         cfg_.episode.setpoints, cfg_.episode.dwell_min,
                                         cfg_.episode.dwell_max, measure_budget_, dir_rng,
                                         profiles_, on_cycle);
  result.mats.partial = result.partial;
  safety::save_matrices(result.mats, paths_.out_dir + "/mats.csv");
  log.flush();
  if (result.partial)
    std::fprintf(stderr, "measurement stopped early after %ld cycles: %s\n", result.cycles_run,
                 result.fault.c_str());
}

CycleState Runner::prime_state(bool first_episode_is_validation) {
  double sp0, sp1;
  if (first_episode_is_validation) {
    val_rng_.emplace(cfg_.seed, "validation-profile");
    val_walk_ = Walk{};
    sp0 = next_setpoint(val_walk_, cfg_.episode, *val_rng_);
    const CycleOutputs out0 = env_->step(cfg_.bounds.start_point(sp0), sp0);
    sp1 = next_setpoint(val_walk_, cfg_.episode, *val_rng_);
    return make_state(out0, sp0, sp1);
  }
  sp0 = next_setpoint(walk_, cfg_.episode, profiles_);
  const CycleOutputs out0 = env_->step(cfg_.bounds.start_point(sp0), sp0);
  sp1 = next_setpoint(walk_, cfg_.episode, profiles_);
  return make_state(out0, sp0, sp1);
}

double Runner::training_next_sp() { return next_setpoint(walk_, cfg_.episode, profiles_); }

RawAction Runner::act_cycle(const CycleState& state, bool validation, double reward_prev,
                            int done_prev, bool* fallback) {
  *fallback = false;
  if (!udp_.enabled) {
    const bool quantize = cfg_.episode.quantize_wire32;
    const CycleState view = quantize ? quantize_state(state) : state;
    RawAction u = agent_->agent.act(view, validation ? 0.0 : agent_->agent.sigma(),
                                    agent_->noise);
    if (quantize) {
      for (double& v : u) v = widen32(v);
    }
    return u;
  }

  udp::StateDatagram d;
  d.cycle = static_cast<uint32_t>(cycle_counter_);
  const auto s = state.as_array();
  for (int i = 0; i < 8; ++i) d.state[i] = static_cast<float>(s[i]);
  d.reward = static_cast<float>(reward_prev);
  d.done = done_prev ? 1 : 0;
  d.flags = validation ? kFlagValidation : 0;
  // The request after an episode end is answered only after the agent's
  // training update; give it the training grace window.
  const auto reply = endpoint_->request_action(d, done_prev ? udp_.training_grace_ms : -1);
  if (!reply) {
    *fallback = true;
    ++fallbacks_;
    return inverse_map_raw(cfg_.bounds.start_point(state.pmi_sp), cfg_.bounds);
  }
  RawAction u;
  for (int j = 0; j < 3; ++j) u[j] = static_cast<double>(reply->action[j]);
  return u;
}

void Runner::run_episodes() {
  struct EpisodeSpec {
    bool validation;
  };
  std::vector<EpisodeSpec> plan;
  if (mode_ == RunMode::Validate) {
    for (int i = 0; i < validate_budget_; ++i) plan.push_back({true});
  } else {
    for (int e = 1; e <= episode_budget_; ++e) {
      plan.push_back({false});
      if (cfg_.episode.validation_every > 0 && e % cfg_.episode.validation_every == 0)
        plan.push_back({true});
    }
  }
  if (static_cast<size_t>(episode_done_) >= plan.size()) return;

  CycleLogWriter cycles(paths_.out_dir + "/cycles.csv", paths_.resume);
  CsvWriter episodes(paths_.out_dir + "/episodes.csv",
                     {"episode", "mode", "validation", "sigma", "cycles", "cum_reward",
                      "rmse_pmi", "stability", "dp_violations", "mean_overshoot", "mean_eta",
                      "ethanol_rmse", "replaced", "fallbacks", "misfires", "buffer_size",
                      "param_hash"},
                     paths_.resume);

  if (!primed_) {
    state_ = prime_state(plan.front().validation);
    primed_ = true;
  }

  const bool quantize = cfg_.episode.quantize_wire32;
  double reward_prev = 0.0;
  int done_prev = 0;

  for (size_t pi = static_cast<size_t>(episode_done_); pi < plan.size(); ++pi) {
    const bool validation = plan[pi].validation;
    const long episode_index = static_cast<long>(pi) + 1;
    std::vector<CycleRow> episode_rows;
    episode_rows.reserve(cfg_.episode.cycles_per_episode);

    for (int i = 0; i < cfg_.episode.cycles_per_episode; ++i) {
      const bool last = i + 1 == cfg_.episode.cycles_per_episode;
      bool fallback = false;
      const RawAction u_raw = act_cycle(state_, validation, reward_prev, done_prev, &fallback);
      done_prev = 0;

      safety::FilterResult filt;
      if (fallback) {
        filt.u_safe = cfg_.bounds.start_point(state_.pmi_sp);
      } else if (mats_) {
        filt = safety::filter_action(u_raw, state_, *mats_, cfg_.safety, cfg_.bounds,
                                     cfg_.classifier);
      } else {
        filt.u_safe = map_raw_action(u_raw, cfg_.bounds);
      }

      const CycleOutputs out = env_->step(filt.u_safe, state_.pmi_sp);
      const auto rew = reward::total_reward(out, state_.pmi_sp, state_.alpha50_prev, filt.dr_sf,
                                            cfg_.reward, cfg_.engine_constants);

      CycleRow row;
      row.episode = episode_index;
      row.cycle = cycle_counter_;
      row.mode = validation ? "validate" : mode_name(mode_);
      row.setpoint = state_.pmi_sp;
      row.state = state_;
      row.u_raw = u_raw;
      row.u_applied = filt.u_safe;
      row.replaced = filt.replaced ? 1 : 0;
      row.dr_sf = filt.dr_sf;
      row.fallback = fallback ? 1 : 0;
      row.out = out;
      row.rew = rew;
      row.done = last ? 1 : 0;
      cycles.write(row);
      episode_rows.push_back(row);
      ++cycle_counter_;

      // Next cycle's setpoint comes from whichever schedule owns the next
      // cycle; validation profiles are recreated from their fixed stream at
      // each validation episode.
      double sp_next;
      if (!last) {
        sp_next = validation ? next_setpoint(val_walk_, cfg_.episode, *val_rng_)
                             : training_next_sp();
      } else {
        const bool next_is_validation = pi + 1 < plan.size() && plan[pi + 1].validation;
        if (next_is_validation) {
          val_rng_.emplace(cfg_.seed, "validation-profile");
          val_walk_ = Walk{};
          sp_next = next_setpoint(val_walk_, cfg_.episode, *val_rng_);
        } else {
          val_rng_.reset();
          sp_next = training_next_sp();
        }
      }
      const CycleState next_state = make_state(out, state_.pmi_sp, sp_next);

      if (!udp_.enabled && !validation && !fallback) {
        ddpg::Experience e;
        e.s_prev = quantize ? quantize_state(state_) : state_;
        e.u = u_raw;  // already widened when the wire mode is on
        e.s_next = quantize ? quantize_state(next_state) : next_state;
        e.reward = quantize ? widen32(rew.total) : rew.total;
        e.done = last ? 1 : 0;
        agent_->buffer.push(e);
        agent_->episode_exps.push_back(e);
      }
      reward_prev = udp_.enabled ? widen32(rew.total) : rew.total;
      done_prev = last ? 1 : 0;
      state_ = next_state;
    }

    // Training between episodes (the UDP agent runs its update when the next
    // request arrives carrying the done flag).
    if (!udp_.enabled && !validation && agent_ && !agent_->episode_exps.empty()) {
      const long replacement_before = agent_->agent.counters().with_replacement_batches;
      agent_->agent.end_of_episode_training(agent_->buffer, agent_->episode_exps,
                                            cfg_.agent.replay_batches, agent_->sampling);
      if (agent_->agent.counters().with_replacement_batches > replacement_before) {
        std::fprintf(stderr, "episode %ld: batch larger than available experiences, "
                             "sampled with replacement\n", episode_index);
      }
      agent_->episode_exps.clear();
    }

    const Summary sum =
        summarize(episode_rows, cfg_.engine_constants, cfg_.reward.ethanol_share_target);
    episodes.field(episode_index)
        .field(std::string(validation ? "validate" : mode_name(mode_)))
        .field(validation ? 1 : 0)
        .field(agent_ ? agent_->agent.sigma() : -1.0)
        .field(static_cast<long>(episode_rows.size()))
        .field(sum.cum_reward)
        .field(sum.rmse_pmi)
        .field(sum.stability)
        .field(sum.dp_violations)
        .field(sum.mean_overshoot)
        .field(sum.mean_eta)
        .field(sum.ethanol_rmse)
        .field(sum.replaced)
        .field(sum.fallbacks)
        .field(sum.misfires)
        .field(agent_ ? static_cast<long>(agent_->buffer.size()) : 0L)
        .field(agent_ ? std::to_string(fnv1a64(agent_->agent.to_json())) : std::string("0"));
    episodes.end_row();
    episodes.flush();
    cycles.flush();

    episode_done_ = static_cast<long>(pi) + 1;
    if (!udp_.enabled && mode_ != RunMode::Validate) write_checkpoint();
  }

  if (udp_.enabled) {
    // Deliver the final transition so the remote agent trains and shuts down.
    udp::StateDatagram d;
    d.cycle = static_cast<uint32_t>(cycle_counter_);
    const auto s = state_.as_array();
    for (int i = 0; i < 8; ++i) d.state[i] = static_cast<float>(s[i]);
    d.reward = static_cast<float>(reward_prev);
    d.done = done_prev ? 1 : 0;
    d.flags = kFlagEndOfRun;
    endpoint_->request_action(d, udp_.training_grace_ms);
  }

  const auto all_rows = read_cycle_log(paths_.out_dir + "/cycles.csv");
  std::ofstream sj(paths_.out_dir + "/summary.json");
  sj << summary_to_json(
            summarize(all_rows, cfg_.engine_constants, cfg_.reward.ethanol_share_target))
     << "\n";
}

void Runner::write_checkpoint() {
  json j;
  j["version"] = 1;
  j["config_hash"] = agent_->pristine_hash;
  j["seed"] = cfg_.seed;
  j["mode"] = mode_name(mode_);
  j["episode_done"] = episode_done_;
  j["cycle_counter"] = cycle_counter_;
  j["fallbacks"] = fallbacks_;
  j["primed"] = primed_;
  j["state"] = state_.as_array();
  j["walk"] = {{"sp", walk_.sp}, {"remaining", walk_.remaining}};
  j["val_walk_active"] = val_rng_.has_value();
  if (val_rng_) {
    j["val_walk"] = {{"sp", val_walk_.sp},
                     {"remaining", val_walk_.remaining},
                     {"rng", val_rng_->serialize()}};
  }
  j["rng"] = {{"noise", agent_->noise.serialize()},
              {"sampling", agent_->sampling.serialize()},
              {"profiles", profiles_.serialize()}};
  j["env_state"] = env_->serialize_state();
  j["agent"] = json::parse(agent_->agent.to_json());
  j["buffer_file"] = "buffer.bin";

  std::ofstream bout(paths_.out_dir + "/buffer.bin", std::ios::binary);
  agent_->buffer.save(bout);
  std::ofstream out(paths_.out_dir + "/checkpoint.json");
  out << j.dump() << "\n";
}

void Runner::load_checkpoint_file(const std::string& path, bool restore_run_state) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint " + path);
  const json j = json::parse(in);
  if (j.at("version").get<int>() != 1) throw ConfigError("unsupported checkpoint version");
  if (j.at("config_hash").get<std::string>() != agent_->pristine_hash)
    throw ConfigError("checkpoint was written under a different configuration; refusing");
  agent_->agent = ddpg::Agent::from_json(j.at("agent").dump(), cfg_.state_ranges);
  if (!restore_run_state) return;
  if (j.value("seed", cfg_.seed) != cfg_.seed)
    throw ConfigError("resuming requires the seed the checkpoint was written under");

  episode_done_ = j.at("episode_done").get<long>();
  cycle_counter_ = j.at("cycle_counter").get<long>();
  fallbacks_ = j.at("fallbacks").get<long>();
  primed_ = j.at("primed").get<bool>();
  std::array<double, CycleState::kComponents> s{};
  j.at("state").get_to(s);
  state_ = CycleState::from_array(s);
  walk_.sp = j.at("walk").at("sp").get<double>();
  walk_.remaining = j.at("walk").at("remaining").get<int>();
  if (j.at("val_walk_active").get<bool>()) {
    val_rng_.emplace(cfg_.seed, "validation-profile");
    val_rng_->restore(j.at("val_walk").at("rng").get<std::string>());
    val_walk_.sp = j.at("val_walk").at("sp").get<double>();
    val_walk_.remaining = j.at("val_walk").at("remaining").get<int>();
  } else {
    val_rng_.reset();
  }
  agent_->noise.restore(j.at("rng").at("noise").get<std::string>());
  agent_->sampling.restore(j.at("rng").at("sampling").get<std::string>());
  profiles_.restore(j.at("rng").at("profiles").get<std::string>());
  env_->restore_state(j.at("env_state").get<std::string>());

  const fs::path dir = fs::path(path).parent_path();
  std::ifstream bin(dir / j.at("buffer_file").get<std::string>(), std::ios::binary);
  if (!bin) throw ConfigError("missing buffer snapshot next to checkpoint");
  agent_->buffer = ddpg::ReplayBuffer::load(bin);
}

// ---------------------------------------------------------------------------
// Agent-side UDP server

struct AgentServer::State {
  Config cfg;
  ddpg::Agent agent;
  ddpg::ReplayBuffer buffer;
  RngStream noise;
  RngStream sampling;
  std::optional<std::pair<CycleState, RawAction>> pending;
  std::vector<ddpg::Experience> episode_exps;
  std::atomic<bool> finished{false};
  std::string out_dir;

  explicit State(const Config& c)
      : cfg(c),
        agent(c.agent, c.state_ranges, RngStream(c.seed, "init")),
        buffer(c.agent.buffer_capacity),
        noise(c.seed, "noise"),
        sampling(c.seed, "sampling") {}
};

AgentServer::AgentServer(Config cfg, RunMode mode, const std::string& listen,
                         const std::string& checkpoint_path, const std::string& out_dir) {
  cfg.validate();
  state_ = std::make_shared<State>(cfg);
  state_->out_dir = out_dir;
  if (!checkpoint_path.empty()) {
    std::ifstream in(checkpoint_path);
    if (!in) throw ConfigError("cannot open checkpoint " + checkpoint_path);
    const json j = json::parse(in);
    state_->agent = ddpg::Agent::from_json(j.at("agent").dump(), cfg.state_ranges);
  }
  if (mode == RunMode::Adapt) state_->agent.set_sigma(0.3);

  auto st = state_;
  const int replay_batches = cfg.agent.replay_batches;
  loop_ = std::make_unique<udp::AgentLoop>(listen, [st, replay_batches](
                                                       const udp::StateDatagram& d) {
    std::array<double, CycleState::kComponents> s{};
    for (int i = 0; i < CycleState::kComponents; ++i) s[i] = static_cast<double>(d.state[i]);
    const CycleState state = CycleState::from_array(s);

    if (st->pending) {
      ddpg::Experience e;
      e.s_prev = st->pending->first;
      e.u = st->pending->second;
      e.s_next = state;
      e.reward = static_cast<double>(d.reward);
      e.done = d.done;
      st->buffer.push(e);
      st->episode_exps.push_back(e);
      st->pending.reset();
      if (d.done) {
        st->agent.end_of_episode_training(st->buffer, st->episode_exps, replay_batches,
                                          st->sampling);
        st->episode_exps.clear();
        if (!st->out_dir.empty()) {
          std::ofstream out(st->out_dir + "/agent.json");
          out << st->agent.to_json() << "\n";
        }
      }
    }

    if (d.flags & kFlagEndOfRun) {
      st->finished.store(true);
      return std::array<float, 3>{};
    }

    const bool validation = d.flags & kFlagValidation;
    const RawAction u = st->agent.act(state, validation ? 0.0 : st->agent.sigma(), st->noise);
    std::array<float, 3> reply{};
    for (int jx = 0; jx < 3; ++jx) reply[jx] = static_cast<float>(u[jx]);
    if (!validation) {
      RawAction widened;
      for (int jx = 0; jx < 3; ++jx) widened[jx] = static_cast<double>(reply[jx]);
      st->pending = {state, widened};
    }
    return reply;
  });
}

AgentServer::~AgentServer() = default;

void AgentServer::run(const std::atomic<bool>& stop) {
  while (!stop.load(std::memory_order_relaxed) && !state_->finished.load()) {
    loop_->run_cycles(1, stop);
  }
}

}  // namespace elab::orch
