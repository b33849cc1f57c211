#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <string>

#include <CLI11.hpp>

#include "elab/config.hpp"
#include "elab/core/errors.hpp"
#include "elab/orch/runner.hpp"

namespace {

elab::Config make_config(const std::string& config_path, long seed_override) {
  elab::Config cfg = elab::load_config(config_path);
  if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Safe-RL engine lab: measurement, training, adaptation and export on a "
               "surrogate HCCI engine"};
  app.require_subcommand(1);
  app.fallthrough();  // --config/--seed may follow the subcommand

  std::string config_path;
  long seed_override = -1;
  app.add_option("--config", config_path, "JSON config file (defaults apply when omitted)");
  app.add_option("--seed", seed_override, "master seed override");

  std::string out_dir = "out";
  std::string matrices, checkpoint, prefill, log_path, listen, peer, agent_mode = "train";
  long cycles = 20000;
  int episodes = -1;
  int deadline_ms = -1;
  long group_size = 1000;
  bool resume = false;

  auto* c_measure = app.add_subcommand("measure", "learn the limitation matrices");
  c_measure->add_option("--cycles", cycles, "measurement cycle budget");
  c_measure->add_option("--out", out_dir, "output directory");

  auto* c_train = app.add_subcommand("train", "train the agent with the safety monitor");
  c_train->add_option("--matrices", matrices, "limitation matrices CSV")->required();
  c_train->add_option("--out", out_dir, "output directory");
  c_train->add_option("--episodes", episodes, "episode budget override");
  c_train->add_option("--prefill", prefill, "cycle log to pre-fill the replay buffer");
  c_train->add_flag("--resume", resume, "resume from the checkpoint in --out");
  c_train->add_option("--udp-listen", listen, "env-side UDP listen host:port");
  c_train->add_option("--udp-peer", peer, "agent UDP host:port");
  c_train->add_option("--deadline-ms", deadline_ms, "per-cycle action deadline");

  auto* c_adapt = app.add_subcommand("adapt", "online adaptation from a trained checkpoint");
  c_adapt->add_option("--checkpoint", checkpoint, "trained checkpoint JSON")->required();
  c_adapt->add_option("--out", out_dir, "output directory");
  c_adapt->add_option("--episodes", episodes, "episode budget override");
  c_adapt->add_flag("--resume", resume, "resume from the checkpoint in --out");
  c_adapt->add_option("--udp-listen", listen, "env-side UDP listen host:port");
  c_adapt->add_option("--udp-peer", peer, "agent UDP host:port");
  c_adapt->add_option("--deadline-ms", deadline_ms, "per-cycle action deadline");

  auto* c_validate = app.add_subcommand("validate", "noise-free validation episodes");
  c_validate->add_option("--checkpoint", checkpoint, "checkpoint JSON")->required();
  c_validate->add_option("--matrices", matrices, "limitation matrices CSV (enables the monitor)");
  c_validate->add_option("--out", out_dir, "output directory");
  c_validate->add_option("--episodes", episodes, "number of validation episodes");

  auto* c_export = app.add_subcommand("export", "metrics summary and plot-ready curves");
  c_export->add_option("--log", log_path, "cycles.csv to aggregate")->required();
  c_export->add_option("--out", out_dir, "output directory");
  c_export->add_option("--group-size", group_size, "cycles per reward group");

  auto* c_agent = app.add_subcommand("agent", "agent-side UDP endpoint (policy + training)");
  c_agent->add_option("--udp-listen", listen, "agent UDP listen host:port")->required();
  c_agent->add_option("--checkpoint", checkpoint, "starting checkpoint JSON");
  c_agent->add_option("--mode", agent_mode, "train or adapt (sets the noise level)");
  c_agent->add_option("--out", out_dir, "output directory for agent snapshots");

  CLI11_PARSE(app, argc, argv);

  try {
    elab::Config cfg = make_config(config_path, seed_override);
    if (deadline_ms > 0) cfg.udp.deadline_ms = deadline_ms;

    elab::orch::UdpRunOptions udp;
    if (!listen.empty() && !peer.empty()) {
      udp.enabled = true;
      udp.listen = listen;
      udp.peer = peer;
      udp.deadline_ms = cfg.udp.deadline_ms;
    }

    if (c_measure->parsed()) {
      elab::orch::Runner runner(cfg, elab::orch::RunMode::Measure, {.out_dir = out_dir});
      runner.set_measure_budget(cycles);
      runner.run();
    } else if (c_train->parsed()) {
      elab::orch::RunPaths paths{.out_dir = out_dir, .matrices = matrices,
                                 .prefill_log = prefill, .resume = resume};
      if (resume) paths.checkpoint = out_dir + "/checkpoint.json";
      elab::orch::Runner runner(cfg, elab::orch::RunMode::Train, paths, udp);
      if (episodes > 0) runner.set_episode_budget(episodes);
      runner.run();
    } else if (c_adapt->parsed()) {
      elab::orch::RunPaths paths{.out_dir = out_dir, .checkpoint = checkpoint, .resume = resume};
      if (resume) paths.checkpoint = out_dir + "/checkpoint.json";
      elab::orch::Runner runner(cfg, elab::orch::RunMode::Adapt, paths, udp);
      if (episodes > 0) runner.set_episode_budget(episodes);
      runner.run();
    } else if (c_validate->parsed()) {
      elab::orch::RunPaths paths{.out_dir = out_dir, .matrices = matrices,
                                 .checkpoint = checkpoint};
      elab::orch::Runner runner(cfg, elab::orch::RunMode::Validate, paths);
      if (episodes > 0) runner.set_validation_episodes(episodes);
      runner.run();
    } else if (c_export->parsed()) {
      namespace orch = elab::orch;
      const auto rows = orch::read_cycle_log(log_path);
      std::filesystem::create_directories(out_dir);
      std::ofstream sj(out_dir + "/summary.json");
      sj << orch::summary_to_json(orch::summarize(rows, cfg.engine_constants,
                                                  cfg.reward.ethanol_share_target))
         << "\n";
      std::vector<orch::CycleRow> training;
      for (const auto& r : rows)
        if (r.mode != "validate") training.push_back(r);
      const auto groups = orch::grouped_cumulative_reward(training, group_size);
      elab::CsvWriter gw(out_dir + "/grouped_rewards.csv", {"group", "cum_reward"});
      for (size_t i = 0; i < groups.size(); ++i) {
        gw.field(static_cast<long>(i)).field(groups[i]);
        gw.end_row();
      }
    } else if (c_agent->parsed()) {
      const auto mode =
          agent_mode == "adapt" ? elab::orch::RunMode::Adapt : elab::orch::RunMode::Train;
      elab::orch::AgentServer server(cfg, mode, listen, checkpoint, out_dir);
      std::atomic<bool> stop{false};
      std::fprintf(stderr, "agent listening on %s\n", server.local_address().c_str());
      server.run(stop);
    }
    return 0;
  } catch (const elab::SafetyPreconditionError& e) {
    std::fprintf(stderr, "safety precondition: %s\n", e.what());
    return 3;
  } catch (const elab::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
