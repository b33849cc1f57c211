#pragma once

#include <atomic>
#include <memory>
#include <optional>
#include <string>

#include "elab/config.hpp"
#include "elab/orch/cycle_log.hpp"
#include "elab/orch/metrics.hpp"
#include "elab/sim/engine_sim.hpp"
#include "elab/udp/link.hpp"

namespace elab::orch {

enum class RunMode { Measure, Train, Adapt, Validate };

struct RunPaths {
  std::string out_dir;
  std::string matrices;     // limitation matrices CSV (train/validate)
  std::string checkpoint;   // starting checkpoint (adapt/validate) or resume source
  std::string prefill_log;  // optional cycle log to pre-fill the replay buffer
  bool resume = false;
};

struct UdpRunOptions {
  bool enabled = false;
  std::string listen;
  std::string peer;
  int deadline_ms = 9;
  // Deadline for the request that follows an episode end; the agent side
  // answers it only after running its training update.
  int training_grace_ms = 60000;
};

// Coordinator flags carried in the state datagram's flags byte.
constexpr uint8_t kFlagValidation = 0x01;  // act without noise, don't buffer
constexpr uint8_t kFlagEndOfRun = 0x02;    // complete, train, shut down

// The environment-plus-coordinator side: episode scheduling, safety
// monitoring, reward calculation, logging, checkpoints. The agent runs
// either in-process or behind the UDP link.
class Runner {
 public:
  Runner(Config cfg, RunMode mode, RunPaths paths, UdpRunOptions udp = {});
  ~Runner();

  void run();

  void set_episode_budget(int episodes) { episode_budget_ = episodes; }
  void set_validation_episodes(int n) { validate_budget_ = n; }
  void set_measure_budget(long cycles) { measure_budget_ = cycles; }

  const Config& config() const { return cfg_; }
  long fallback_count() const { return fallbacks_; }

  struct Walk {
    double sp = 0.0;
    int remaining = 0;
  };

 private:
  struct AgentHandle;

  void run_measure();
  void run_episodes();
  CycleState prime_state(bool first_episode_is_validation);
  double training_next_sp();
  RawAction act_cycle(const CycleState& state, bool validation, double reward_prev, int done_prev,
                      bool* fallback);
  void write_checkpoint();
  void load_checkpoint_file(const std::string& path, bool restore_run_state);

  Config cfg_;
  RunMode mode_;
  RunPaths paths_;
  UdpRunOptions udp_;
  int episode_budget_ = 0;
  int validate_budget_ = 1;
  long measure_budget_ = 20000;

  std::unique_ptr<AgentHandle> agent_;  // absent in UDP mode
  std::unique_ptr<sim::EngineSim> env_;
  std::optional<safety::LimitationMatrices> mats_;
  std::unique_ptr<udp::EnvEndpoint> endpoint_;

  RngStream profiles_;
  Walk walk_;                     // training setpoint walk
  std::optional<RngStream> val_rng_;  // validation profile, when one is active
  Walk val_walk_;
  long episode_done_ = 0;  // completed episodes (training + validation)
  long cycle_counter_ = 0;
  long fallbacks_ = 0;
  CycleState state_{};
  bool primed_ = false;
};

// The agent side of the UDP split: policy execution, experience buffering
// and end-of-episode training, mirroring the in-process path bit for bit
// (states and actions cross the wire as 32-bit floats either way).
class AgentServer {
 public:
  AgentServer(Config cfg, RunMode mode, const std::string& listen,
              const std::string& checkpoint_path, const std::string& out_dir);
  ~AgentServer();

  // Serves until the end-of-run flag arrives or `stop` is raised.
  void run(const std::atomic<bool>& stop);
  udp::AgentLoop& loop() { return *loop_; }
  std::string local_address() const { return loop_->local_address(); }

 private:
  struct State;
  std::shared_ptr<State> state_;
  std::unique_ptr<udp::AgentLoop> loop_;
};

// Reads a cycle log and pushes the reconstructable experiences in order.
long prefill_buffer_from_log(const std::string& path, ddpg::ReplayBuffer& buffer);

}  // namespace elab::orch
