#pragma once

#include <array>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "elab/core/rng.hpp"
#include "elab/core/types.hpp"
#include "elab/nn/mlp.hpp"

namespace elab::ddpg {

struct Hyper {
  double gamma = 0.9;
  double sigma0 = 0.5;
  double sigma_decay = 0.95;
  int batch_size = 64;
  double lr_critic = 1e-3;
  double lr_actor = 1e-3;
  double polyak_rho = 1e-3;
  size_t buffer_capacity = 50000;
  int replay_batches = 4;
  std::vector<int> hidden = {64, 64};
  nn::OptimizerState::Mode optimizer = nn::OptimizerState::Mode::Adam;

  void validate() const;
};

struct Experience {
  CycleState s_prev{};
  RawAction u{};
  CycleState s_next{};
  double reward = 0.0;  // <= 0 by construction of the reward
  int done = 0;         // {0, 1}
};

// Bounded FIFO of experiences. Sampling within one batch is without
// replacement unless the buffer holds fewer than `n` entries, in which case
// it falls back to with-replacement and reports it.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(size_t capacity);

  void push(const Experience& e);
  size_t size() const { return size_; }
  size_t capacity() const { return capacity_; }
  const Experience& at(size_t logical_index) const;  // 0 = oldest

  std::vector<size_t> sample_indices(size_t n, RngStream& rng, bool* with_replacement = nullptr) const;
  std::vector<Experience> sample(size_t n, RngStream& rng, bool* with_replacement = nullptr) const;
  // Sample restricted to the newest `window` experiences.
  std::vector<Experience> sample_recent(size_t n, size_t window, RngStream& rng,
                                        bool* with_replacement = nullptr) const;

  void save(std::ostream& out) const;  // versioned binary snapshot
  static ReplayBuffer load(std::istream& in);

 private:
  size_t capacity_;
  size_t head_ = 0;  // next write position
  size_t size_ = 0;
  std::vector<Experience> data_;
};

// Min-max scaling of the observation onto [-1, 1] per component, clamped.
struct StateScaler {
  std::array<std::pair<double, double>, CycleState::kComponents> ranges;

  std::array<double, CycleState::kComponents> normalize(const CycleState& s) const;
  void validate() const;
};

StateScaler default_state_scaler();

// Critic stub interface for tests: returns Q(s, u) and fills dq_du.
using CriticEval = std::function<double(std::span<const double> state_norm,
                                        std::span<const double> action, std::span<double> dq_du)>;

struct TrainCounters {
  long critic_steps = 0;
  long actor_steps = 0;
  long polyak_steps = 0;
  long with_replacement_batches = 0;
};

// Actor, critic, their targets and the update rules. Single-owner mutable;
// training alternates strictly with acting (enforced by the orchestrator).
class Agent {
 public:
  Agent(const Hyper& hp, const StateScaler& scaler, RngStream init_rng);

  // u = actor(x) + N(0, sigma^2) per component, in raw (pre-tanh) space.
  RawAction act(const CycleState& state, double sigma, RngStream& noise) const;

  // y = R + gamma * (1 - d) * Q'(s', mu'(s')).
  double critic_target_value(const Experience& e) const;

  // One optimizer step minimizing the mean squared Bellman residual.
  // Returns the pre-step loss.
  double train_critic(std::span<const Experience> batch);

  // One ascent step on the actor along the critic's action gradient.
  // Returns the pre-step mean Q.
  double train_actor(std::span<const Experience> batch);
  // Same update rule against an external critic (used with stubs in tests).
  double train_actor_with(std::span<const Experience> batch, const CriticEval& critic);

  // theta' <- rho*theta + (1-rho)*theta', both target nets.
  void polyak_update();

  void decay_sigma() { sigma_ *= hp_.sigma_decay; }
  double sigma() const { return sigma_; }
  void set_sigma(double s) { sigma_ = s; }

  // One batch from the most recent episode (its experiences passed in),
  // plus `replay_batches` batches from the whole buffer; critic, actor,
  // Polyak per batch; sigma decay last.
  void end_of_episode_training(ReplayBuffer& buffer,
                               std::span<const Experience> last_episode,
                               int replay_batches, RngStream& sample_rng);

  const Hyper& hyper() const { return hp_; }
  const StateScaler& scaler() const { return scaler_; }
  const TrainCounters& counters() const { return counters_; }

  nn::Mlp& actor() { return actor_; }
  nn::Mlp& critic() { return critic_; }
  nn::Mlp& actor_target() { return actor_target_; }
  nn::Mlp& critic_target() { return critic_target_; }
  const nn::Mlp& actor() const { return actor_; }
  const nn::Mlp& critic() const { return critic_; }
  const nn::Mlp& actor_target() const { return actor_target_; }
  const nn::Mlp& critic_target() const { return critic_target_; }

  std::string to_json() const;  // nets, optimizer states, sigma
  static Agent from_json(const std::string& text, const StateScaler& scaler);

 private:
  Agent(const Hyper& hp, const StateScaler& scaler);  // uninitialized nets

  Hyper hp_;
  StateScaler scaler_;
  nn::Mlp actor_, critic_, actor_target_, critic_target_;
  nn::OptimizerState opt_actor_, opt_critic_;
  double sigma_;
  TrainCounters counters_;
};

// Sum over k of gamma^k * rewards[k].
double discounted_return(std::span<const double> rewards, double gamma);

}  // namespace elab::ddpg
