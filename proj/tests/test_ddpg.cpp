#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "elab/core/rng.hpp"
#include "elab/ddpg/agent.hpp"

using namespace elab;
using namespace elab::ddpg;

namespace {

Hyper small_hyper(nn::OptimizerState::Mode mode = nn::OptimizerState::Mode::Plain) {
  Hyper h;
  h.hidden = {8, 8};
  h.batch_size = 4;
  h.optimizer = mode;
  return h;
}

Agent make_agent(uint64_t seed = 1, Hyper h = small_hyper()) {
  return Agent(h, default_state_scaler(), RngStream(seed, "init"));
}

CycleState state_sample(RngStream& rng) {
  CycleState s;
  s.alpha50_prev = -5.0 + 20.0 * rng.uniform();
  s.q_prev = 600.0 * rng.uniform();
  s.pmi_prev = 5.0 * rng.uniform();
  s.dpmax_prev = 8.0 * rng.uniform();
  s.ion_max_prev = 3.0 * rng.uniform();
  s.ion_int_prev = 60.0 * rng.uniform();
  s.pmi_sp_prev = 2.0 + 2.0 * rng.uniform();
  s.pmi_sp = 2.0 + 2.0 * rng.uniform();
  return s;
}

Experience exp_sample(RngStream& rng) {
  Experience e;
  e.s_prev = state_sample(rng);
  e.u = {rng.gaussian(), rng.gaussian(), rng.gaussian()};
  e.s_next = state_sample(rng);
  e.reward = -rng.uniform();
  e.done = rng.uniform() < 0.1 ? 1 : 0;
  return e;
}

void zero_net(nn::Mlp& net) {
  for (auto& m : net.w)
    for (auto& v : m) v = 0.0;
  for (auto& m : net.b)
    for (auto& v : m) v = 0.0;
}

}  // namespace

TEST_CASE("act with sigma = 0 equals the actor forward pass exactly") {
  Agent agent = make_agent(3);
  RngStream noise(3, "noise");
  RngStream rng(3, "states");
  for (int i = 0; i < 50; ++i) {
    const CycleState s = state_sample(rng);
    const RawAction u = agent.act(s, 0.0, noise);
    const auto x = agent.scaler().normalize(s);
    const auto mu = nn::forward(agent.actor(), x);
    for (int j = 0; j < 3; ++j) CHECK(u[j] == mu[j]);
  }
}

TEST_CASE("act noise is bit-reproducible under a fixed seed") {
  Agent agent = make_agent(4);
  RngStream noise_a(9, "noise");
  RngStream noise_b(9, "noise");
  RngStream rng(4, "states");
  const CycleState s = state_sample(rng);
  for (int i = 0; i < 100; ++i) {
    const RawAction ua = agent.act(s, 0.5, noise_a);
    const RawAction ub = agent.act(s, 0.5, noise_b);
    for (int j = 0; j < 3; ++j) CHECK(ua[j] == ub[j]);
  }
}

TEST_CASE("act noise has the configured standard deviation within 1 percent") {
  Agent agent = make_agent(5);
  zero_net(agent.actor());  // pure noise output
  RngStream noise(5, "noise");
  RngStream rng(5, "states");
  const CycleState s = state_sample(rng);
  double sum = 0.0, sum_sq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const RawAction u = agent.act(s, 0.5, noise);
    for (int j = 0; j < 3; ++j) {
      sum += u[j];
      sum_sq += u[j] * u[j];
    }
  }
  const double mean = sum / (3.0 * n);
  const double sigma_hat = std::sqrt(sum_sq / (3.0 * n) - mean * mean);
  CHECK(sigma_hat == doctest::Approx(0.5).epsilon(0.01));
}

TEST_CASE("decay_sigma follows the documented geometric schedule") {
  Hyper h = small_hyper();
  h.sigma0 = 0.5;
  h.sigma_decay = 0.95;
  Agent agent = make_agent(1, h);
  agent.decay_sigma();
  CHECK(agent.sigma() == doctest::Approx(0.475).epsilon(1e-12));
  for (int e = 1; e < 20; ++e) agent.decay_sigma();
  CHECK(agent.sigma() == doctest::Approx(0.5 * std::pow(0.95, 20)).epsilon(1e-12));
  CHECK(agent.sigma() == doctest::Approx(0.1792).epsilon(1e-3));

  Hyper h1 = small_hyper();
  h1.sigma_decay = 1.0;
  Agent keep = make_agent(1, h1);
  keep.decay_sigma();
  CHECK(keep.sigma() == 0.5);
}

TEST_CASE("critic_target_value terminal and zero-target cases") {
  Agent agent = make_agent(6);
  RngStream rng(6, "states");
  Experience e = exp_sample(rng);
  e.reward = -0.7;
  e.done = 1;
  CHECK(agent.critic_target_value(e) == -0.7);

  e.done = 0;
  zero_net(agent.critic_target());
  CHECK(agent.critic_target_value(e) == doctest::Approx(-0.7).epsilon(1e-15));
}

TEST_CASE("critic_target_value composes reward and bootstrap: -1 + 0.9 * -2 = -2.8") {
  Agent agent = make_agent(7);
  // Force Q' to a constant -2 via a zeroed net with output bias -2.
  zero_net(agent.critic_target());
  agent.critic_target().b.back()[0] = -2.0;
  RngStream rng(7, "states");
  Experience e = exp_sample(rng);
  e.reward = -1.0;
  e.done = 0;
  CHECK(agent.critic_target_value(e) == doctest::Approx(-2.8).epsilon(1e-12));
}

TEST_CASE("train_critic: batch at the Bellman fixed point leaves plain-mode parameters unchanged") {
  Agent agent = make_agent(8);
  RngStream rng(8, "states");
  std::vector<Experience> batch;
  for (int i = 0; i < 4; ++i) {
    Experience e = exp_sample(rng);
    e.done = 1;
    const auto x = agent.scaler().normalize(e.s_prev);
    std::vector<double> in(x.begin(), x.end());
    in.insert(in.end(), e.u.begin(), e.u.end());
    e.reward = nn::forward(agent.critic(), in)[0];  // y == current Q
    batch.push_back(e);
  }
  const nn::Mlp before = agent.critic();
  const double loss = agent.train_critic(batch);
  CHECK(loss == doctest::Approx(0.0).epsilon(1e-20));
  CHECK(agent.critic().w == before.w);
  CHECK(agent.critic().b == before.b);
}

TEST_CASE("train_critic loss equals an independent mean-squared-residual recomputation") {
  Agent agent = make_agent(9);
  RngStream rng(9, "states");
  std::vector<Experience> batch;
  for (int i = 0; i < 8; ++i) batch.push_back(exp_sample(rng));
  // Oracle: recompute targets and residuals with plain forward passes before
  // the training step mutates anything.
  double expect = 0.0;
  for (const auto& e : batch) {
    const double y = agent.critic_target_value(e);
    const auto x = agent.scaler().normalize(e.s_prev);
    std::vector<double> in(x.begin(), x.end());
    in.insert(in.end(), e.u.begin(), e.u.end());
    const double q = nn::forward(agent.critic(), in)[0];
    expect += (q - y) * (q - y);
  }
  expect /= batch.size();
  const double loss = agent.train_critic(batch);
  CHECK(loss == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("train_critic: a step at small learning rate decreases the loss") {
  Hyper h = small_hyper(nn::OptimizerState::Mode::Plain);
  h.lr_critic = 1e-3;
  Agent agent = make_agent(10, h);
  RngStream rng(10, "states");
  std::vector<Experience> batch{exp_sample(rng)};
  const double first = agent.train_critic(batch);
  const double second = agent.train_critic(batch);
  CHECK(second < first);
}

TEST_CASE("train_actor with a constant critic leaves the actor unchanged") {
  Agent agent = make_agent(11);
  zero_net(agent.critic());
  RngStream rng(11, "states");
  std::vector<Experience> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(exp_sample(rng));
  const nn::Mlp before = agent.actor();
  agent.train_actor(batch);
  CHECK(agent.actor().w == before.w);
  CHECK(agent.actor().b == before.b);
}

TEST_CASE("train_actor against a quadratic critic stub drives the policy toward its optimum") {
  Hyper h = small_hyper(nn::OptimizerState::Mode::Adam);
  h.lr_actor = 0.02;
  Agent agent = make_agent(12, h);
  RngStream rng(12, "states");
  std::vector<Experience> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(exp_sample(rng));

  // Q(s, u) = -(u_0 - 3)^2, maximized at u_0 = 3.
  const CriticEval quadratic = [](std::span<const double>, std::span<const double> u,
                                  std::span<double> dq_du) {
    dq_du[0] = -2.0 * (u[0] - 3.0);
    dq_du[1] = 0.0;
    dq_du[2] = 0.0;
    return -(u[0] - 3.0) * (u[0] - 3.0);
  };

  for (int step = 0; step < 3000; ++step) agent.train_actor_with(batch, quadratic);
  RngStream noise(12, "noise");
  for (const auto& e : batch) {
    const RawAction u = agent.act(e.s_prev, 0.0, noise);
    CHECK(u[0] == doctest::Approx(3.0).epsilon(0.02));
  }
}

TEST_CASE("actor-through-critic gradient matches finite differences on the actor parameters") {
  Hyper h = small_hyper(nn::OptimizerState::Mode::Plain);
  h.lr_actor = 1.0;  // one plain step exposes the gradient as theta_delta
  Agent agent = make_agent(13, h);
  RngStream rng(13, "states");
  std::vector<Experience> batch;
  for (int i = 0; i < 3; ++i) batch.push_back(exp_sample(rng));

  auto mean_q = [&](const Agent& a) {
    double acc = 0.0;
    for (const auto& e : batch) {
      const auto x = a.scaler().normalize(e.s_prev);
      const auto mu = nn::forward(a.actor(), x);
      std::vector<double> in(x.begin(), x.end());
      in.insert(in.end(), mu.begin(), mu.end());
      acc += nn::forward(a.critic(), in)[0];
    }
    return acc / batch.size();
  };

  Agent stepped = agent;
  stepped.train_actor(batch);

  // Floor the denominator at a fraction of the gradient scale; the relative
  // error of a numerically-zero coordinate only measures roundoff.
  double scale = 0.0;
  for (size_t l = 0; l < agent.actor().w.size(); ++l)
    for (size_t i = 0; i < agent.actor().w[l].size(); i += 7)
      scale = std::max(scale, std::abs(stepped.actor().w[l][i] - agent.actor().w[l][i]));
  const double floor = 1e-3 * scale;

  const double fd_h = 1e-6;
  double worst = 0.0;
  for (size_t l = 0; l < agent.actor().w.size(); ++l) {
    for (size_t i = 0; i < agent.actor().w[l].size(); i += 7) {
      // Ascent step of size lr=1 means delta = +dJ/dtheta.
      const double analytic = stepped.actor().w[l][i] - agent.actor().w[l][i];
      Agent probe = agent;
      probe.actor().w[l][i] += fd_h;
      const double up = mean_q(probe);
      probe.actor().w[l][i] -= 2.0 * fd_h;
      const double down = mean_q(probe);
      const double fd = (up - down) / (2.0 * fd_h);
      const double denom = std::max({std::abs(fd), std::abs(analytic), floor});
      worst = std::max(worst, std::abs(fd - analytic) / denom);
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("polyak_update: rho 1e-3 blend, fixed point, and full copy") {
  Hyper h = small_hyper();
  h.polyak_rho = 1e-3;
  Agent agent = make_agent(14, h);
  // theta = 1, theta' = 0 -> theta' becomes exactly 0.001.
  for (auto& m : agent.critic().w)
    for (auto& v : m) v = 1.0;
  zero_net(agent.critic_target());
  agent.polyak_update();
  for (const auto& m : agent.critic_target().w)
    for (double v : m) CHECK(v == 1e-3);

  // Exactness against the same arithmetic, elementwise, on random nets.
  Agent a2 = make_agent(15, h);
  const nn::Mlp target_before = a2.actor_target();
  a2.polyak_update();
  for (size_t l = 0; l < a2.actor().w.size(); ++l) {
    for (size_t i = 0; i < a2.actor().w[l].size(); ++i) {
      const double expect = 1e-3 * a2.actor().w[l][i] + (1.0 - 1e-3) * target_before.w[l][i];
      CHECK(a2.actor_target().w[l][i] == expect);
    }
  }

  // theta == theta' is a fixed point up to the last rounding of the blend.
  Agent a3 = make_agent(16, h);
  const nn::Mlp same = a3.critic();
  a3.critic_target() = same;
  a3.polyak_update();
  for (size_t l = 0; l < same.w.size(); ++l)
    for (size_t i = 0; i < same.w[l].size(); ++i)
      CHECK(a3.critic_target().w[l][i] == doctest::Approx(same.w[l][i]).epsilon(3e-16));

  // rho = 1 copies the source outright.
  Hyper h1 = small_hyper();
  h1.polyak_rho = 1.0;
  Agent a4 = make_agent(17, h1);
  a4.polyak_update();
  CHECK(a4.critic_target().w == a4.critic().w);
  CHECK(a4.actor_target().b == a4.actor().b);
}

TEST_CASE("replay buffer: strict FIFO eviction and capacity bound") {
  ReplayBuffer buf(5);
  RngStream rng(18, "states");
  std::vector<Experience> all;
  for (int i = 0; i < 12; ++i) {
    Experience e = exp_sample(rng);
    e.reward = -static_cast<double>(i);  // tag by insertion order
    all.push_back(e);
    buf.push(e);
    CHECK(buf.size() <= 5);
  }
  REQUIRE(buf.size() == 5);
  for (size_t i = 0; i < 5; ++i) CHECK(buf.at(i).reward == all[7 + i].reward);
}

TEST_CASE("replay buffer sampling: without replacement within a batch, flagged otherwise") {
  ReplayBuffer buf(100);
  RngStream rng(19, "states");
  for (int i = 0; i < 50; ++i) buf.push(exp_sample(rng));

  RngStream sample_rng(19, "sampling");
  bool with_replacement = true;
  const auto idx = buf.sample_indices(32, sample_rng, &with_replacement);
  CHECK(!with_replacement);
  std::vector<size_t> sorted = idx;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());

  const auto big = buf.sample_indices(64, sample_rng, &with_replacement);
  CHECK(with_replacement);
  CHECK(big.size() == 64);

  // Fixed seed reproduces the index sequence.
  RngStream r1(7, "sampling"), r2(7, "sampling");
  CHECK(buf.sample_indices(10, r1) == buf.sample_indices(10, r2));
}

TEST_CASE("replay buffer binary snapshot round-trips") {
  ReplayBuffer buf(64);
  RngStream rng(20, "states");
  for (int i = 0; i < 40; ++i) buf.push(exp_sample(rng));
  std::stringstream ss;
  buf.save(ss);
  const ReplayBuffer back = ReplayBuffer::load(ss);
  REQUIRE(back.size() == buf.size());
  CHECK(back.capacity() == buf.capacity());
  for (size_t i = 0; i < buf.size(); ++i) {
    CHECK(back.at(i).reward == buf.at(i).reward);
    CHECK(back.at(i).u == buf.at(i).u);
    CHECK(back.at(i).done == buf.at(i).done);
    CHECK(back.at(i).s_prev.as_array() == buf.at(i).s_prev.as_array());
    CHECK(back.at(i).s_next.as_array() == buf.at(i).s_next.as_array());
  }
}

TEST_CASE("end_of_episode_training runs 1 + replay_batches update triples and decays sigma") {
  Hyper h = small_hyper(nn::OptimizerState::Mode::Adam);
  h.replay_batches = 0;
  Agent agent = make_agent(21, h);
  ReplayBuffer buf(1000);
  RngStream rng(21, "states");
  std::vector<Experience> episode;
  for (int i = 0; i < 20; ++i) {
    episode.push_back(exp_sample(rng));
    buf.push(episode.back());
  }
  RngStream sampling(21, "sampling");
  const double sigma_before = agent.sigma();
  agent.end_of_episode_training(buf, episode, 0, sampling);
  CHECK(agent.counters().critic_steps == 1);
  CHECK(agent.counters().actor_steps == 1);
  CHECK(agent.counters().polyak_steps == 1);
  CHECK(agent.sigma() == doctest::Approx(sigma_before * 0.95));

  agent.end_of_episode_training(buf, episode, 4, sampling);
  CHECK(agent.counters().critic_steps == 1 + 5);
  CHECK(agent.counters().actor_steps == 1 + 5);
  CHECK(agent.counters().polyak_steps == 1 + 5);
}

TEST_CASE("end_of_episode_training flags with-replacement sampling on short episodes") {
  Hyper h = small_hyper(nn::OptimizerState::Mode::Adam);
  h.batch_size = 16;
  Agent agent = make_agent(22, h);
  ReplayBuffer buf(1000);
  RngStream rng(22, "states");
  std::vector<Experience> episode;
  for (int i = 0; i < 5; ++i) {  // shorter than the batch size
    episode.push_back(exp_sample(rng));
    buf.push(episode.back());
  }
  RngStream sampling(22, "sampling");
  agent.end_of_episode_training(buf, episode, 1, sampling);
  CHECK(agent.counters().with_replacement_batches >= 2);
}

TEST_CASE("agent json round-trip preserves parameters, sigma and optimizer state") {
  Hyper h = small_hyper(nn::OptimizerState::Mode::Adam);
  Agent agent = make_agent(23, h);
  RngStream rng(23, "states");
  std::vector<Experience> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(exp_sample(rng));
  agent.train_critic(batch);
  agent.train_actor(batch);
  agent.polyak_update();
  agent.decay_sigma();

  const Agent back = Agent::from_json(agent.to_json(), default_state_scaler());
  CHECK(back.sigma() == agent.sigma());
  CHECK(back.actor().w == agent.actor().w);
  CHECK(back.critic().w == agent.critic().w);
  CHECK(back.actor_target().w == agent.actor_target().w);
  CHECK(back.critic_target().b == agent.critic_target().b);

  // Continued training agrees bit for bit.
  Agent a = agent;
  Agent b = back;
  const double la = a.train_critic(batch);
  const double lb = b.train_critic(batch);
  CHECK(la == lb);
  CHECK(a.critic().w == b.critic().w);
}

TEST_CASE("discounted_return sums gamma-weighted rewards") {
  const std::vector<double> r{1.0, 1.0, 1.0};
  CHECK(discounted_return(r, 0.5) == doctest::Approx(1.75).epsilon(1e-15));
  CHECK(discounted_return(r, 0.0) == 1.0);
  const std::vector<double> zeros{0.0, 0.0, 0.0, 0.0};
  CHECK(discounted_return(zeros, 0.9) == 0.0);
}
