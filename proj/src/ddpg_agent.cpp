#include "elab/ddpg/agent.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "elab/core/errors.hpp"

namespace elab::ddpg {

using json = nlohmann::json;

void Hyper::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must be in (0, 1]");
  if (!(polyak_rho > 0.0 && polyak_rho <= 1.0)) throw ConfigError("polyak rho must be in (0, 1]");
  if (!(sigma0 >= 0.0)) throw ConfigError("sigma0 must be non-negative");
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  if (buffer_capacity < 1) throw ConfigError("buffer capacity must be positive");
  if (replay_batches < 0) throw ConfigError("replay_batches must be non-negative");
  for (int h : hidden)
    if (h < 1) throw ConfigError("hidden widths must be positive");
}

ReplayBuffer::ReplayBuffer(size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("replay buffer capacity must be positive");
  data_.reserve(std::min<size_t>(capacity, 4096));
}

void ReplayBuffer::push(const Experience& e) {
  if (size_ < capacity_) {
    data_.push_back(e);
    ++size_;
    head_ = size_ % capacity_;
  } else {
    data_[head_] = e;  // overwrite the oldest
    head_ = (head_ + 1) % capacity_;
  }
}

const Experience& ReplayBuffer::at(size_t logical_index) const {
  if (logical_index >= size_) throw ContractError("replay buffer index out of range");
  if (size_ < capacity_) return data_[logical_index];
  return data_[(head_ + logical_index) % capacity_];
}

std::vector<size_t> ReplayBuffer::sample_indices(size_t n, RngStream& rng,
                                                 bool* with_replacement) const {
  if (size_ == 0) throw ContractError("cannot sample from an empty replay buffer");
  std::vector<size_t> out;
  out.reserve(n);
  if (n > size_) {
    if (with_replacement) *with_replacement = true;
    for (size_t i = 0; i < n; ++i) out.push_back(rng.uniform_index(size_));
    return out;
  }
  if (with_replacement) *with_replacement = false;
  // Floyd's sampling: n distinct indices, order randomized by insertion.
  std::vector<size_t> chosen;
  chosen.reserve(n);
  for (size_t j = size_ - n; j < size_; ++j) {
    const size_t t = rng.uniform_index(j + 1);
    if (std::find(chosen.begin(), chosen.end(), t) == chosen.end()) {
      chosen.push_back(t);
    } else {
      chosen.push_back(j);
    }
  }
  return chosen;
}

std::vector<Experience> ReplayBuffer::sample(size_t n, RngStream& rng,
                                             bool* with_replacement) const {
  std::vector<Experience> out;
  out.reserve(n);
  for (size_t i : sample_indices(n, rng, with_replacement)) out.push_back(at(i));
  return out;
}

std::vector<Experience> ReplayBuffer::sample_recent(size_t n, size_t window, RngStream& rng,
                                                    bool* with_replacement) const {
  if (size_ == 0) throw ContractError("cannot sample from an empty replay buffer");
  const size_t w = std::min(window, size_);
  const size_t offset = size_ - w;
  std::vector<Experience> out;
  out.reserve(n);
  if (n > w) {
    if (with_replacement) *with_replacement = true;
    for (size_t i = 0; i < n; ++i) out.push_back(at(offset + rng.uniform_index(w)));
    return out;
  }
  if (with_replacement) *with_replacement = false;
  std::vector<size_t> chosen;
  chosen.reserve(n);
  for (size_t j = w - n; j < w; ++j) {
    const size_t t = rng.uniform_index(j + 1);
    if (std::find(chosen.begin(), chosen.end(), t) == chosen.end()) {
      chosen.push_back(t);
    } else {
      chosen.push_back(j);
    }
  }
  for (size_t i : chosen) out.push_back(at(offset + i));
  return out;
}

namespace {
constexpr char kBufferMagic[4] = {'E', 'L', 'B', 'F'};
constexpr uint32_t kBufferVersion = 1;

void write_raw(std::ostream& out, const void* p, size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
void read_raw(std::istream& in, void* p, size_t n) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!in) throw ContractError("replay buffer snapshot truncated");
}
}  // namespace

void ReplayBuffer::save(std::ostream& out) const {
  write_raw(out, kBufferMagic, 4);
  write_raw(out, &kBufferVersion, sizeof(kBufferVersion));
  const uint64_t cap = capacity_, n = size_;
  write_raw(out, &cap, sizeof(cap));
  write_raw(out, &n, sizeof(n));
  for (size_t i = 0; i < size_; ++i) {
    const Experience& e = at(i);
    const auto sp = e.s_prev.as_array();
    const auto sn = e.s_next.as_array();
    write_raw(out, sp.data(), sizeof(double) * sp.size());
    write_raw(out, e.u.data(), sizeof(double) * e.u.size());
    write_raw(out, sn.data(), sizeof(double) * sn.size());
    write_raw(out, &e.reward, sizeof(e.reward));
    const uint8_t d = static_cast<uint8_t>(e.done);
    write_raw(out, &d, sizeof(d));
  }
}

ReplayBuffer ReplayBuffer::load(std::istream& in) {
  char magic[4];
  read_raw(in, magic, 4);
  if (std::string_view(magic, 4) != std::string_view(kBufferMagic, 4))
    throw ContractError("replay buffer snapshot: bad magic");
  uint32_t version;
  read_raw(in, &version, sizeof(version));
  if (version != kBufferVersion) throw ContractError("replay buffer snapshot: unsupported version");
  uint64_t cap, n;
  read_raw(in, &cap, sizeof(cap));
  read_raw(in, &n, sizeof(n));
  ReplayBuffer buf(static_cast<size_t>(cap));
  for (uint64_t i = 0; i < n; ++i) {
    Experience e;
    std::array<double, CycleState::kComponents> sp{}, sn{};
    read_raw(in, sp.data(), sizeof(double) * sp.size());
    read_raw(in, e.u.data(), sizeof(double) * e.u.size());
    read_raw(in, sn.data(), sizeof(double) * sn.size());
    read_raw(in, &e.reward, sizeof(e.reward));
    uint8_t d;
    read_raw(in, &d, sizeof(d));
    e.s_prev = CycleState::from_array(sp);
    e.s_next = CycleState::from_array(sn);
    e.done = d;
    buf.push(e);
  }
  return buf;
}

std::array<double, CycleState::kComponents> StateScaler::normalize(const CycleState& s) const {
  const auto raw = s.as_array();
  std::array<double, CycleState::kComponents> out{};
  for (int i = 0; i < CycleState::kComponents; ++i) {
    const auto [lo, hi] = ranges[i];
    out[i] = std::clamp(2.0 * (raw[i] - lo) / (hi - lo) - 1.0, -1.0, 1.0);
  }
  return out;
}

void StateScaler::validate() const {
  for (const auto& [lo, hi] : ranges) {
    if (!(lo < hi)) throw ConfigError("state range must have lo < hi");
  }
}

StateScaler default_state_scaler() {
  StateScaler s;
  s.ranges = {{{-10.0, 25.0},   // alpha50
               {0.0, 700.0},    // q
               {0.0, 6.0},      // pmi
               {0.0, 12.0},     // dpmax
               {0.0, 4.0},      // ion_max
               {0.0, 90.0},     // ion_int
               {1.5, 4.5},      // pmi_sp_prev
               {1.5, 4.5}}};    // pmi_sp
  return s;
}

namespace {
std::vector<int> full_topology(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> t;
  t.push_back(in);
  for (int h : hidden) t.push_back(h);
  t.push_back(out);
  return t;
}
}  // namespace

Agent::Agent(const Hyper& hp, const StateScaler& scaler) : hp_(hp), scaler_(scaler), sigma_(hp.sigma0) {
  hp_.validate();
  scaler_.validate();
}

Agent::Agent(const Hyper& hp, const StateScaler& scaler, RngStream init_rng) : Agent(hp, scaler) {
  constexpr int kStateDim = CycleState::kComponents;
  constexpr int kActionDim = 3;
  actor_ = nn::make_mlp(full_topology(kStateDim, hp_.hidden, kActionDim), init_rng, 1e-3);
  critic_ = nn::make_mlp(full_topology(kStateDim + kActionDim, hp_.hidden, 1), init_rng);
  actor_target_ = actor_;    // exact copies at t = 0
  critic_target_ = critic_;
  opt_actor_ = nn::OptimizerState::for_net(actor_, hp_.optimizer, hp_.lr_actor);
  opt_critic_ = nn::OptimizerState::for_net(critic_, hp_.optimizer, hp_.lr_critic);
}

RawAction Agent::act(const CycleState& state, double sigma, RngStream& noise) const {
  const auto x = scaler_.normalize(state);
  const auto mu = nn::forward(actor_, x);
  RawAction u{};
  for (int j = 0; j < 3; ++j) {
    u[j] = mu[j] + (sigma > 0.0 ? noise.gaussian(0.0, sigma) : 0.0);
  }
  return u;
}

namespace {
std::vector<double> critic_input(const StateScaler& scaler, const CycleState& s,
                                 std::span<const double> u) {
  const auto x = scaler.normalize(s);
  std::vector<double> in(x.begin(), x.end());
  in.insert(in.end(), u.begin(), u.end());
  return in;
}
}  // namespace

double Agent::critic_target_value(const Experience& e) const {
  if (e.done) return e.reward;
  const auto x_next = scaler_.normalize(e.s_next);
  const auto mu_next = nn::forward(actor_target_, x_next);
  const auto q_in = critic_input(scaler_, e.s_next, mu_next);
  const double q_next = nn::forward(critic_target_, q_in)[0];
  return e.reward + hp_.gamma * q_next;
}

double Agent::train_critic(std::span<const Experience> batch) {
  if (batch.empty()) throw ContractError("train_critic: empty batch");
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  nn::Gradients total = nn::Gradients::zeros_like(critic_);
  double loss = 0.0;
  for (const Experience& e : batch) {
    const double y = critic_target_value(e);
    nn::ForwardCache cache;
    const auto q_in = critic_input(scaler_, e.s_prev, e.u);
    const double q = nn::forward(critic_, q_in, cache)[0];
    const double residual = q - y;
    loss += residual * residual * inv_n;
    const double upstream = 2.0 * residual * inv_n;
    total.accumulate(nn::backward(critic_, cache, std::array<double, 1>{upstream}));
  }
  nn::opt_step(critic_, total, opt_critic_);
  counters_.critic_steps += 1;
  return loss;
}

double Agent::train_actor(std::span<const Experience> batch) {
  const nn::Mlp& critic = critic_;
  const StateScaler& scaler = scaler_;
  return train_actor_with(batch, [&critic, &scaler](std::span<const double> state_norm,
                                                    std::span<const double> action,
                                                    std::span<double> dq_du) {
    std::vector<double> in(state_norm.begin(), state_norm.end());
    in.insert(in.end(), action.begin(), action.end());
    nn::ForwardCache cache;
    const double q = nn::forward(critic, in, cache)[0];
    const nn::Gradients g = nn::backward(critic, cache, std::array<double, 1>{1.0});
    const size_t offset = state_norm.size();
    for (size_t j = 0; j < dq_du.size(); ++j) dq_du[j] = g.dx[offset + j];
    return q;
  });
}

double Agent::train_actor_with(std::span<const Experience> batch, const CriticEval& critic) {
  if (batch.empty()) throw ContractError("train_actor: empty batch");
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  nn::Gradients total = nn::Gradients::zeros_like(actor_);
  double mean_q = 0.0;
  std::array<double, 3> dq_du{};
  for (const Experience& e : batch) {
    const auto x = scaler_.normalize(e.s_prev);
    nn::ForwardCache cache;
    const auto mu = nn::forward(actor_, x, cache);
    mean_q += critic(x, mu, dq_du) * inv_n;
    // Ascent on mean Q == descent on -mean Q.
    std::array<double, 3> upstream{};
    for (int j = 0; j < 3; ++j) upstream[j] = -dq_du[j] * inv_n;
    total.accumulate(nn::backward(actor_, cache, upstream));
  }
  nn::opt_step(actor_, total, opt_actor_);
  counters_.actor_steps += 1;
  return mean_q;
}

void Agent::polyak_update() {
  const double rho = hp_.polyak_rho;
  auto blend = [rho](nn::Mlp& target, const nn::Mlp& source) {
    for (size_t l = 0; l < source.w.size(); ++l) {
      for (size_t i = 0; i < source.w[l].size(); ++i)
        target.w[l][i] = rho * source.w[l][i] + (1.0 - rho) * target.w[l][i];
      for (size_t i = 0; i < source.b[l].size(); ++i)
        target.b[l][i] = rho * source.b[l][i] + (1.0 - rho) * target.b[l][i];
    }
  };
  blend(critic_target_, critic_);
  blend(actor_target_, actor_);
  counters_.polyak_steps += 1;
}

void Agent::end_of_episode_training(ReplayBuffer& buffer,
                                    std::span<const Experience> last_episode,
                                    int replay_batches, RngStream& sample_rng) {
  const size_t n = static_cast<size_t>(hp_.batch_size);
  auto run_batch = [&](const std::vector<Experience>& batch) {
    train_critic(batch);
    train_actor(batch);
    polyak_update();
  };

  // One batch from the most recent episode.
  {
    std::vector<Experience> batch;
    batch.reserve(n);
    const size_t m = last_episode.size();
    if (m == 0) throw ContractError("end_of_episode_training: empty episode");
    if (n > m) {
      counters_.with_replacement_batches += 1;
      for (size_t i = 0; i < n; ++i) batch.push_back(last_episode[sample_rng.uniform_index(m)]);
    } else {
      std::vector<size_t> chosen;
      chosen.reserve(n);
      for (size_t j = m - n; j < m; ++j) {
        const size_t t = sample_rng.uniform_index(j + 1);
        if (std::find(chosen.begin(), chosen.end(), t) == chosen.end()) {
          chosen.push_back(t);
        } else {
          chosen.push_back(j);
        }
      }
      for (size_t i : chosen) batch.push_back(last_episode[i]);
    }
    run_batch(batch);
  }

  // Replay batches from the whole buffer.
  for (int b = 0; b < replay_batches; ++b) {
    bool with_replacement = false;
    auto batch = buffer.sample(n, sample_rng, &with_replacement);
    if (with_replacement) counters_.with_replacement_batches += 1;
    run_batch(batch);
  }

  decay_sigma();
}

namespace {
json optimizer_to_json(const nn::OptimizerState& s) {
  json j;
  j["mode"] = s.mode == nn::OptimizerState::Mode::Adam ? "adam" : "plain";
  j["lr"] = s.lr;
  j["beta1"] = s.beta1;
  j["beta2"] = s.beta2;
  j["eps"] = s.eps;
  j["step"] = s.step;
  j["m_w"] = s.m_w;
  j["v_w"] = s.v_w;
  j["m_b"] = s.m_b;
  j["v_b"] = s.v_b;
  return j;
}

nn::OptimizerState optimizer_from_json(const json& j) {
  nn::OptimizerState s;
  s.mode = j.at("mode").get<std::string>() == "adam" ? nn::OptimizerState::Mode::Adam
                                                     : nn::OptimizerState::Mode::Plain;
  j.at("lr").get_to(s.lr);
  j.at("beta1").get_to(s.beta1);
  j.at("beta2").get_to(s.beta2);
  j.at("eps").get_to(s.eps);
  j.at("step").get_to(s.step);
  j.at("m_w").get_to(s.m_w);
  j.at("v_w").get_to(s.v_w);
  j.at("m_b").get_to(s.m_b);
  j.at("v_b").get_to(s.v_b);
  return s;
}

json hyper_to_json(const Hyper& h) {
  json j;
  j["gamma"] = h.gamma;
  j["sigma0"] = h.sigma0;
  j["sigma_decay"] = h.sigma_decay;
  j["batch_size"] = h.batch_size;
  j["lr_critic"] = h.lr_critic;
  j["lr_actor"] = h.lr_actor;
  j["polyak_rho"] = h.polyak_rho;
  j["buffer_capacity"] = h.buffer_capacity;
  j["replay_batches"] = h.replay_batches;
  j["hidden"] = h.hidden;
  j["optimizer"] = h.optimizer == nn::OptimizerState::Mode::Adam ? "adam" : "plain";
  return j;
}

Hyper hyper_from_json(const json& j) {
  Hyper h;
  j.at("gamma").get_to(h.gamma);
  j.at("sigma0").get_to(h.sigma0);
  j.at("sigma_decay").get_to(h.sigma_decay);
  j.at("batch_size").get_to(h.batch_size);
  j.at("lr_critic").get_to(h.lr_critic);
  j.at("lr_actor").get_to(h.lr_actor);
  j.at("polyak_rho").get_to(h.polyak_rho);
  j.at("buffer_capacity").get_to(h.buffer_capacity);
  j.at("replay_batches").get_to(h.replay_batches);
  j.at("hidden").get_to(h.hidden);
  h.optimizer = j.at("optimizer").get<std::string>() == "adam" ? nn::OptimizerState::Mode::Adam
                                                               : nn::OptimizerState::Mode::Plain;
  return h;
}
}  // namespace

std::string Agent::to_json() const {
  json j;
  j["hyper"] = hyper_to_json(hp_);
  j["sigma"] = sigma_;
  j["actor"] = json::parse(nn::to_json(actor_));
  j["critic"] = json::parse(nn::to_json(critic_));
  j["actor_target"] = json::parse(nn::to_json(actor_target_));
  j["critic_target"] = json::parse(nn::to_json(critic_target_));
  j["opt_actor"] = optimizer_to_json(opt_actor_);
  j["opt_critic"] = optimizer_to_json(opt_critic_);
  return j.dump();
}

Agent Agent::from_json(const std::string& text, const StateScaler& scaler) {
  const json j = json::parse(text);
  Agent a(hyper_from_json(j.at("hyper")), scaler);
  a.sigma_ = j.at("sigma").get<double>();
  a.actor_ = nn::mlp_from_json(j.at("actor").dump());
  a.critic_ = nn::mlp_from_json(j.at("critic").dump());
  a.actor_target_ = nn::mlp_from_json(j.at("actor_target").dump());
  a.critic_target_ = nn::mlp_from_json(j.at("critic_target").dump());
  a.opt_actor_ = optimizer_from_json(j.at("opt_actor"));
  a.opt_critic_ = optimizer_from_json(j.at("opt_critic"));
  return a;
}

double discounted_return(std::span<const double> rewards, double gamma) {
  double total = 0.0;
  double weight = 1.0;
  for (double r : rewards) {
    total += weight * r;
    weight *= gamma;
  }
  return total;
}

}  // namespace elab::ddpg
