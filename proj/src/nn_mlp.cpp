#include "elab/nn/mlp.hpp"

#include <cmath>
#include <cstddef>

#include <nlohmann/json.hpp>

#include "elab/core/errors.hpp"

namespace elab::nn {

using json = nlohmann::json;

size_t Mlp::parameter_count() const {
  size_t n = 0;
  for (const auto& m : w) n += m.size();
  for (const auto& v : b) n += v.size();
  return n;
}

Mlp make_mlp(const std::vector<int>& topology, RngStream& rng, double final_layer_scale) {
  if (topology.size() < 2) throw ContractError("mlp topology needs at least two layers");
  for (int width : topology) {
    if (width <= 0) throw ContractError("mlp layer widths must be positive");
  }
  Mlp net;
  net.topology = topology;
  const int layers = static_cast<int>(topology.size()) - 1;
  net.w.resize(layers);
  net.b.resize(layers);
  for (int l = 0; l < layers; ++l) {
    const int in = topology[l];
    const int out = topology[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    const double scale = (l == layers - 1) ? final_layer_scale : 1.0;
    net.w[l].resize(static_cast<size_t>(out) * in);
    net.b[l].resize(out);
    for (auto& v : net.w[l]) v = scale * bound * (2.0 * rng.uniform() - 1.0);
    for (auto& v : net.b[l]) v = scale * bound * (2.0 * rng.uniform() - 1.0);
  }
  return net;
}

static void affine(const std::vector<double>& w, const std::vector<double>& b, int out, int in,
                   std::span<const double> x, std::vector<double>& z) {
  z.assign(out, 0.0);
  for (int i = 0; i < out; ++i) {
    double acc = b[i];
    const double* row = w.data() + static_cast<size_t>(i) * in;
    for (int j = 0; j < in; ++j) acc += row[j] * x[j];
    z[i] = acc;
  }
}

std::vector<double> forward(const Mlp& net, std::span<const double> x, ForwardCache& cache) {
  if (static_cast<int>(x.size()) != net.input_width())
    throw ContractError("forward: input width mismatch");
  const int layers = net.layers();
  cache.acts.assign(layers + 1, {});
  cache.pre.assign(layers, {});
  cache.acts[0].assign(x.begin(), x.end());
  for (int l = 0; l < layers; ++l) {
    const int in = net.topology[l];
    const int out = net.topology[l + 1];
    affine(net.w[l], net.b[l], out, in, cache.acts[l], cache.pre[l]);
    cache.acts[l + 1] = cache.pre[l];
    if (l < layers - 1) {
      for (auto& v : cache.acts[l + 1]) v = v > 0.0 ? v : 0.0;
    }
  }
  return cache.acts.back();
}

std::vector<double> forward(const Mlp& net, std::span<const double> x) {
  ForwardCache cache;
  return forward(net, x, cache);
}

Gradients Gradients::zeros_like(const Mlp& net) {
  Gradients g;
  g.dw.resize(net.w.size());
  g.db.resize(net.b.size());
  for (size_t l = 0; l < net.w.size(); ++l) {
    g.dw[l].assign(net.w[l].size(), 0.0);
    g.db[l].assign(net.b[l].size(), 0.0);
  }
  g.dx.assign(net.input_width(), 0.0);
  return g;
}

void Gradients::accumulate(const Gradients& other) {
  for (size_t l = 0; l < dw.size(); ++l) {
    for (size_t i = 0; i < dw[l].size(); ++i) dw[l][i] += other.dw[l][i];
    for (size_t i = 0; i < db[l].size(); ++i) db[l][i] += other.db[l][i];
  }
}

void Gradients::scale(double s) {
  for (auto& m : dw)
    for (auto& v : m) v *= s;
  for (auto& m : db)
    for (auto& v : m) v *= s;
  for (auto& v : dx) v *= s;
}

Gradients backward(const Mlp& net, const ForwardCache& cache, std::span<const double> upstream) {
  if (static_cast<int>(upstream.size()) != net.output_width())
    throw ContractError("backward: upstream width mismatch");
  if (cache.acts.empty()) throw ContractError("backward: forward cache missing");
  Gradients g = Gradients::zeros_like(net);
  const int layers = net.layers();
  std::vector<double> delta(upstream.begin(), upstream.end());
  for (int l = layers - 1; l >= 0; --l) {
    const int in = net.topology[l];
    const int out = net.topology[l + 1];
    if (l < layers - 1) {
      // Through the rectifier of this layer's output.
      for (int i = 0; i < out; ++i) {
        if (cache.pre[l][i] <= 0.0) delta[i] = 0.0;
      }
    }
    const auto& a_in = cache.acts[l];
    for (int i = 0; i < out; ++i) {
      g.db[l][i] = delta[i];
      double* row = g.dw[l].data() + static_cast<size_t>(i) * in;
      for (int j = 0; j < in; ++j) row[j] = delta[i] * a_in[j];
    }
    std::vector<double> next(in, 0.0);
    for (int i = 0; i < out; ++i) {
      const double* row = net.w[l].data() + static_cast<size_t>(i) * in;
      for (int j = 0; j < in; ++j) next[j] += row[j] * delta[i];
    }
    delta = std::move(next);
  }
  g.dx = std::move(delta);
  return g;
}

OptimizerState OptimizerState::for_net(const Mlp& net, Mode mode, double lr) {
  OptimizerState s;
  s.mode = mode;
  s.lr = lr;
  s.m_w.resize(net.w.size());
  s.v_w.resize(net.w.size());
  s.m_b.resize(net.b.size());
  s.v_b.resize(net.b.size());
  for (size_t l = 0; l < net.w.size(); ++l) {
    s.m_w[l].assign(net.w[l].size(), 0.0);
    s.v_w[l].assign(net.w[l].size(), 0.0);
    s.m_b[l].assign(net.b[l].size(), 0.0);
    s.v_b[l].assign(net.b[l].size(), 0.0);
  }
  return s;
}

static void adam_update(std::vector<double>& theta, const std::vector<double>& g,
                        std::vector<double>& m, std::vector<double>& v, const OptimizerState& s,
                        double bc1, double bc2) {
  for (size_t i = 0; i < theta.size(); ++i) {
    m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
    v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    theta[i] -= s.lr * m_hat / (std::sqrt(v_hat) + s.eps);
  }
}

void opt_step(Mlp& net, const Gradients& grads, OptimizerState& state) {
  if (grads.dw.size() != net.w.size()) throw ContractError("opt_step: gradient shape mismatch");
  if (state.mode == OptimizerState::Mode::Plain) {
    for (size_t l = 0; l < net.w.size(); ++l) {
      for (size_t i = 0; i < net.w[l].size(); ++i) net.w[l][i] -= state.lr * grads.dw[l][i];
      for (size_t i = 0; i < net.b[l].size(); ++i) net.b[l][i] -= state.lr * grads.db[l][i];
    }
    return;
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (size_t l = 0; l < net.w.size(); ++l) {
    adam_update(net.w[l], grads.dw[l], state.m_w[l], state.v_w[l], state, bc1, bc2);
    adam_update(net.b[l], grads.db[l], state.m_b[l], state.v_b[l], state, bc1, bc2);
  }
}

std::string to_json(const Mlp& net) {
  json j;
  j["topology"] = net.topology;
  j["w"] = net.w;
  j["b"] = net.b;
  return j.dump();
}

Mlp mlp_from_json(const std::string& text) {
  const json j = json::parse(text);
  Mlp net;
  j.at("topology").get_to(net.topology);
  j.at("w").get_to(net.w);
  j.at("b").get_to(net.b);
  if (net.w.size() + 1 != net.topology.size() || net.b.size() != net.w.size())
    throw ContractError("mlp_from_json: inconsistent shapes");
  return net;
}

}  // namespace elab::nn
