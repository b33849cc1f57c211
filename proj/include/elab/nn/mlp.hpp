#pragma once

#include <span>
#include <string>
#include <vector>

#include "elab/core/rng.hpp"

namespace elab::nn {

// Dense feed-forward net: rectified-linear hidden layers, identity output.
// Parameters are 64-bit throughout; weights are row-major (out x in).
struct Mlp {
  std::vector<int> topology;               // e.g. {8, 64, 64, 3}
  std::vector<std::vector<double>> w;      // per layer, out*in
  std::vector<std::vector<double>> b;      // per layer, out

  int layers() const { return static_cast<int>(w.size()); }
  int input_width() const { return topology.front(); }
  int output_width() const { return topology.back(); }
  size_t parameter_count() const;
};

// Uniform +-1/sqrt(fan_in) init. final_layer_scale shrinks the last layer's
// weights and biases (used for the actor so the initial policy sits near the
// midpoint of the action range).
Mlp make_mlp(const std::vector<int>& topology, RngStream& rng, double final_layer_scale = 1.0);

// Forward-pass cache: acts[0] is the input, acts[l+1] the post-activation
// output of layer l; pre[l] holds layer l's pre-activation.
struct ForwardCache {
  std::vector<std::vector<double>> acts;
  std::vector<std::vector<double>> pre;
};

std::vector<double> forward(const Mlp& net, std::span<const double> x);
std::vector<double> forward(const Mlp& net, std::span<const double> x, ForwardCache& cache);

// Parameter gradients plus the gradient w.r.t. the input vector.
struct Gradients {
  std::vector<std::vector<double>> dw;
  std::vector<std::vector<double>> db;
  std::vector<double> dx;

  static Gradients zeros_like(const Mlp& net);
  void accumulate(const Gradients& other);  // adds dw/db (not dx)
  void scale(double s);
};

// Reverse-mode pass for the loss gradient `upstream` = dL/d(output).
Gradients backward(const Mlp& net, const ForwardCache& cache, std::span<const double> upstream);

// Adaptive moment estimation with a plain-gradient mode for exact-arithmetic
// tests. Moment buffers mirror the net's parameter shapes.
struct OptimizerState {
  enum class Mode { Plain, Adam };
  Mode mode = Mode::Adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<std::vector<double>> m_w, v_w, m_b, v_b;

  static OptimizerState for_net(const Mlp& net, Mode mode, double lr);
};

// One descent step: theta <- theta - lr * g (plain) or the bias-corrected
// adaptive update. Pass negated gradients for ascent.
void opt_step(Mlp& net, const Gradients& grads, OptimizerState& state);

// Lossless (bit-exact) JSON round trip for parameters and optimizer moments.
std::string to_json(const Mlp& net);
Mlp mlp_from_json(const std::string& text);

}  // namespace elab::nn
