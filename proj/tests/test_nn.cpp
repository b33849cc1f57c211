#include <doctest.h>

#include <cmath>
#include <vector>

#include "elab/core/rng.hpp"
#include "elab/nn/mlp.hpp"

using namespace elab;
using namespace elab::nn;

namespace {

// Independent dense-algebra oracle: explicit loops over the topology,
// sharing no code with the library forward pass.
std::vector<double> oracle_forward(const Mlp& net, const std::vector<double>& x) {
  std::vector<double> a = x;
  for (int l = 0; l < net.layers(); ++l) {
    const int in = net.topology[l];
    const int out = net.topology[l + 1];
    std::vector<double> z(out, 0.0);
    for (int i = 0; i < out; ++i) {
      z[i] = net.b[l][i];
      for (int j = 0; j < in; ++j) z[i] += net.w[l][i * in + j] * a[j];
    }
    if (l < net.layers() - 1) {
      for (double& v : z) v = std::max(v, 0.0);
    }
    a = z;
  }
  return a;
}

double loss_of(const Mlp& net, const std::vector<double>& x, const std::vector<double>& target) {
  const auto y = forward(net, x);
  double loss = 0.0;
  for (size_t i = 0; i < y.size(); ++i) loss += (y[i] - target[i]) * (y[i] - target[i]);
  return loss;
}

// Central finite differences over every parameter.
double max_rel_grad_error(Mlp net, const std::vector<double>& x,
                          const std::vector<double>& target, double h) {
  ForwardCache cache;
  const auto y = forward(net, x, cache);
  std::vector<double> upstream(y.size());
  for (size_t i = 0; i < y.size(); ++i) upstream[i] = 2.0 * (y[i] - target[i]);
  const Gradients g = backward(net, cache, upstream);

  double worst = 0.0;
  auto check = [&](std::vector<double>& theta, const std::vector<double>& grad) {
    for (size_t i = 0; i < theta.size(); ++i) {
      const double keep = theta[i];
      theta[i] = keep + h;
      const double up = loss_of(net, x, target);
      theta[i] = keep - h;
      const double down = loss_of(net, x, target);
      theta[i] = keep;
      const double fd = (up - down) / (2.0 * h);
      const double denom = std::max({std::abs(fd), std::abs(grad[i]), 1e-8});
      worst = std::max(worst, std::abs(fd - grad[i]) / denom);
    }
  };
  for (int l = 0; l < net.layers(); ++l) {
    check(net.w[l], g.dw[l]);
    check(net.b[l], g.db[l]);
  }
  return worst;
}

}  // namespace

TEST_CASE("forward: zero net gives zero output") {
  RngStream rng(1, "init");
  Mlp net = make_mlp({3, 5, 2}, rng);
  for (auto& m : net.w)
    for (auto& v : m) v = 0.0;
  for (auto& m : net.b)
    for (auto& v : m) v = 0.0;
  const auto y = forward(net, std::vector<double>{0.3, -0.7, 2.0});
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.0);
}

TEST_CASE("forward: single identity layer passes input through") {
  Mlp net;
  net.topology = {3, 3};
  net.w = {{1, 0, 0, 0, 1, 0, 0, 0, 1}};
  net.b = {{0, 0, 0}};
  const auto y = forward(net, std::vector<double>{0.5, -1.25, 3.0});
  CHECK(y[0] == 0.5);
  CHECK(y[1] == -1.25);
  CHECK(y[2] == 3.0);
}

TEST_CASE("forward matches the independent oracle on a random 2-3-1 net") {
  RngStream rng(11, "init");
  for (int trial = 0; trial < 20; ++trial) {
    const Mlp net = make_mlp({2, 3, 1}, rng);
    const std::vector<double> x{2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0};
    const auto y = forward(net, x);
    const auto expect = oracle_forward(net, x);
    CHECK(std::abs(y[0] - expect[0]) <= 1e-12);
  }
}

TEST_CASE("forward is pure: identical inputs give bit-identical outputs") {
  RngStream rng(13, "init");
  const Mlp net = make_mlp({4, 8, 2}, rng);
  const std::vector<double> x{0.1, -0.2, 0.3, -0.4};
  const auto y1 = forward(net, x);
  const auto y2 = forward(net, x);
  CHECK(y1[0] == y2[0]);
  CHECK(y1[1] == y2[1]);
}

TEST_CASE("backward matches central finite differences on [4,8,8,1], 10 seeds") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    RngStream rng(seed, "grad");
    const Mlp net = make_mlp({4, 8, 8, 1}, rng);
    std::vector<double> x(4), target(1);
    for (auto& v : x) v = 2.0 * rng.uniform() - 1.0;
    target[0] = rng.gaussian();
    CHECK(max_rel_grad_error(net, x, target, 1e-6) < 1e-5);
  }
}

TEST_CASE("backward: zero upstream gradient zeroes every parameter gradient") {
  RngStream rng(17, "init");
  const Mlp net = make_mlp({3, 6, 2}, rng);
  ForwardCache cache;
  forward(net, std::vector<double>{0.2, 0.4, -0.6}, cache);
  const Gradients g = backward(net, cache, std::vector<double>{0.0, 0.0});
  for (const auto& m : g.dw)
    for (double v : m) CHECK(v == 0.0);
  for (const auto& m : g.db)
    for (double v : m) CHECK(v == 0.0);
}

TEST_CASE("backward: linear single layer gives the exact outer product") {
  Mlp net;
  net.topology = {3, 2};
  net.w = {{0.5, -1.0, 2.0, 0.25, 0.75, -0.5}};
  net.b = {{0.1, -0.2}};
  const std::vector<double> x{1.5, -2.5, 0.5};
  ForwardCache cache;
  forward(net, x, cache);
  const std::vector<double> upstream{2.0, -3.0};
  const Gradients g = backward(net, cache, upstream);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 3; ++j) {
      CHECK(g.dw[0][i * 3 + j] == upstream[i] * x[j]);
    }
    CHECK(g.db[0][i] == upstream[i]);
  }
}

TEST_CASE("opt_step plain mode: theta = 1, grad = 2, lr = 0.001 gives 0.998") {
  Mlp net;
  net.topology = {1, 1};
  net.w = {{1.0}};
  net.b = {{1.0}};
  OptimizerState opt = OptimizerState::for_net(net, OptimizerState::Mode::Plain, 1e-3);
  Gradients g = Gradients::zeros_like(net);
  g.dw[0][0] = 2.0;
  g.db[0][0] = 2.0;
  opt_step(net, g, opt);
  CHECK(net.w[0][0] == doctest::Approx(0.998).epsilon(1e-15));
  CHECK(net.b[0][0] == doctest::Approx(0.998).epsilon(1e-15));
}

TEST_CASE("opt_step: zero gradient leaves parameters unchanged in both modes") {
  RngStream rng(19, "init");
  for (auto mode : {OptimizerState::Mode::Plain, OptimizerState::Mode::Adam}) {
    Mlp net = make_mlp({2, 4, 1}, rng);
    const Mlp before = net;
    OptimizerState opt = OptimizerState::for_net(net, mode, 1e-3);
    const Gradients g = Gradients::zeros_like(net);
    opt_step(net, g, opt);
    CHECK(net.w == before.w);
    CHECK(net.b == before.b);
  }
}

TEST_CASE("opt_step adaptive first step has magnitude close to the learning rate") {
  RngStream rng(23, "init");
  Mlp net = make_mlp({2, 4, 1}, rng);
  const Mlp before = net;
  OptimizerState opt = OptimizerState::for_net(net, OptimizerState::Mode::Adam, 1e-3);
  Gradients g = Gradients::zeros_like(net);
  for (auto& m : g.dw)
    for (auto& v : m) v = 0.7 * (1.0 + rng.uniform());
  for (auto& m : g.db)
    for (auto& v : m) v = -0.3 * (1.0 + rng.uniform());
  opt_step(net, g, opt);
  for (size_t l = 0; l < net.w.size(); ++l) {
    for (size_t i = 0; i < net.w[l].size(); ++i) {
      const double step = std::abs(net.w[l][i] - before.w[l][i]);
      CHECK(step == doctest::Approx(1e-3).epsilon(1e-4));
    }
  }
}

TEST_CASE("mlp json serialization round-trips bit-exactly") {
  RngStream rng(29, "init");
  const Mlp net = make_mlp({8, 64, 64, 3}, rng, 1e-3);
  const Mlp back = mlp_from_json(to_json(net));
  REQUIRE(back.topology == net.topology);
  for (size_t l = 0; l < net.w.size(); ++l) {
    for (size_t i = 0; i < net.w[l].size(); ++i) CHECK(back.w[l][i] == net.w[l][i]);
    for (size_t i = 0; i < net.b[l].size(); ++i) CHECK(back.b[l][i] == net.b[l][i]);
  }
}

TEST_CASE("make_mlp final layer scale shrinks only the last layer") {
  RngStream rng(31, "init");
  const Mlp net = make_mlp({4, 16, 2}, rng, 1e-3);
  double max_last = 0.0;
  for (double v : net.w.back()) max_last = std::max(max_last, std::abs(v));
  CHECK(max_last <= 1e-3 / std::sqrt(16.0) + 1e-15);
  double max_first = 0.0;
  for (double v : net.w.front()) max_first = std::max(max_first, std::abs(v));
  CHECK(max_first > 1e-2);
}
