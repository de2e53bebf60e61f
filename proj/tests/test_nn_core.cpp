#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <vector>

#include "jima/common.hpp"
#include "jima/nn_core.hpp"

using namespace jima;

namespace {

// Independent plain-loop forward pass used as the oracle.
double naive_forward(const Mlp& net, const std::vector<double>& x) {
  std::vector<double> cur = x;
  for (const auto& layer : net.layers) {
    std::vector<double> next(layer.out_dim());
    for (std::size_t i = 0; i < layer.out_dim(); ++i) {
      double acc = layer.b[i];
      for (std::size_t j = 0; j < layer.in_dim(); ++j) acc += layer.W.at(i, j) * cur[j];
      if (layer.act == Activation::rectifier && acc < 0.0) acc = 0.0;
      next[i] = acc;
    }
    cur = std::move(next);
  }
  return cur[0];
}

std::vector<double> random_input(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  std::vector<double> x(n);
  for (auto& v : x) v = u(rng);
  return x;
}

}  // namespace

TEST_CASE("construction: shapes, init bounds, parameter count") {
  Mlp net = make_mlp(7, {64, 32, 16, 8}, 11);
  REQUIRE(net.layers.size() == 5);
  CHECK(net.input_dim == 7);
  CHECK(net.layers[0].W.rows == 64);
  CHECK(net.layers[0].W.cols == 7);
  CHECK(net.layers[3].act == Activation::rectifier);
  CHECK(net.layers[4].act == Activation::identity);
  CHECK(net.layers[4].out_dim() == 1);
  CHECK(net.output_dim() == 1);

  // Hidden widths {64,32,16,8} give 64*d + 2817 parameters in total.
  CHECK(net.param_count() == 64 * 7 + 2817);
  CHECK(make_mlp(35, {64, 32, 16, 8}, 0).param_count() == 64 * 35 + 2817);

  // Weight init stays inside +/- sqrt(6/(fan_in+fan_out)); biases start at 0.
  for (const auto& layer : net.layers) {
    double bound = std::sqrt(6.0 / (double)(layer.in_dim() + layer.out_dim()));
    for (double w : layer.W.data) {
      CHECK(std::abs(w) <= bound);
    }
    for (double b : layer.b) CHECK(b == 0.0);
  }

  // Same seed, same weights; different seed, different weights.
  CHECK(make_mlp(7, {8}, 3).layers[0].W == make_mlp(7, {8}, 3).layers[0].W);
  CHECK(make_mlp(7, {8}, 3).layers[0].W != make_mlp(7, {8}, 4).layers[0].W);
}

TEST_CASE("forward matches a naive loop oracle") {
  // An all-ones linear readout sums its input.
  Mlp sum = make_mlp(3, {}, 1);
  REQUIRE(sum.layers.size() == 1);
  for (auto& w : sum.layers[0].W.data) w = 1.0;
  sum.layers[0].b[0] = 0.0;
  double x123[3] = {1.0, 2.0, 3.0};
  CHECK(mlp_forward(sum, x123, 3) == 6.0);

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Mlp net = make_mlp(5, {6, 4}, seed);
    auto x = random_input(5, 100 + seed);
    CHECK(mlp_forward(net, x.data(), x.size()) ==
          doctest::Approx(naive_forward(net, x)).epsilon(1e-12));
  }

  // Input validation: wrong length and non-finite entries are rejected.
  Mlp net = make_mlp(4, {3}, 1);
  double x[4] = {0.1, 0.2, 0.3, 0.4};
  CHECK_THROWS_AS(mlp_forward(net, x, 3), ValidationError);
  double bad[4] = {0.1, std::numeric_limits<double>::infinity(), 0.3, 0.4};
  CHECK_THROWS_AS(mlp_forward(net, bad, 4), ValidationError);
}

TEST_CASE("backward agrees with central finite differences") {
  Mlp net = make_mlp(4, {5, 3}, 21);
  auto x = random_input(4, 77);

  MlpCache cache;
  double out = mlp_forward(net, x.data(), x.size(), &cache);
  MlpGrads grads;
  grads.init_like(net);
  std::vector<double> dinput(4);
  // Loss f(out) = out, so upstream = 1: gradients are d out / d theta.
  mlp_backward(net, cache, 1.0, grads, dinput.data());
  CHECK(out == doctest::Approx(naive_forward(net, x)));

  const double h = 1e-6;
  auto fd = [&](double* p) {
    double keep = *p;
    *p = keep + h;
    double up = mlp_forward(net, x.data(), x.size());
    *p = keep - h;
    double dn = mlp_forward(net, x.data(), x.size());
    *p = keep;
    return (up - dn) / (2.0 * h);
  };
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    auto& layer = net.layers[li];
    for (std::size_t i = 0; i < layer.W.size(); ++i) {
      double want = fd(&layer.W.data[i]);
      CHECK(grads.dW[li].data[i] == doctest::Approx(want).epsilon(1e-5).scale(1.0));
    }
    for (std::size_t i = 0; i < layer.b.size(); ++i) {
      double want = fd(&layer.b[i]);
      CHECK(grads.db[li][i] == doctest::Approx(want).epsilon(1e-5).scale(1.0));
    }
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(dinput[i] == doctest::Approx(fd(&x[i])).epsilon(1e-5).scale(1.0));
  }
}

TEST_CASE("gradients accumulate and scale with the upstream factor") {
  Mlp net = make_mlp(3, {4}, 5);
  auto x = random_input(3, 9);
  MlpCache cache;
  mlp_forward(net, x.data(), x.size(), &cache);

  MlpGrads once;
  once.init_like(net);
  mlp_backward(net, cache, 2.5, once);

  MlpGrads twice;
  twice.init_like(net);
  mlp_backward(net, cache, 1.0, twice);
  mlp_backward(net, cache, 1.5, twice);  // accumulates, totals 2.5

  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    for (std::size_t i = 0; i < once.dW[li].size(); ++i) {
      CHECK(once.dW[li].data[i] == doctest::Approx(twice.dW[li].data[i]).epsilon(1e-12));
    }
  }

  twice.zero();
  for (const auto& m : twice.dW) {
    for (double g : m.data) CHECK(g == 0.0);
  }
}

TEST_CASE("batched forward and backward match the single-row path") {
  Mlp net = make_mlp(6, {7, 4}, 31);
  const std::size_t B = 7;
  Mat X(B, 6);
  std::mt19937_64 rng(123);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (auto& v : X.data) v = u(rng);
  std::vector<double> upstream(B);
  for (auto& v : upstream) v = u(rng);

  MlpBatchCache bcache;
  std::vector<double> outs;
  mlp_forward_batch(net, X, bcache, outs);
  REQUIRE(outs.size() == B);

  MlpGrads bgrads;
  bgrads.init_like(net);
  Mat dinput(B, 6);
  mlp_backward_batch(net, bcache, upstream, bgrads, &dinput);

  MlpGrads sgrads;
  sgrads.init_like(net);
  for (std::size_t r = 0; r < B; ++r) {
    MlpCache cache;
    double out = mlp_forward(net, X.row(r), 6, &cache);
    CHECK(outs[r] == doctest::Approx(out).epsilon(1e-12));
    std::vector<double> din(6);
    mlp_backward(net, cache, upstream[r], sgrads, din.data());
    for (std::size_t j = 0; j < 6; ++j) {
      CHECK(dinput.at(r, j) == doctest::Approx(din[j]).epsilon(1e-11).scale(1e-9));
    }
  }
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    for (std::size_t i = 0; i < bgrads.dW[li].size(); ++i) {
      CHECK(bgrads.dW[li].data[i] ==
            doctest::Approx(sgrads.dW[li].data[i]).epsilon(1e-11).scale(1e-9));
    }
    for (std::size_t i = 0; i < bgrads.db[li].size(); ++i) {
      CHECK(bgrads.db[li][i] == doctest::Approx(sgrads.db[li][i]).epsilon(1e-11).scale(1e-9));
    }
  }
}

TEST_CASE("L2 penalty and its gradient by hand") {
  // One linear layer with a single weight 3 and bias 0.
  Mlp net;
  net.input_dim = 1;
  DenseLayer layer;
  layer.W = Mat(1, 1);
  layer.W.at(0, 0) = 3.0;
  layer.b = {0.0};
  net.layers.push_back(layer);

  CHECK(l2_penalty(net, 0.5) == 4.5);  // 0.5 * 3^2
  CHECK(l2_penalty(net, 0.0) == 0.0);
  CHECK_THROWS_AS(l2_penalty(net, -0.1), ValidationError);

  MlpGrads grads;
  grads.init_like(net);
  add_l2_gradient(net, 0.5, grads);
  CHECK(grads.dW[0].at(0, 0) == 3.0);  // 2 * 0.5 * 3
  CHECK(grads.db[0][0] == 0.0);

  // Bias terms are penalized too.
  net.layers[0].b[0] = 2.0;
  CHECK(l2_penalty(net, 1.0) == 13.0);  // 9 + 4
}

TEST_CASE("one Adam step reproduces the hand-derived update") {
  AdamParams hp;
  hp.learning_rate = 0.1;

  double theta[2] = {1.0, -4.0};
  double grad[2] = {2.0, -0.5};
  AdamSlots slots;
  slots.resize(2);
  adam_step(theta, grad, slots, 2, hp, 1);

  for (int i = 0; i < 2; ++i) {
    double m_hat = grad[i];             // m/(1-beta1) at t=1
    double v_hat = grad[i] * grad[i];   // v/(1-beta2) at t=1
    double want = (i == 0 ? 1.0 : -4.0) - hp.learning_rate * m_hat / (std::sqrt(v_hat) + hp.epsilon);
    CHECK(theta[i] == doctest::Approx(want).epsilon(1e-12));
  }
  // First-step magnitude is ~learning_rate regardless of gradient scale.
  CHECK(std::abs(theta[0] - 1.0) == doctest::Approx(0.1).epsilon(1e-6));

  double bad[1] = {std::numeric_limits<double>::quiet_NaN()};
  double p[1] = {0.0};
  AdamSlots s1;
  s1.resize(1);
  CHECK_THROWS_AS(adam_step(p, bad, s1, 1, hp, 1), std::runtime_error);
}

TEST_CASE("Adam drives a quadratic to its minimum") {
  AdamParams hp;
  hp.learning_rate = 1e-2;
  double theta = 5.0;
  AdamSlots slots;
  slots.resize(1);
  for (std::uint64_t t = 1; t <= 2000; ++t) {
    double g = 2.0 * theta;
    adam_step(&theta, &g, slots, 1, hp, t);
  }
  CHECK(std::abs(theta) < 1e-2);
}

TEST_CASE("row-sparse Adam touches only the listed rows") {
  Mat table(3, 2);
  for (std::size_t i = 0; i < table.size(); ++i) table.data[i] = 1.0 + (double)i;
  Mat before = table;

  Mat grads(3, 2);
  for (auto& g : grads.data) g = 1.0;
  AdamSlots slots;
  slots.resize(table.size());

  AdamParams hp;
  std::vector<std::uint32_t> rows = {0, 2};
  adam_step_rows(table, grads, slots, rows, hp, 1);

  CHECK(table.at(1, 0) == before.at(1, 0));
  CHECK(table.at(1, 1) == before.at(1, 1));
  CHECK(table.at(0, 0) != before.at(0, 0));
  CHECK(table.at(2, 1) != before.at(2, 1));
  // Untouched rows keep zero moments.
  CHECK(slots.m[2] == 0.0);
  CHECK(slots.m[3] == 0.0);

  // The same update through the dense path, restricted to those rows,
  // produces the same numbers.
  Mat dense = before;
  AdamSlots dslots;
  dslots.resize(dense.size());
  adam_step(dense.row(0), grads.row(0), dslots, 2, hp, 1);
  AdamSlots dslots2;
  dslots2.resize(dense.size());
  adam_step(dense.row(2), grads.row(2), dslots2, 2, hp, 1);
  for (std::size_t j = 0; j < 2; ++j) {
    CHECK(table.at(0, j) == doctest::Approx(dense.at(0, j)).epsilon(1e-14));
    CHECK(table.at(2, j) == doctest::Approx(dense.at(2, j)).epsilon(1e-14));
  }
}

TEST_CASE("network serialization round-trips bit-exactly") {
  Mlp net = make_mlp(9, {6, 3}, 404);
  std::stringstream ss;
  write_mlp(ss, net);
  Mlp back = read_mlp(ss);

  CHECK(back.input_dim == net.input_dim);
  REQUIRE(back.layers.size() == net.layers.size());
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    CHECK(back.layers[li].act == net.layers[li].act);
    CHECK(back.layers[li].W == net.layers[li].W);
    CHECK(back.layers[li].b == net.layers[li].b);
  }

  std::stringstream junk("not a model");
  CHECK_THROWS(read_mlp(junk));
}
