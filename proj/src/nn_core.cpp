#include "jima/nn_core.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "jima/kernels.hpp"
#include "jima/serialize.hpp"

namespace jima {

std::size_t Mlp::param_count() const {
  std::size_t n = 0;
  for (const DenseLayer& l : layers) n += l.W.size() + l.b.size();
  return n;
}

Mlp make_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden, std::uint64_t seed) {
  if (input_dim < 1) throw ValidationError("mlp: input_dim must be >= 1");
  for (std::size_t w : hidden)
    if (w < 1) throw ValidationError("mlp: hidden widths must be >= 1");

  Mlp net;
  net.input_dim = input_dim;
  std::mt19937_64 rng(seed);

  std::size_t in = input_dim;
  auto add_layer = [&](std::size_t out, Activation act) {
    DenseLayer l;
    l.W = Mat(out, in);
    l.b.assign(out, 0.0);
    l.act = act;
    const double s = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-s, s);
    for (double& w : l.W.data) w = dist(rng);
    net.layers.push_back(std::move(l));
    in = out;
  };
  for (std::size_t w : hidden) add_layer(w, Activation::rectifier);
  add_layer(1, Activation::identity);
  return net;
}

double mlp_forward(const Mlp& net, const double* x, std::size_t n, MlpCache* cache) {
  if (n != net.input_dim) throw ValidationError("mlp_forward: input length mismatch");
  if (!all_finite(x, n)) throw ValidationError("mlp_forward: non-finite input");
  if (net.layers.empty() || net.layers.back().out_dim() != 1)
    throw ValidationError("mlp_forward: network lacks a scalar output layer");

  if (cache) {
    cache->input.assign(x, x + n);
    cache->pre.assign(net.layers.size(), {});
    cache->post.assign(net.layers.size(), {});
  }

  std::vector<double> cur(x, x + n);
  std::vector<double> next;
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    const DenseLayer& l = net.layers[li];
    const std::size_t out = l.out_dim();
    next.assign(out, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      const double* wrow = l.W.row(o);
      double acc = l.b[o];
      for (std::size_t i = 0; i < l.in_dim(); ++i) acc += wrow[i] * cur[i];
      next[o] = acc;
    }
    if (cache) cache->pre[li] = next;
    if (l.act == Activation::rectifier)
      for (double& v : next) v = v > 0.0 ? v : 0.0;
    if (cache) cache->post[li] = next;
    cur.swap(next);
  }
  return cur[0];
}

void MlpGrads::init_like(const Mlp& net) {
  dW.clear();
  db.clear();
  for (const DenseLayer& l : net.layers) {
    dW.emplace_back(l.W.rows, l.W.cols);
    db.emplace_back(l.b.size(), 0.0);
  }
}

void MlpGrads::zero() {
  for (Mat& m : dW) m.zero();
  for (auto& v : db) std::fill(v.begin(), v.end(), 0.0);
}

void mlp_backward(const Mlp& net, const MlpCache& cache, double upstream, MlpGrads& grads,
                  double* dinput) {
  if (cache.pre.size() != net.layers.size() || cache.input.size() != net.input_dim)
    throw ValidationError("mlp_backward: cache does not match this network");
  if (grads.dW.size() != net.layers.size()) grads.init_like(net);

  std::vector<double> delta{upstream};
  std::vector<double> prev_delta;
  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const DenseLayer& l = net.layers[li];
    const std::size_t out = l.out_dim();
    const std::size_t in = l.in_dim();
    if (delta.size() != out) throw ValidationError("mlp_backward: cache does not match this network");

    if (l.act == Activation::rectifier)
      for (std::size_t o = 0; o < out; ++o)
        if (!(cache.pre[li][o] > 0.0)) delta[o] = 0.0;

    const std::vector<double>& below = li == 0 ? cache.input : cache.post[li - 1];
    for (std::size_t o = 0; o < out; ++o) {
      const double d = delta[o];
      grads.db[li][o] += d;
      double* gw = grads.dW[li].row(o);
      for (std::size_t i = 0; i < in; ++i) gw[i] += d * below[i];
    }

    prev_delta.assign(in, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      const double d = delta[o];
      const double* wrow = l.W.row(o);
      for (std::size_t i = 0; i < in; ++i) prev_delta[i] += d * wrow[i];
    }
    delta.swap(prev_delta);
  }
  if (dinput)
    for (std::size_t i = 0; i < net.input_dim; ++i) dinput[i] = delta[i];
}

void mlp_forward_batch(const Mlp& net, const Mat& X, MlpBatchCache& cache,
                       std::vector<double>& outputs) {
  if (X.cols != net.input_dim) throw ValidationError("mlp_forward_batch: input width mismatch");
  const std::size_t B = X.rows;
  const auto& k = kernels::active();

  cache.batch = B;
  cache.input = X;
  cache.pre.resize(net.layers.size());
  cache.post.resize(net.layers.size());

  const Mat* cur = &cache.input;
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    const DenseLayer& l = net.layers[li];
    Mat& pre = cache.pre[li];
    pre = Mat(B, l.out_dim());
    k.gemm_nt(cur->data.data(), l.W.data.data(), pre.data.data(), B, l.out_dim(), l.in_dim(),
              false);
    k.add_row_vector(pre.data.data(), l.b.data(), B, l.out_dim());
    Mat& post = cache.post[li];
    post = Mat(B, l.out_dim());
    if (l.act == Activation::rectifier)
      k.relu(pre.data.data(), post.data.data(), pre.size());
    else
      post.data = pre.data;
    cur = &post;
  }

  outputs.resize(B);
  const Mat& last = cache.post.back();
  for (std::size_t r = 0; r < B; ++r) outputs[r] = last.at(r, 0);
}

void mlp_backward_batch(const Mlp& net, const MlpBatchCache& cache,
                        const std::vector<double>& upstream, MlpGrads& grads, Mat* dinput) {
  const std::size_t B = cache.batch;
  if (upstream.size() != B) throw ValidationError("mlp_backward_batch: upstream length mismatch");
  if (cache.pre.size() != net.layers.size())
    throw ValidationError("mlp_backward_batch: cache does not match this network");
  if (grads.dW.size() != net.layers.size()) grads.init_like(net);
  const auto& k = kernels::active();

  Mat delta(B, 1);
  for (std::size_t r = 0; r < B; ++r) delta.at(r, 0) = upstream[r];

  Mat next_delta;
  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const DenseLayer& l = net.layers[li];
    if (l.act == Activation::rectifier)
      k.relu_grad(cache.pre[li].data.data(), delta.data.data(), delta.data.data(), delta.size());

    const Mat& below = li == 0 ? cache.input : cache.post[li - 1];
    // dW (out x in) += delta^T (out x B) * below (B x in)
    k.gemm_tn(delta.data.data(), below.data.data(), grads.dW[li].data.data(), l.out_dim(),
              l.in_dim(), B, true);
    k.colsum(delta.data.data(), grads.db[li].data(), B, l.out_dim(), true);

    if (li == 0 && !dinput) break;
    next_delta = Mat(B, l.in_dim());
    k.gemm_nn(delta.data.data(), l.W.data.data(), next_delta.data.data(), B, l.in_dim(),
              l.out_dim(), false);
    delta = std::move(next_delta);
  }
  if (dinput) *dinput = std::move(delta);
}

double l2_penalty(const Mlp& net, double lambda) {
  if (lambda < 0.0) throw ValidationError("l2_penalty: lambda must be >= 0");
  if (lambda == 0.0) return 0.0;
  const auto& k = kernels::active();
  double acc = 0.0;
  for (const DenseLayer& l : net.layers) {
    acc += k.sumsq(l.W.data.data(), l.W.size());
    acc += k.sumsq(l.b.data(), l.b.size());
  }
  return lambda * acc;
}

void add_l2_gradient(const Mlp& net, double lambda, MlpGrads& grads) {
  if (lambda < 0.0) throw ValidationError("l2 gradient: lambda must be >= 0");
  if (grads.dW.size() != net.layers.size()) grads.init_like(net);
  if (lambda == 0.0) return;
  const auto& k = kernels::active();
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    const DenseLayer& l = net.layers[li];
    k.axpy(2.0 * lambda, l.W.data.data(), grads.dW[li].data.data(), l.W.size());
    k.axpy(2.0 * lambda, l.b.data(), grads.db[li].data(), l.b.size());
  }
}

void adam_step(double* params, const double* grads, AdamSlots& slots, std::size_t n,
               const AdamParams& hp, std::uint64_t t) {
  if (t < 1) throw ValidationError("adam_step: t starts at 1");
  if (slots.m.size() != n) slots.resize(n);
  if (!all_finite(grads, n))
    throw std::runtime_error("adam_step: non-finite gradient; aborting this fit");
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(t));
  kernels::active().adam_update(params, grads, slots.m.data(), slots.v.data(), n,
                                hp.learning_rate, hp.beta1, hp.beta2, hp.epsilon, bc1, bc2);
}

void adam_step_rows(Mat& params, const Mat& grads, AdamSlots& slots,
                    const std::vector<std::uint32_t>& rows, const AdamParams& hp,
                    std::uint64_t t) {
  if (t < 1) throw ValidationError("adam_step_rows: t starts at 1");
  if (params.rows != grads.rows || params.cols != grads.cols)
    throw ValidationError("adam_step_rows: shape mismatch");
  if (slots.m.size() != params.size()) slots.resize(params.size());
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(t));
  const auto& k = kernels::active();
  const std::size_t r = params.cols;
  for (std::uint32_t row : rows) {
    const double* g = grads.row(row);
    if (!all_finite(g, r))
      throw std::runtime_error("adam_step_rows: non-finite gradient; aborting this fit");
    const std::size_t off = row * r;
    k.adam_update(params.data.data() + off, g, slots.m.data() + off, slots.v.data() + off, r,
                  hp.learning_rate, hp.beta1, hp.beta2, hp.epsilon, bc1, bc2);
  }
}

void write_mlp(std::ostream& os, const Mlp& net) {
  io::write_u64(os, net.input_dim);
  io::write_u64(os, net.layers.size());
  for (const DenseLayer& l : net.layers) {
    io::write_u64(os, l.W.rows);
    io::write_u64(os, l.W.cols);
    io::write_u64(os, l.act == Activation::rectifier ? 1 : 0);
    io::write_f64s(os, l.W.data.data(), l.W.size());
    io::write_f64s(os, l.b.data(), l.b.size());
  }
}

Mlp read_mlp(std::istream& is) {
  Mlp net;
  net.input_dim = io::read_u64(is);
  const std::uint64_t nl = io::read_u64(is);
  if (nl > 1024) throw std::runtime_error("model file corrupt: layer count");
  for (std::uint64_t i = 0; i < nl; ++i) {
    DenseLayer l;
    const std::uint64_t rows = io::read_u64(is);
    const std::uint64_t cols = io::read_u64(is);
    l.act = io::read_u64(is) == 1 ? Activation::rectifier : Activation::identity;
    l.W = Mat(rows, cols);
    l.b.assign(rows, 0.0);
    io::read_f64s(is, l.W.data.data(), l.W.size());
    io::read_f64s(is, l.b.data(), l.b.size());
    net.layers.push_back(std::move(l));
  }
  return net;
}

}  // namespace jima
