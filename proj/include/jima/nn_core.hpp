#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "jima/common.hpp"

// Dense feedforward substrate: fully connected layers with hand-derived
// backpropagation, L2 penalties on the layer parameters, and Adam. This is
// everything the prediction heads need; there is no general autodiff.

namespace jima {

enum class Activation { rectifier, identity };

struct DenseLayer {
  Mat W;                  // out x in, row-major
  std::vector<double> b;  // out
  Activation act = Activation::identity;

  std::size_t out_dim() const { return b.size(); }
  std::size_t in_dim() const { return W.cols; }
};

struct Mlp {
  std::size_t input_dim = 0;
  std::vector<DenseLayer> layers;

  std::size_t output_dim() const { return layers.empty() ? input_dim : layers.back().out_dim(); }
  std::size_t param_count() const;
};

// Hidden layers of the given widths with rectifier activations, then a
// scalar identity output layer. Weights uniform in +/- sqrt(6/(fan_in +
// fan_out)), biases zero; draw order is layer by layer, row-major.
Mlp make_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden, std::uint64_t seed);

// Activations retained by a forward pass, consumed by backward.
struct MlpCache {
  std::vector<double> input;
  std::vector<std::vector<double>> pre;   // per layer, before activation
  std::vector<std::vector<double>> post;  // per layer, after activation
};

// Scalar-output forward pass. Validates input length and finiteness. Pass a
// cache to enable a backward call.
double mlp_forward(const Mlp& net, const double* x, std::size_t n, MlpCache* cache = nullptr);

struct MlpGrads {
  std::vector<Mat> dW;
  std::vector<std::vector<double>> db;

  void init_like(const Mlp& net);
  void zero();
  bool all_zero_shape() const { return dW.empty(); }
};

// Accumulates (+=) parameter gradients for upstream = dLoss/doutput, and
// writes dLoss/dinput into dinput (overwrite, length input_dim) if non-null.
void mlp_backward(const Mlp& net, const MlpCache& cache, double upstream, MlpGrads& grads,
                  double* dinput = nullptr);

// Batched variants used by the trainers; rows of X are independent inputs.
struct MlpBatchCache {
  std::size_t batch = 0;
  Mat input;             // B x input_dim
  std::vector<Mat> pre;  // per layer, B x width
  std::vector<Mat> post;
};

// outputs resized to B. Each row's result is identical to mlp_forward on
// that row.
void mlp_forward_batch(const Mlp& net, const Mat& X, MlpBatchCache& cache,
                       std::vector<double>& outputs);

// upstream holds dLoss/doutput per row. Parameter gradients accumulate into
// grads; per-row input gradients overwrite dinput (B x input_dim) if
// non-null.
void mlp_backward_batch(const Mlp& net, const MlpBatchCache& cache,
                        const std::vector<double>& upstream, MlpGrads& grads, Mat* dinput);

// lambda * sum(theta^2) over all weights and biases. lambda must be >= 0.
double l2_penalty(const Mlp& net, double lambda);
// grads += 2 * lambda * theta.
void add_l2_gradient(const Mlp& net, double lambda, MlpGrads& grads);

struct AdamParams {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First/second moment slots for one contiguous parameter block.
struct AdamSlots {
  std::vector<double> m, v;
  void resize(std::size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
  }
};

// One bias-corrected Adam update of a contiguous block at global step t
// (t >= 1; the caller owns the step counter, which is shared across blocks).
// Throws on non-finite gradients.
void adam_step(double* params, const double* grads, AdamSlots& slots, std::size_t n,
               const AdamParams& hp, std::uint64_t t);

// Row-sparse variant for embedding tables: updates only the listed rows,
// with moments kept per row and bias correction from the global t.
void adam_step_rows(Mat& params, const Mat& grads, AdamSlots& slots,
                    const std::vector<std::uint32_t>& rows, const AdamParams& hp, std::uint64_t t);

// Binary serialization: shapes, activations, then raw parameter bytes.
// Round-trips bit-exactly.
void write_mlp(std::ostream& os, const Mlp& net);
Mlp read_mlp(std::istream& is);

}  // namespace jima
