#pragma once

#include <cstdint>
#include <vector>

#include "jima/nn_core.hpp"
#include "jima/obs_store.hpp"

// Non-neural reference methods: constant mean imputation, two-factor matrix
// factorization trained by minibatch Adam, and masked alternating least
// squares CP decomposition for tensors. The neural baselines are
// configurations of the joint model, not code here.

namespace jima {

struct GmiModel {
  double mean = 0.0;
};

// Mean of the training values of one source; predicts that constant.
GmiModel gmi_fit(const DataSource& src, const std::vector<std::uint32_t>& train);

struct MfConfig {
  std::size_t r = 5;
  double lambda = 1e-4;  // L2 on factor rows
  AdamParams adam;
  std::size_t epochs = 200;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
};

struct MfModel {
  Mat A, B;  // n_a x r, n_b x r
  std::vector<double> epoch_loss;
};

// Order-2 source only. Minimizes batch-mean squared error of row dot
// products plus lambda * ||touched rows||^2, by Adam on sparse rows.
MfModel mf_fit(const Schema& schema, int source_id, const std::vector<std::uint32_t>& train,
               const MfConfig& cfg);

double mf_predict(const MfModel& m, std::int32_t a, std::int32_t b);

struct CpConfig {
  std::size_t r = 5;
  std::size_t max_sweeps = 100;
  double tol = 1e-6;     // relative train-loss change per sweep
  double ridge = 1e-8;   // conditioning of the per-row normal equations
  std::uint64_t seed = 0;
};

struct CpModel {
  std::vector<Mat> factors;  // per fiber of the source, n_j x r
  std::size_t r = 0;
  bool converged = false;
  std::size_t sweeps_run = 0;
  std::vector<double> sweep_loss;  // train MSE after each sweep
};

// Rank-r CP fit to the observed entries of an order >= 3 source, by
// alternating per-row least squares (normal equations + ridge, Cholesky).
// Stops early once the relative loss change drops below tol; running out of
// sweeps just leaves converged = false.
CpModel cp_fit(const Schema& schema, int source_id, const std::vector<std::uint32_t>& train,
               const CpConfig& cfg);

double cp_predict(const CpModel& m, const std::int32_t* idx);

}  // namespace jima
