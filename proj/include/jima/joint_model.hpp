#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "jima/nn_core.hpp"
#include "jima/obs_store.hpp"

// The joint multi-source model: one shared latent-factor table per fiber,
// one MLP head per modeled source. Each head consumes the concatenation of
// the factor rows selected by the observation's index tuple, optionally
// followed by their subset-product interaction features. Single-source
// configurations with interactions off are exactly neural matrix/tensor
// factorization, so those baselines and all ablations are configurations of
// this type rather than separate code.

namespace jima {

struct LatentFactorTable {
  std::size_t r = 0;
  std::vector<Mat> tables;  // parallel to the model's fibers: n_k x r
};

struct ModelConfig {
  std::size_t r = 5;
  bool use_interactions = true;
  std::vector<int> sources;  // source ids to model, in head order
  std::vector<std::size_t> head_hidden = {64, 32, 16, 8};
  double head_lambda = 1e-4;         // L2 on head weights+biases, every head
  std::vector<double> head_lambdas;  // optional per-source override, parallel to sources
  double embedding_lambda = 1e-4;    // L2 on factor rows touched by a step
  AdamParams adam;
  std::size_t epochs = 200;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  std::optional<std::pair<double, double>> clamp_range;
};

struct SourceHead {
  int source_id = 0;
  std::string label;
  std::vector<int> fibers;             // fiber ids, source order
  std::vector<std::size_t> fiber_pos;  // positions into the factor tables
  LossKind loss_kind = LossKind::squared;
  double lambda = 0.0;
  Mlp net;

  std::size_t order() const { return fibers.size(); }
};

struct JointModel {
  ModelConfig config;
  std::vector<FiberSpec> fibers;  // copied from the schema; model is self-contained
  LatentFactorTable factors;
  std::vector<SourceHead> heads;
  // Per fiber, per entity: bitmask of head positions whose training data
  // touched that entity. Filled by train(); zero rows are cold entities.
  std::vector<std::vector<std::uint32_t>> trained_by;

  const SourceHead& head_for(int source_id) const;
  std::size_t head_position(int source_id) const;
};

// Factor rows ~ N(0, 0.1^2), heads initialized per make_mlp; deterministic
// in config.seed. Validates config against the schema.
JointModel init_joint_model(const Schema& schema, const ModelConfig& config);

// The feature vector a head consumes for one observation: the raw factor
// rows in fiber order, then (if configured) the interaction blocks. out must
// hold head_input_dim(order, r, use_interactions) doubles.
void build_head_input(const JointModel& m, const SourceHead& h, const std::int32_t* idx,
                      double* out);

// Head forward on the observation's features. Squared-loss sources return
// the raw head output clamped to clamp_range when set; cross-entropy sources
// return the sigmoid of it.
double predict(const JointModel& m, int source_id, const std::int32_t* idx);

struct EntityStatus {
  int fiber_id = 0;
  std::int32_t index = 0;
  std::vector<int> trained_by_sources;  // empty = cold entity
};

struct ColdStartResult {
  double value = 0.0;
  bool any_untrained = false;
  std::vector<EntityStatus> entities;
};

// predict() plus, per entity in the tuple, which sources' training data
// shaped its embedding. Entities trained nowhere are flagged, not errors.
ColdStartResult cold_start_predict(const JointModel& m, int source_id, const std::int32_t* idx);

struct ModelGrads {
  std::vector<Mat> dfactors;                        // per fiber, n_k x r
  std::vector<std::vector<std::uint32_t>> touched;  // per fiber, rows hit this step
  std::vector<MlpGrads> dheads;                     // parallel to model.heads

  void init_like(const JointModel& m);
  // Zeroes only previously touched factor rows plus the head grads.
  void reset(const JointModel& m);
};

// One step's objective over one minibatch per head: sum over heads with a
// non-empty batch of (batch-mean data loss + that head's L2 penalty), plus
// embedding_lambda * ||row||^2 summed once over each factor row touched by
// any batch. batches is parallel to m.heads and holds observation indices
// into each head's source; an empty list removes that head's entire term.
// Pass grads to accumulate all parameter gradients; it is reset first.
double multi_task_loss(const JointModel& m, const Schema& schema,
                       const std::vector<std::vector<std::uint32_t>>& batches,
                       ModelGrads* grads);

struct TrainResult {
  std::vector<double> epoch_loss;  // mean step objective per epoch
};

// Minibatch training of all heads and factor tables with Adam. Per step, one
// batch per source with a non-empty training list (shorter sources recycle
// with a fresh shuffle); one optimizer step updates every head and the
// factor rows the step touched. Throws if the objective goes non-finite.
TrainResult train(JointModel& m, const Schema& schema, const SplitPlan& plan);

struct SourceEval {
  int source_id = 0;
  std::string label;
  double rmse = 0.0;
  double mae = 0.0;
  std::size_t n_test = 0;
};

// Test-set metrics per modeled source. A modeled source with an empty test
// list is an error.
std::vector<SourceEval> evaluate(const JointModel& m, const Schema& schema,
                                 const SplitPlan& plan);

// Versioned binary file: config, fibers, factor tables, heads, coverage.
// load reproduces predictions bit-exactly.
void save_model(const JointModel& m, const std::string& path);
JointModel load_model(const std::string& path);

}  // namespace jima
