#include "jima/joint_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

#include "jima/interactions.hpp"
#include "jima/kernels.hpp"
#include "jima/serialize.hpp"

namespace jima {

namespace {

constexpr std::size_t kMaxOrder = 20;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Numerically stable -[y log s(z) + (1-y) log(1-s(z))] = softplus(z) - y z.
double log_loss(double z, double y) {
  const double sp = z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
  return sp - y * z;
}

void check_index_bounds(const JointModel& m, const SourceHead& h, const std::int32_t* idx) {
  for (std::size_t j = 0; j < h.order(); ++j) {
    const FiberSpec& f = m.fibers[h.fiber_pos[j]];
    if (idx[j] < 0 || static_cast<std::size_t>(idx[j]) >= f.dim)
      throw ValidationError("predict: index " + std::to_string(idx[j]) +
                            " out of range for fiber " + std::to_string(f.fiber_id));
  }
}

}  // namespace

const SourceHead& JointModel::head_for(int source_id) const {
  return heads[head_position(source_id)];
}

std::size_t JointModel::head_position(int source_id) const {
  for (std::size_t i = 0; i < heads.size(); ++i)
    if (heads[i].source_id == source_id) return i;
  throw ValidationError("model does not include source " + std::to_string(source_id));
}

JointModel init_joint_model(const Schema& schema, const ModelConfig& config) {
  if (config.r < 1) throw ValidationError("model: r must be >= 1");
  if (config.sources.empty()) throw ValidationError("model: source list is empty");
  if (config.batch_size < 1) throw ValidationError("model: batch_size must be >= 1");
  if (config.head_lambda < 0.0 || config.embedding_lambda < 0.0)
    throw ValidationError("model: lambdas must be >= 0");
  if (!config.head_lambdas.empty() && config.head_lambdas.size() != config.sources.size())
    throw ValidationError("model: head_lambdas must be parallel to sources");
  for (double l : config.head_lambdas)
    if (l < 0.0) throw ValidationError("model: lambdas must be >= 0");
  if (config.clamp_range && !(config.clamp_range->first < config.clamp_range->second))
    throw ValidationError("model: clamp range must have lo < hi");
  for (std::size_t i = 0; i < config.sources.size(); ++i)
    for (std::size_t j = i + 1; j < config.sources.size(); ++j)
      if (config.sources[i] == config.sources[j])
        throw ValidationError("model: duplicate source id " + std::to_string(config.sources[i]));

  JointModel m;
  m.config = config;
  m.fibers = schema.fibers;
  m.factors.r = config.r;

  std::mt19937_64 frng(mix_seed(config.seed, hash_name("factors")));
  std::normal_distribution<double> nd(0.0, 0.1);
  for (const FiberSpec& f : schema.fibers) {
    Mat t(f.dim, config.r);
    for (double& x : t.data) x = nd(frng);
    m.factors.tables.push_back(std::move(t));
    m.trained_by.emplace_back(f.dim, 0u);
  }

  for (std::size_t si = 0; si < config.sources.size(); ++si) {
    const DataSource& src = schema.source(config.sources[si]);
    if (src.order() > kMaxOrder) throw ValidationError("model: source order too large");
    SourceHead h;
    h.source_id = src.source_id;
    h.label = src.label;
    h.fibers = src.fibers;
    for (int fid : src.fibers) h.fiber_pos.push_back(schema.fiber_position(fid));
    h.loss_kind = src.loss_kind;
    h.lambda = config.head_lambdas.empty() ? config.head_lambda : config.head_lambdas[si];
    const std::size_t d = head_input_dim(src.order(), config.r, config.use_interactions);
    h.net = make_mlp(d, config.head_hidden,
                     mix_seed(mix_seed(config.seed, hash_name("head")),
                              static_cast<std::uint64_t>(src.source_id)));
    m.heads.push_back(std::move(h));
  }
  if (m.heads.size() > 32) throw ValidationError("model: more than 32 sources unsupported");
  return m;
}

void build_head_input(const JointModel& m, const SourceHead& h, const std::int32_t* idx,
                      double* out) {
  const std::size_t r = m.factors.r;
  const std::size_t k = h.order();
  const double* vecs[kMaxOrder];
  for (std::size_t j = 0; j < k; ++j) {
    vecs[j] = m.factors.tables[h.fiber_pos[j]].row(static_cast<std::size_t>(idx[j]));
    std::memcpy(out + j * r, vecs[j], r * sizeof(double));
  }
  if (m.config.use_interactions) interaction_features(vecs, k, r, out + k * r);
}

double predict(const JointModel& m, int source_id, const std::int32_t* idx) {
  const SourceHead& h = m.head_for(source_id);
  check_index_bounds(m, h, idx);
  std::vector<double> x(head_input_dim(h.order(), m.factors.r, m.config.use_interactions));
  build_head_input(m, h, idx, x.data());
  const double z = mlp_forward(h.net, x.data(), x.size());
  if (h.loss_kind == LossKind::cross_entropy) return sigmoid(z);
  if (m.config.clamp_range)
    return std::clamp(z, m.config.clamp_range->first, m.config.clamp_range->second);
  return z;
}

ColdStartResult cold_start_predict(const JointModel& m, int source_id, const std::int32_t* idx) {
  const SourceHead& h = m.head_for(source_id);
  ColdStartResult res;
  res.value = predict(m, source_id, idx);
  for (std::size_t j = 0; j < h.order(); ++j) {
    EntityStatus st;
    st.fiber_id = h.fibers[j];
    st.index = idx[j];
    const std::uint32_t mask = m.trained_by[h.fiber_pos[j]][static_cast<std::size_t>(idx[j])];
    for (std::size_t hi = 0; hi < m.heads.size(); ++hi)
      if (mask & (std::uint32_t{1} << hi)) st.trained_by_sources.push_back(m.heads[hi].source_id);
    if (st.trained_by_sources.empty()) res.any_untrained = true;
    res.entities.push_back(std::move(st));
  }
  return res;
}

void ModelGrads::init_like(const JointModel& m) {
  dfactors.clear();
  touched.assign(m.fibers.size(), {});
  for (std::size_t f = 0; f < m.fibers.size(); ++f)
    dfactors.emplace_back(m.fibers[f].dim, m.factors.r);
  dheads.assign(m.heads.size(), MlpGrads{});
  for (std::size_t hi = 0; hi < m.heads.size(); ++hi) dheads[hi].init_like(m.heads[hi].net);
}

void ModelGrads::reset(const JointModel& m) {
  if (dfactors.size() != m.fibers.size() || dheads.size() != m.heads.size()) {
    init_like(m);
    return;
  }
  const std::size_t r = m.factors.r;
  for (std::size_t f = 0; f < dfactors.size(); ++f) {
    for (std::uint32_t row : touched[f])
      std::memset(dfactors[f].row(row), 0, r * sizeof(double));
    touched[f].clear();
  }
  for (MlpGrads& hg : dheads) hg.zero();
}

double multi_task_loss(const JointModel& m, const Schema& schema,
                       const std::vector<std::vector<std::uint32_t>>& batches,
                       ModelGrads* grads) {
  if (batches.size() != m.heads.size())
    throw ValidationError("multi_task_loss: need one batch list per head");
  if (grads) grads->reset(m);

  const std::size_t r = m.factors.r;
  const auto& ops = kernels::active();

  std::vector<std::vector<std::uint32_t>> touched(m.fibers.size());
  std::vector<std::vector<std::uint8_t>> seen(m.fibers.size());
  for (std::size_t f = 0; f < m.fibers.size(); ++f) seen[f].assign(m.fibers[f].dim, 0);

  double loss = 0.0;
  Mat X, dX;
  MlpBatchCache cache;
  std::vector<double> yhat, upstream;

  for (std::size_t hi = 0; hi < m.heads.size(); ++hi) {
    const std::vector<std::uint32_t>& batch = batches[hi];
    if (batch.empty()) continue;  // source without data this step: loss removed
    const SourceHead& h = m.heads[hi];
    const DataSource& src = schema.source(h.source_id);
    const std::size_t B = batch.size();
    const std::size_t k = h.order();
    const std::size_t d = head_input_dim(k, r, m.config.use_interactions);

    X = Mat(B, d);
    for (std::size_t b = 0; b < B; ++b) {
      const std::int32_t* t = src.index_tuple(batch[b]);
      build_head_input(m, h, t, X.row(b));
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t f = h.fiber_pos[j];
        const auto row = static_cast<std::uint32_t>(t[j]);
        if (!seen[f][row]) {
          seen[f][row] = 1;
          touched[f].push_back(row);
        }
      }
    }

    mlp_forward_batch(h.net, X, cache, yhat);

    upstream.resize(B);
    double data_loss = 0.0;
    if (h.loss_kind == LossKind::squared) {
      for (std::size_t b = 0; b < B; ++b) {
        const double e = yhat[b] - src.values[batch[b]];
        data_loss += e * e;
        upstream[b] = 2.0 * e / static_cast<double>(B);
      }
    } else {
      for (std::size_t b = 0; b < B; ++b) {
        const double y = src.values[batch[b]];
        data_loss += log_loss(yhat[b], y);
        upstream[b] = (sigmoid(yhat[b]) - y) / static_cast<double>(B);
      }
    }
    loss += data_loss / static_cast<double>(B);
    loss += l2_penalty(h.net, h.lambda);

    if (grads) {
      mlp_backward_batch(h.net, cache, upstream, grads->dheads[hi], &dX);
      add_l2_gradient(h.net, h.lambda, grads->dheads[hi]);
      for (std::size_t b = 0; b < B; ++b) {
        const std::int32_t* t = src.index_tuple(batch[b]);
        const double* vecs[kMaxOrder];
        double* dvecs[kMaxOrder];
        for (std::size_t j = 0; j < k; ++j) {
          const std::size_t f = h.fiber_pos[j];
          vecs[j] = m.factors.tables[f].row(static_cast<std::size_t>(t[j]));
          dvecs[j] = grads->dfactors[f].row(static_cast<std::size_t>(t[j]));
        }
        const double* dxr = dX.row(b);
        for (std::size_t j = 0; j < k; ++j) ops.axpy(1.0, dxr + j * r, dvecs[j], r);
        if (m.config.use_interactions)
          interaction_backward(vecs, k, r, dxr + k * r, dvecs);
      }
    }
  }

  // Embedding penalty: once per factor row touched by any batch this step.
  for (std::size_t f = 0; f < m.fibers.size(); ++f) {
    for (std::uint32_t row : touched[f]) {
      const double* x = m.factors.tables[f].row(row);
      loss += m.config.embedding_lambda * ops.sumsq(x, r);
      if (grads) ops.axpy(2.0 * m.config.embedding_lambda, x, grads->dfactors[f].row(row), r);
    }
  }
  if (grads) grads->touched = std::move(touched);

  if (!std::isfinite(loss)) throw std::runtime_error("objective became non-finite");
  return loss;
}

TrainResult train(JointModel& m, const Schema& schema, const SplitPlan& plan) {
  std::vector<const std::vector<std::uint32_t>*> tlists;
  std::size_t max_n = 0;
  for (const SourceHead& h : m.heads) {
    const SourceSplit& sp = plan.for_source(h.source_id);
    tlists.push_back(&sp.train);
    max_n = std::max(max_n, sp.train.size());
  }
  if (max_n == 0) throw ValidationError("train: every modeled source has an empty training list");

  for (std::size_t hi = 0; hi < m.heads.size(); ++hi) {
    const SourceHead& h = m.heads[hi];
    const DataSource& src = schema.source(h.source_id);
    for (std::uint32_t obs : *tlists[hi]) {
      const std::int32_t* t = src.index_tuple(obs);
      for (std::size_t j = 0; j < h.order(); ++j)
        m.trained_by[h.fiber_pos[j]][static_cast<std::size_t>(t[j])] |= std::uint32_t{1} << hi;
    }
  }

  const std::size_t B = m.config.batch_size;
  const std::size_t steps = (max_n + B - 1) / B;
  const std::uint64_t batch_seed = mix_seed(m.config.seed, hash_name("minibatches"));

  struct Queue {
    std::vector<std::vector<std::uint32_t>> batches;
    std::size_t pos = 0;
    std::uint64_t pass = 0;
  };
  std::vector<Queue> queues(m.heads.size());
  auto refill = [&](std::size_t hi) {
    Queue& q = queues[hi];
    q.batches = minibatches(m.heads[hi].source_id, *tlists[hi], B, batch_seed, q.pass++);
    q.pos = 0;
  };
  for (std::size_t hi = 0; hi < m.heads.size(); ++hi)
    if (!tlists[hi]->empty()) refill(hi);

  ModelGrads grads;
  grads.init_like(m);

  std::vector<AdamSlots> factor_slots(m.fibers.size());
  for (std::size_t f = 0; f < m.fibers.size(); ++f)
    factor_slots[f].resize(m.factors.tables[f].size());
  struct HeadSlots {
    std::vector<AdamSlots> W, b;
  };
  std::vector<HeadSlots> head_slots(m.heads.size());
  for (std::size_t hi = 0; hi < m.heads.size(); ++hi) {
    head_slots[hi].W.resize(m.heads[hi].net.layers.size());
    head_slots[hi].b.resize(m.heads[hi].net.layers.size());
    for (std::size_t li = 0; li < m.heads[hi].net.layers.size(); ++li) {
      head_slots[hi].W[li].resize(m.heads[hi].net.layers[li].W.size());
      head_slots[hi].b[li].resize(m.heads[hi].net.layers[li].b.size());
    }
  }
  std::uint64_t t = 0;

  TrainResult result;
  std::vector<std::vector<std::uint32_t>> step_batches(m.heads.size());
  for (std::size_t epoch = 0; epoch < m.config.epochs; ++epoch) {
    double acc = 0.0;
    for (std::size_t step = 0; step < steps; ++step) {
      for (std::size_t hi = 0; hi < m.heads.size(); ++hi) {
        if (tlists[hi]->empty()) {
          step_batches[hi].clear();
          continue;
        }
        Queue& q = queues[hi];
        if (q.pos == q.batches.size()) refill(hi);
        step_batches[hi] = std::move(q.batches[q.pos++]);
      }
      try {
        acc += multi_task_loss(m, schema, step_batches, &grads);
        ++t;
        for (std::size_t hi = 0; hi < m.heads.size(); ++hi) {
          Mlp& net = m.heads[hi].net;
          for (std::size_t li = 0; li < net.layers.size(); ++li) {
            adam_step(net.layers[li].W.data.data(), grads.dheads[hi].dW[li].data.data(),
                      head_slots[hi].W[li], net.layers[li].W.size(), m.config.adam, t);
            adam_step(net.layers[li].b.data(), grads.dheads[hi].db[li].data(),
                      head_slots[hi].b[li], net.layers[li].b.size(), m.config.adam, t);
          }
        }
        for (std::size_t f = 0; f < m.fibers.size(); ++f)
          adam_step_rows(m.factors.tables[f], grads.dfactors[f], factor_slots[f],
                         grads.touched[f], m.config.adam, t);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) +
                                 " step " + std::to_string(step) + ": " + e.what());
      }
    }
    result.epoch_loss.push_back(acc / static_cast<double>(steps));
  }
  return result;
}

std::vector<SourceEval> evaluate(const JointModel& m, const Schema& schema,
                                 const SplitPlan& plan) {
  const std::size_t r = m.factors.r;
  constexpr std::size_t kChunk = 1024;

  std::vector<SourceEval> out;
  Mat X;
  MlpBatchCache cache;
  std::vector<double> yhat;
  for (const SourceHead& h : m.heads) {
    const DataSource& src = schema.source(h.source_id);
    const std::vector<std::uint32_t>& test = plan.for_source(h.source_id).test;
    if (test.empty())
      throw ValidationError("evaluate: source " + std::to_string(h.source_id) +
                            " has an empty test set");
    const std::size_t k = h.order();
    const std::size_t d = head_input_dim(k, r, m.config.use_interactions);

    double se = 0.0, ae = 0.0;
    for (std::size_t start = 0; start < test.size(); start += kChunk) {
      const std::size_t B = std::min(kChunk, test.size() - start);
      X = Mat(B, d);
      for (std::size_t b = 0; b < B; ++b)
        build_head_input(m, h, src.index_tuple(test[start + b]), X.row(b));
      mlp_forward_batch(h.net, X, cache, yhat);
      for (std::size_t b = 0; b < B; ++b) {
        double pred = yhat[b];
        if (h.loss_kind == LossKind::cross_entropy)
          pred = sigmoid(pred);
        else if (m.config.clamp_range)
          pred = std::clamp(pred, m.config.clamp_range->first, m.config.clamp_range->second);
        const double e = pred - src.values[test[start + b]];
        se += e * e;
        ae += std::abs(e);
      }
    }
    const auto n = static_cast<double>(test.size());
    out.push_back({h.source_id, h.label, std::sqrt(se / n), ae / n, test.size()});
  }
  return out;
}

namespace {

constexpr std::uint64_t kModelMagic = 0x4a4d444c2d763100ull;  // "JMDL-v1\0"

void write_i64(std::ostream& os, std::int64_t v) {
  io::write_u64(os, static_cast<std::uint64_t>(v));
}
std::int64_t read_i64(std::istream& is) { return static_cast<std::int64_t>(io::read_u64(is)); }

}  // namespace

void save_model(const JointModel& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValidationError("cannot write " + path);

  io::write_u64(os, kModelMagic);
  const ModelConfig& c = m.config;
  io::write_u64(os, c.r);
  io::write_u64(os, c.use_interactions ? 1 : 0);
  io::write_u64(os, c.head_hidden.size());
  for (std::size_t w : c.head_hidden) io::write_u64(os, w);
  io::write_f64(os, c.head_lambda);
  io::write_u64(os, c.head_lambdas.size());
  for (double l : c.head_lambdas) io::write_f64(os, l);
  io::write_f64(os, c.embedding_lambda);
  io::write_f64(os, c.adam.learning_rate);
  io::write_f64(os, c.adam.beta1);
  io::write_f64(os, c.adam.beta2);
  io::write_f64(os, c.adam.epsilon);
  io::write_u64(os, c.epochs);
  io::write_u64(os, c.batch_size);
  io::write_u64(os, c.seed);
  io::write_u64(os, c.clamp_range ? 1 : 0);
  if (c.clamp_range) {
    io::write_f64(os, c.clamp_range->first);
    io::write_f64(os, c.clamp_range->second);
  }
  io::write_u64(os, c.sources.size());
  for (int s : c.sources) write_i64(os, s);

  io::write_u64(os, m.fibers.size());
  for (const FiberSpec& f : m.fibers) {
    write_i64(os, f.fiber_id);
    io::write_u64(os, f.dim);
    io::write_string(os, f.label);
  }
  for (const Mat& t : m.factors.tables) {
    io::write_u64(os, t.rows);
    io::write_u64(os, t.cols);
    io::write_f64s(os, t.data.data(), t.size());
  }
  io::write_u64(os, m.heads.size());
  for (const SourceHead& h : m.heads) {
    write_i64(os, h.source_id);
    io::write_string(os, h.label);
    io::write_u64(os, h.fibers.size());
    for (int fid : h.fibers) write_i64(os, fid);
    for (std::size_t p : h.fiber_pos) io::write_u64(os, p);
    io::write_u64(os, h.loss_kind == LossKind::cross_entropy ? 1 : 0);
    io::write_f64(os, h.lambda);
    write_mlp(os, h.net);
  }
  for (const auto& cov : m.trained_by) {
    io::write_u64(os, cov.size());
    os.write(reinterpret_cast<const char*>(cov.data()),
             static_cast<std::streamsize>(cov.size() * sizeof(std::uint32_t)));
  }
  if (!os) throw std::runtime_error("write failed on " + path);
}

JointModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot read " + path);
  if (io::read_u64(is) != kModelMagic)
    throw ValidationError(path + ": not a model file of a known version");

  JointModel m;
  ModelConfig& c = m.config;
  c.r = io::read_u64(is);
  c.use_interactions = io::read_u64(is) == 1;
  c.head_hidden.resize(io::read_u64(is));
  for (std::size_t& w : c.head_hidden) w = io::read_u64(is);
  c.head_lambda = io::read_f64(is);
  c.head_lambdas.resize(io::read_u64(is));
  for (double& l : c.head_lambdas) l = io::read_f64(is);
  c.embedding_lambda = io::read_f64(is);
  c.adam.learning_rate = io::read_f64(is);
  c.adam.beta1 = io::read_f64(is);
  c.adam.beta2 = io::read_f64(is);
  c.adam.epsilon = io::read_f64(is);
  c.epochs = io::read_u64(is);
  c.batch_size = io::read_u64(is);
  c.seed = io::read_u64(is);
  if (io::read_u64(is) == 1) {
    const double lo = io::read_f64(is);
    const double hi = io::read_f64(is);
    c.clamp_range = {lo, hi};
  }
  c.sources.resize(io::read_u64(is));
  for (int& s : c.sources) s = static_cast<int>(read_i64(is));

  m.fibers.resize(io::read_u64(is));
  for (FiberSpec& f : m.fibers) {
    f.fiber_id = static_cast<int>(read_i64(is));
    f.dim = io::read_u64(is);
    f.label = io::read_string(is);
  }
  m.factors.r = c.r;
  for (std::size_t i = 0; i < m.fibers.size(); ++i) {
    const std::uint64_t rows = io::read_u64(is);
    const std::uint64_t cols = io::read_u64(is);
    Mat t(rows, cols);
    io::read_f64s(is, t.data.data(), t.size());
    m.factors.tables.push_back(std::move(t));
  }
  const std::uint64_t nheads = io::read_u64(is);
  for (std::uint64_t i = 0; i < nheads; ++i) {
    SourceHead h;
    h.source_id = static_cast<int>(read_i64(is));
    h.label = io::read_string(is);
    const std::uint64_t k = io::read_u64(is);
    h.fibers.resize(k);
    for (int& fid : h.fibers) fid = static_cast<int>(read_i64(is));
    h.fiber_pos.resize(k);
    for (std::size_t& p : h.fiber_pos) p = io::read_u64(is);
    h.loss_kind = io::read_u64(is) == 1 ? LossKind::cross_entropy : LossKind::squared;
    h.lambda = io::read_f64(is);
    h.net = read_mlp(is);
    m.heads.push_back(std::move(h));
  }
  m.trained_by.resize(m.fibers.size());
  for (auto& cov : m.trained_by) {
    cov.resize(io::read_u64(is));
    is.read(reinterpret_cast<char*>(cov.data()),
            static_cast<std::streamsize>(cov.size() * sizeof(std::uint32_t)));
    if (!is) throw std::runtime_error("model file truncated");
  }
  return m;
}

}  // namespace jima
