#include "jima/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <stdexcept>

#include "jima/kernels.hpp"

namespace jima {

GmiModel gmi_fit(const DataSource& src, const std::vector<std::uint32_t>& train) {
  if (train.empty()) throw ValidationError("gmi: empty training set");
  double acc = 0.0;
  for (std::uint32_t i : train) acc += src.values[i];
  return GmiModel{acc / static_cast<double>(train.size())};
}

MfModel mf_fit(const Schema& schema, int source_id, const std::vector<std::uint32_t>& train,
               const MfConfig& cfg) {
  const DataSource& src = schema.source(source_id);
  if (src.order() != 2) throw ValidationError("mf: source must span exactly 2 fibers");
  if (train.empty()) throw ValidationError("mf: empty training set");
  if (cfg.r < 1) throw ValidationError("mf: r must be >= 1");
  if (cfg.lambda < 0.0) throw ValidationError("mf: lambda must be >= 0");
  if (cfg.batch_size < 1) throw ValidationError("mf: batch_size must be >= 1");

  const std::size_t na = schema.fiber(src.fibers[0]).dim;
  const std::size_t nb = schema.fiber(src.fibers[1]).dim;
  const std::size_t r = cfg.r;
  const auto& ops = kernels::active();

  MfModel m;
  m.A = Mat(na, r);
  m.B = Mat(nb, r);
  std::mt19937_64 rng(mix_seed(cfg.seed, hash_name("mf-init")));
  std::normal_distribution<double> nd(0.0, 0.1);
  for (double& x : m.A.data) x = nd(rng);
  for (double& x : m.B.data) x = nd(rng);

  Mat dA(na, r), dB(nb, r);
  std::vector<std::uint32_t> ta, tb;  // rows touched this step
  std::vector<std::uint8_t> sa(na), sb(nb);
  AdamSlots slots_a, slots_b;
  slots_a.resize(m.A.size());
  slots_b.resize(m.B.size());
  std::uint64_t t = 0;
  const std::uint64_t batch_seed = mix_seed(cfg.seed, hash_name("minibatches"));

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches = minibatches(source_id, train, cfg.batch_size, batch_seed, epoch);
    double eloss = 0.0;
    for (const auto& batch : batches) {
      for (std::uint32_t row : ta) std::memset(dA.row(row), 0, r * sizeof(double));
      for (std::uint32_t row : tb) std::memset(dB.row(row), 0, r * sizeof(double));
      ta.clear();
      tb.clear();

      const auto Bn = static_cast<double>(batch.size());
      double loss = 0.0;
      for (std::uint32_t obs : batch) {
        const std::int32_t* idx = src.index_tuple(obs);
        const auto ia = static_cast<std::size_t>(idx[0]);
        const auto ib = static_cast<std::size_t>(idx[1]);
        const double* a = m.A.row(ia);
        const double* b = m.B.row(ib);
        const double e = ops.dot(a, b, r) - src.values[obs];
        loss += e * e;
        const double g = 2.0 * e / Bn;
        ops.axpy(g, b, dA.row(ia), r);
        ops.axpy(g, a, dB.row(ib), r);
        if (!sa[ia]) {
          sa[ia] = 1;
          ta.push_back(static_cast<std::uint32_t>(ia));
        }
        if (!sb[ib]) {
          sb[ib] = 1;
          tb.push_back(static_cast<std::uint32_t>(ib));
        }
      }
      loss /= Bn;
      for (std::uint32_t row : ta) {
        loss += cfg.lambda * ops.sumsq(m.A.row(row), r);
        ops.axpy(2.0 * cfg.lambda, m.A.row(row), dA.row(row), r);
        sa[row] = 0;
      }
      for (std::uint32_t row : tb) {
        loss += cfg.lambda * ops.sumsq(m.B.row(row), r);
        ops.axpy(2.0 * cfg.lambda, m.B.row(row), dB.row(row), r);
        sb[row] = 0;
      }
      if (!std::isfinite(loss))
        throw std::runtime_error("mf: objective became non-finite at epoch " +
                                 std::to_string(epoch));
      ++t;
      adam_step_rows(m.A, dA, slots_a, ta, cfg.adam, t);
      adam_step_rows(m.B, dB, slots_b, tb, cfg.adam, t);
      eloss += loss;
    }
    m.epoch_loss.push_back(eloss / static_cast<double>(batches.size()));
  }
  return m;
}

double mf_predict(const MfModel& m, std::int32_t a, std::int32_t b) {
  if (a < 0 || static_cast<std::size_t>(a) >= m.A.rows || b < 0 ||
      static_cast<std::size_t>(b) >= m.B.rows)
    throw ValidationError("mf: index out of range");
  return kernels::active().dot(m.A.row(static_cast<std::size_t>(a)),
                               m.B.row(static_cast<std::size_t>(b)), m.A.cols);
}

namespace {

// Solves (G + ridge I) x = c in place for a symmetric positive definite G of
// size r x r via Cholesky; escalates the ridge when a pivot fails.
void solve_spd(std::vector<double>& G, std::vector<double>& c, std::size_t r, double ridge) {
  std::vector<double> L(r * r);
  for (int attempt = 0; attempt < 6; ++attempt) {
    const double rr = ridge * std::pow(10.0, attempt);
    std::copy(G.begin(), G.end(), L.begin());
    for (std::size_t i = 0; i < r; ++i) L[i * r + i] += rr;
    bool ok = true;
    for (std::size_t i = 0; i < r && ok; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        double s = L[i * r + j];
        for (std::size_t p = 0; p < j; ++p) s -= L[i * r + p] * L[j * r + p];
        if (i == j) {
          if (s <= 0.0) {
            ok = false;
            break;
          }
          L[i * r + i] = std::sqrt(s);
        } else {
          L[i * r + j] = s / L[j * r + j];
        }
      }
    }
    if (!ok) continue;
    // forward then back substitution
    for (std::size_t i = 0; i < r; ++i) {
      double s = c[i];
      for (std::size_t p = 0; p < i; ++p) s -= L[i * r + p] * c[p];
      c[i] = s / L[i * r + i];
    }
    for (std::size_t i = r; i-- > 0;) {
      double s = c[i];
      for (std::size_t p = i + 1; p < r; ++p) s -= L[p * r + i] * c[p];
      c[i] = s / L[i * r + i];
    }
    return;
  }
  throw std::runtime_error("cp: normal equations stayed singular despite ridge escalation");
}

}  // namespace

CpModel cp_fit(const Schema& schema, int source_id, const std::vector<std::uint32_t>& train,
               const CpConfig& cfg) {
  const DataSource& src = schema.source(source_id);
  if (cfg.r < 1) throw ValidationError("cp: r must be >= 1");
  if (src.order() < 3) throw ValidationError("cp: source must span at least 3 fibers");
  if (train.empty()) throw ValidationError("cp: empty training set");

  const std::size_t k = src.order();
  const std::size_t r = cfg.r;
  const auto& ops = kernels::active();

  CpModel m;
  m.r = r;
  std::mt19937_64 rng(mix_seed(cfg.seed, hash_name("cp-init")));
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<std::size_t> dims;
  for (int fid : src.fibers) {
    dims.push_back(schema.fiber(fid).dim);
    Mat t(dims.back(), r);
    for (double& x : t.data) x = nd(rng);
    m.factors.push_back(std::move(t));
  }

  // Bucket the training entries by their index along each mode.
  std::vector<std::vector<std::vector<std::uint32_t>>> by_mode(k);
  for (std::size_t j = 0; j < k; ++j) by_mode[j].resize(dims[j]);
  for (std::uint32_t obs : train) {
    const std::int32_t* t = src.index_tuple(obs);
    for (std::size_t j = 0; j < k; ++j)
      by_mode[j][static_cast<std::size_t>(t[j])].push_back(obs);
  }

  auto train_mse = [&]() {
    double se = 0.0;
    std::vector<double> z(r);
    for (std::uint32_t obs : train) {
      const std::int32_t* t = src.index_tuple(obs);
      std::copy(m.factors[0].row(static_cast<std::size_t>(t[0])),
                m.factors[0].row(static_cast<std::size_t>(t[0])) + r, z.begin());
      for (std::size_t j = 1; j < k; ++j)
        ops.hadamard(z.data(), m.factors[j].row(static_cast<std::size_t>(t[j])), z.data(), r);
      const double e = ops.sum(z.data(), r) - src.values[obs];
      se += e * e;
    }
    return se / static_cast<double>(train.size());
  };

  std::vector<double> G(r * r), c(r), z(r);
  double prev = train_mse();
  for (std::size_t sweep = 0; sweep < cfg.max_sweeps; ++sweep) {
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t row = 0; row < dims[j]; ++row) {
        const auto& entries = by_mode[j][row];
        if (entries.empty()) continue;
        std::fill(G.begin(), G.end(), 0.0);
        std::fill(c.begin(), c.end(), 0.0);
        for (std::uint32_t obs : entries) {
          const std::int32_t* t = src.index_tuple(obs);
          bool started = false;
          for (std::size_t j2 = 0; j2 < k; ++j2) {
            if (j2 == j) continue;
            const double* f = m.factors[j2].row(static_cast<std::size_t>(t[j2]));
            if (!started) {
              std::copy(f, f + r, z.begin());
              started = true;
            } else {
              ops.hadamard(z.data(), f, z.data(), r);
            }
          }
          const double y = src.values[obs];
          for (std::size_t p = 0; p < r; ++p) {
            c[p] += y * z[p];
            double* Gp = G.data() + p * r;
            const double zp = z[p];
            for (std::size_t q = 0; q <= p; ++q) Gp[q] += zp * z[q];
          }
        }
        // mirror the lower triangle
        for (std::size_t p = 0; p < r; ++p)
          for (std::size_t q = p + 1; q < r; ++q) G[p * r + q] = G[q * r + p];
        solve_spd(G, c, r, cfg.ridge);
        std::copy(c.begin(), c.end(), m.factors[j].row(row));
      }
    }
    const double cur = train_mse();
    m.sweep_loss.push_back(cur);
    m.sweeps_run = sweep + 1;
    if (!std::isfinite(cur)) throw std::runtime_error("cp: loss became non-finite");
    if (std::abs(prev - cur) <= cfg.tol * std::max(prev, 1e-12)) {
      m.converged = true;
      break;
    }
    prev = cur;
  }
  return m;
}

double cp_predict(const CpModel& m, const std::int32_t* idx) {
  std::vector<double> z(m.r);
  std::copy(m.factors[0].row(static_cast<std::size_t>(idx[0])),
            m.factors[0].row(static_cast<std::size_t>(idx[0])) + m.r, z.begin());
  const auto& ops = kernels::active();
  for (std::size_t j = 1; j < m.factors.size(); ++j)
    ops.hadamard(z.data(), m.factors[j].row(static_cast<std::size_t>(idx[j])), z.data(), m.r);
  return ops.sum(z.data(), m.r);
}

}  // namespace jima
