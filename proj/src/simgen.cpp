#include "jima/simgen.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "jima/kernels.hpp"

namespace jima {

namespace {

Mat draw_factors(std::size_t n, std::size_t r, std::mt19937_64& rng) {
  Mat t(n, r);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (double& x : t.data) x = nd(rng);
  return t;
}

// Noise stream for one source; sd == 0 means exactly zero noise.
struct Noise {
  std::mt19937_64 rng;
  std::normal_distribution<double> dist;
  bool on;
  Noise(std::uint64_t seed, int source_id, double sd)
      : rng(mix_seed(mix_seed(seed, hash_name("noise")), static_cast<std::uint64_t>(source_id))),
        dist(0.0, sd > 0.0 ? sd : 1.0),
        on(sd > 0.0) {}
  double operator()() { return on ? dist(rng) : 0.0; }
};

Mat pair_products(const Mat& a, const Mat& b) {
  Mat c(a.rows, b.rows);
  kernels::active().gemm_nt(a.data.data(), b.data.data(), c.data.data(), a.rows, b.rows, a.cols,
                            false);
  return c;
}

void reserve_cells(DataSource& s, std::size_t cells) {
  s.flat_indices.reserve(cells * s.fibers.size());
  s.values.reserve(cells);
}

void check_common(std::size_t r, double noise_sd) {
  if (r < 1) throw ValidationError("sim: r must be >= 1");
  if (noise_sd < 0.0) throw ValidationError("sim: noise_sd must be >= 0");
  if (!(noise_sd == noise_sd)) throw ValidationError("sim: noise_sd must be finite");
}

}  // namespace

const Mat& GroundTruth::factors_for(int fiber_id) const {
  for (std::size_t i = 0; i < fiber_ids.size(); ++i)
    if (fiber_ids[i] == fiber_id) return factors[i];
  throw ValidationError("ground truth has no fiber id " + std::to_string(fiber_id));
}

ThreeWayData gen_three_way(const SimSpec3& s) {
  if (s.n_users < 1 || s.n_tops < 1 || s.n_bottoms < 1)
    throw ValidationError("sim: entity counts must be >= 1");
  check_common(s.r, s.noise_sd);

  GroundTruth gt;
  gt.fiber_ids = {0, 1, 2};
  gt.interaction_weight = s.interaction_weight;
  gt.actor_fiber = 0;
  std::mt19937_64 frng(mix_seed(s.seed, hash_name("truth-factors")));
  gt.factors.push_back(draw_factors(s.n_users, s.r, frng));
  gt.factors.push_back(draw_factors(s.n_tops, s.r, frng));
  gt.factors.push_back(draw_factors(s.n_bottoms, s.r, frng));
  const Mat& X = gt.factors[0];
  const Mat& U = gt.factors[1];
  const Mat& V = gt.factors[2];

  const Mat XU = pair_products(X, U);
  const Mat XV = pair_products(X, V);
  const Mat UV = pair_products(U, V);
  const double w = s.interaction_weight;

  DataSource utb{1, "utb", {0, 1, 2}, LossKind::squared, {}, {}};
  DataSource ut{2, "ut", {0, 1}, LossKind::squared, {}, {}};
  DataSource ub{3, "ub", {0, 2}, LossKind::squared, {}, {}};
  DataSource tb{4, "tb", {1, 2}, LossKind::squared, {}, {}};
  reserve_cells(utb, s.n_users * s.n_tops * s.n_bottoms);
  reserve_cells(ut, s.n_users * s.n_tops);
  reserve_cells(ub, s.n_users * s.n_bottoms);
  reserve_cells(tb, s.n_tops * s.n_bottoms);

  std::int32_t idx[3];
  {
    Noise e(s.seed, utb.source_id, s.noise_sd);
    for (std::size_t i = 0; i < s.n_users; ++i)
      for (std::size_t t = 0; t < s.n_tops; ++t) {
        const double xu = XU.at(i, t);
        for (std::size_t b = 0; b < s.n_bottoms; ++b) {
          idx[0] = static_cast<std::int32_t>(i);
          idx[1] = static_cast<std::int32_t>(t);
          idx[2] = static_cast<std::int32_t>(b);
          utb.add(idx, xu + XV.at(i, b) + w * UV.at(t, b) + e());
        }
      }
  }
  {
    Noise e(s.seed, ut.source_id, s.noise_sd);
    for (std::size_t i = 0; i < s.n_users; ++i)
      for (std::size_t t = 0; t < s.n_tops; ++t) {
        idx[0] = static_cast<std::int32_t>(i);
        idx[1] = static_cast<std::int32_t>(t);
        ut.add(idx, XU.at(i, t) + e());
      }
  }
  {
    Noise e(s.seed, ub.source_id, s.noise_sd);
    for (std::size_t i = 0; i < s.n_users; ++i)
      for (std::size_t b = 0; b < s.n_bottoms; ++b) {
        idx[0] = static_cast<std::int32_t>(i);
        idx[1] = static_cast<std::int32_t>(b);
        ub.add(idx, XV.at(i, b) + e());
      }
  }
  // Expert fit scores carry no noise by construction.
  for (std::size_t t = 0; t < s.n_tops; ++t)
    for (std::size_t b = 0; b < s.n_bottoms; ++b) {
      idx[0] = static_cast<std::int32_t>(t);
      idx[1] = static_cast<std::int32_t>(b);
      tb.add(idx, UV.at(t, b));
    }

  ThreeWayData out;
  out.schema = build_schema(
      {{0, s.n_users, "user"}, {1, s.n_tops, "top"}, {2, s.n_bottoms, "bottom"}},
      {std::move(utb), std::move(ut), std::move(ub), std::move(tb)});
  out.truth = std::move(gt);
  return out;
}

FourWayData gen_four_way(const SimSpec4& s) {
  if (s.n_users < 1 || s.n_tops < 1 || s.n_bottoms < 1 || s.n_hats < 1)
    throw ValidationError("sim: entity counts must be >= 1");
  check_common(s.r, s.noise_sd);

  GroundTruth gt;
  gt.fiber_ids = {0, 1, 2, 3};
  gt.interaction_weight = s.interaction_weight;
  gt.actor_fiber = 0;
  std::mt19937_64 frng(mix_seed(s.seed, hash_name("truth-factors")));
  gt.factors.push_back(draw_factors(s.n_users, s.r, frng));
  gt.factors.push_back(draw_factors(s.n_tops, s.r, frng));
  gt.factors.push_back(draw_factors(s.n_bottoms, s.r, frng));
  gt.factors.push_back(draw_factors(s.n_hats, s.r, frng));
  const Mat& X1 = gt.factors[0];
  const Mat& X2 = gt.factors[1];
  const Mat& X3 = gt.factors[2];
  const Mat& X4 = gt.factors[3];

  const Mat P12 = pair_products(X1, X2);
  const Mat P13 = pair_products(X1, X3);
  const Mat P14 = pair_products(X1, X4);
  const Mat P23 = pair_products(X2, X3);
  const Mat P24 = pair_products(X2, X4);
  const Mat P34 = pair_products(X3, X4);
  const double w = s.interaction_weight;

  DataSource utbh{1, "utbh", {0, 1, 2, 3}, LossKind::squared, {}, {}};
  DataSource utb{2, "utb", {0, 1, 2}, LossKind::squared, {}, {}};
  DataSource ut{3, "ut", {0, 1}, LossKind::squared, {}, {}};
  DataSource ub{4, "ub", {0, 2}, LossKind::squared, {}, {}};
  DataSource uh{5, "uh", {0, 3}, LossKind::squared, {}, {}};
  reserve_cells(utbh, s.n_users * s.n_tops * s.n_bottoms * s.n_hats);
  reserve_cells(utb, s.n_users * s.n_tops * s.n_bottoms);
  reserve_cells(ut, s.n_users * s.n_tops);
  reserve_cells(ub, s.n_users * s.n_bottoms);
  reserve_cells(uh, s.n_users * s.n_hats);

  std::int32_t idx[4];
  {
    Noise e(s.seed, utbh.source_id, s.noise_sd);
    for (std::size_t i = 0; i < s.n_users; ++i)
      for (std::size_t t = 0; t < s.n_tops; ++t)
        for (std::size_t b = 0; b < s.n_bottoms; ++b) {
          const double base = P12.at(i, t) + P13.at(i, b) + w * P23.at(t, b);
          for (std::size_t h = 0; h < s.n_hats; ++h) {
            idx[0] = static_cast<std::int32_t>(i);
            idx[1] = static_cast<std::int32_t>(t);
            idx[2] = static_cast<std::int32_t>(b);
            idx[3] = static_cast<std::int32_t>(h);
            utbh.add(idx, base + P14.at(i, h) + w * (P24.at(t, h) + P34.at(b, h)) + e());
          }
        }
  }
  {
    Noise e(s.seed, utb.source_id, s.noise_sd);
    for (std::size_t i = 0; i < s.n_users; ++i)
      for (std::size_t t = 0; t < s.n_tops; ++t)
        for (std::size_t b = 0; b < s.n_bottoms; ++b) {
          idx[0] = static_cast<std::int32_t>(i);
          idx[1] = static_cast<std::int32_t>(t);
          idx[2] = static_cast<std::int32_t>(b);
          utb.add(idx, P12.at(i, t) + P13.at(i, b) + w * P23.at(t, b) + e());
        }
  }
  auto fill_matrix = [&](DataSource& dst, const Mat& P, std::size_t n1, std::size_t n2) {
    Noise e(s.seed, dst.source_id, s.noise_sd);
    std::int32_t ij[2];
    for (std::size_t a = 0; a < n1; ++a)
      for (std::size_t b = 0; b < n2; ++b) {
        ij[0] = static_cast<std::int32_t>(a);
        ij[1] = static_cast<std::int32_t>(b);
        dst.add(ij, P.at(a, b) + e());
      }
  };
  fill_matrix(ut, P12, s.n_users, s.n_tops);
  fill_matrix(ub, P13, s.n_users, s.n_bottoms);
  fill_matrix(uh, P14, s.n_users, s.n_hats);

  FourWayData out;
  out.schema = build_schema({{0, s.n_users, "user"},
                             {1, s.n_tops, "top"},
                             {2, s.n_bottoms, "bottom"},
                             {3, s.n_hats, "hat"}},
                            {std::move(utbh), std::move(utb), std::move(ut), std::move(ub),
                             std::move(uh)});
  out.truth = std::move(gt);
  return out;
}

double oracle_predict(const GroundTruth& gt, const std::vector<int>& source_fibers,
                      const std::int32_t* idx) {
  const std::size_t k = source_fibers.size();
  if (k < 2) throw ValidationError("oracle: source needs at least 2 fibers");
  const std::size_t r = gt.factors.empty() ? 0 : gt.factors[0].cols;
  const auto& ops = kernels::active();

  std::vector<const double*> vecs(k);
  for (std::size_t j = 0; j < k; ++j)
    vecs[j] = gt.factors_for(source_fibers[j]).row(static_cast<std::size_t>(idx[j]));

  if (k == 2) return ops.dot(vecs[0], vecs[1], r);
  double acc = 0.0;
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t q = p + 1; q < k; ++q) {
      const bool actor = source_fibers[p] == gt.actor_fiber || source_fibers[q] == gt.actor_fiber;
      acc += (actor ? 1.0 : gt.interaction_weight) * ops.dot(vecs[p], vecs[q], r);
    }
  return acc;
}

double oracle_rmse(const GroundTruth& gt, const Schema& schema, int source_id,
                   const std::vector<std::uint32_t>& cells) {
  const DataSource& src = schema.source(source_id);
  if (cells.empty()) throw ValidationError("oracle_rmse: no cells");
  double se = 0.0;
  for (std::uint32_t obs : cells) {
    const double e = oracle_predict(gt, src.fibers, src.index_tuple(obs)) - src.values[obs];
    se += e * e;
  }
  return std::sqrt(se / static_cast<double>(cells.size()));
}

void save_ground_truth_json(const GroundTruth& gt, const std::string& path) {
  nlohmann::json j;
  j["interaction_weight"] = gt.interaction_weight;
  j["actor_fiber"] = gt.actor_fiber;
  j["fibers"] = nlohmann::json::array();
  for (std::size_t i = 0; i < gt.fiber_ids.size(); ++i) {
    const Mat& t = gt.factors[i];
    j["fibers"].push_back({{"id", gt.fiber_ids[i]},
                           {"rows", t.rows},
                           {"cols", t.cols},
                           {"data", t.data}});
  }
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out << j.dump() << "\n";
  if (!out) throw ValidationError("write failed on " + path);
}

GroundTruth load_ground_truth_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str());
    GroundTruth gt;
    gt.interaction_weight = j.at("interaction_weight").get<double>();
    gt.actor_fiber = j.at("actor_fiber").get<int>();
    for (const auto& f : j.at("fibers")) {
      gt.fiber_ids.push_back(f.at("id").get<int>());
      Mat t(f.at("rows").get<std::size_t>(), f.at("cols").get<std::size_t>());
      t.data = f.at("data").get<std::vector<double>>();
      if (t.data.size() != t.rows * t.cols)
        throw ValidationError(path + ": factor data length mismatch");
      gt.factors.push_back(std::move(t));
    }
    return gt;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": ground truth JSON error: " + e.what());
  }
}

}  // namespace jima
