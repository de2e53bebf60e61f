#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <numeric>
#include <vector>

#include "jima/common.hpp"
#include "jima/obs_store.hpp"
#include "jima/simgen.hpp"

using namespace jima;

namespace {

std::vector<std::uint32_t> all_cells(const DataSource& s) {
  std::vector<std::uint32_t> v(s.count());
  std::iota(v.begin(), v.end(), 0u);
  return v;
}

double dot(const double* a, const double* b, std::size_t r) {
  double acc = 0.0;
  for (std::size_t c = 0; c < r; ++c) acc += a[c] * b[c];
  return acc;
}

}  // namespace

TEST_CASE("three-way generator emits the full shape") {
  SimSpec3 spec;
  spec.n_users = 6;
  spec.n_tops = 4;
  spec.n_bottoms = 5;
  spec.seed = 9;
  ThreeWayData d = gen_three_way(spec);

  CHECK(d.schema.fiber_count() == 3);
  REQUIRE(d.schema.source_count() == 4);
  CHECK(d.schema.source(1).count() == 6 * 4 * 5);  // utb, every cell
  CHECK(d.schema.source(2).count() == 6 * 4);      // ut
  CHECK(d.schema.source(3).count() == 6 * 5);      // ub
  CHECK(d.schema.source(4).count() == 4 * 5);      // tb
  CHECK(d.schema.source(1).order() == 3);
  CHECK(density(d.schema, 1) == doctest::Approx(1.0));

  REQUIRE(d.truth.factors.size() == 3);
  CHECK(d.truth.factors_for(0).rows == 6);
  CHECK(d.truth.factors_for(1).rows == 4);
  CHECK(d.truth.factors_for(2).cols == 5);

  // Determinism in the seed.
  ThreeWayData d2 = gen_three_way(spec);
  CHECK(d2.schema.source(1).values == d.schema.source(1).values);
  spec.seed = 10;
  CHECK(gen_three_way(spec).schema.source(1).values != d.schema.source(1).values);

  SimSpec3 bad = spec;
  bad.n_users = 0;
  CHECK_THROWS_AS(gen_three_way(bad), ValidationError);
  bad = spec;
  bad.noise_sd = -0.1;
  CHECK_THROWS_AS(gen_three_way(bad), ValidationError);
}

TEST_CASE("noise-free three-way values obey the generator algebra") {
  SimSpec3 spec;
  spec.n_users = 5;
  spec.n_tops = 4;
  spec.n_bottoms = 3;
  spec.noise_sd = 0.0;
  spec.seed = 17;
  ThreeWayData d = gen_three_way(spec);

  const std::size_t r = 5;
  const Mat& X = d.truth.factors_for(0);
  const Mat& U = d.truth.factors_for(1);
  const Mat& V = d.truth.factors_for(2);

  // Order-2 sources are plain inner products; tb is noiseless always.
  const DataSource& ut = d.schema.source(2);
  for (std::uint32_t o = 0; o < ut.count(); ++o) {
    const std::int32_t* t = ut.index_tuple(o);
    CHECK(ut.values[o] == doctest::Approx(dot(X.row(t[0]), U.row(t[1]), r)).epsilon(1e-12));
  }
  const DataSource& tb = d.schema.source(4);
  for (std::uint32_t o = 0; o < tb.count(); ++o) {
    const std::int32_t* t = tb.index_tuple(o);
    CHECK(tb.values[o] == doctest::Approx(dot(U.row(t[0]), V.row(t[1]), r)).epsilon(1e-12));
  }

  // Composite = sum of its parts: utb(i,t,b) - ut(i,t) - ub(i,b) = 2 tb(t,b).
  const DataSource& utb = d.schema.source(1);
  const DataSource& ub = d.schema.source(3);
  auto find_value = [](const DataSource& s, std::vector<std::int32_t> want) {
    for (std::uint32_t o = 0; o < s.count(); ++o) {
      const std::int32_t* t = s.index_tuple(o);
      bool same = true;
      for (std::size_t j = 0; j < want.size(); ++j) same &= (t[j] == want[j]);
      if (same) return s.values[o];
    }
    throw std::runtime_error("cell not found");
  };
  for (std::uint32_t o = 0; o < utb.count(); ++o) {
    const std::int32_t* t = utb.index_tuple(o);
    double lhs = utb.values[o] - find_value(ut, {t[0], t[1]}) - find_value(ub, {t[0], t[2]});
    double rhs = 2.0 * find_value(tb, {t[1], t[2]});
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10).scale(1.0));
  }
}

TEST_CASE("oracle error is zero without noise and near the noise level with it") {
  SimSpec3 clean;
  clean.n_users = 12;
  clean.n_tops = 10;
  clean.n_bottoms = 8;
  clean.noise_sd = 0.0;
  clean.seed = 3;
  ThreeWayData d = gen_three_way(clean);
  for (int sid = 1; sid <= 4; ++sid) {
    const DataSource& s = d.schema.source(sid);
    CHECK(oracle_rmse(d.truth, d.schema, sid, all_cells(s)) < 1e-10);
  }

  SimSpec3 noisy = clean;
  noisy.n_users = 30;
  noisy.n_tops = 25;
  noisy.n_bottoms = 20;
  noisy.noise_sd = 0.1;
  ThreeWayData n = gen_three_way(noisy);
  for (int sid : {1, 2, 3}) {
    double rm = oracle_rmse(n.truth, n.schema, sid, all_cells(n.schema.source(sid)));
    CHECK(rm > 0.08);
    CHECK(rm < 0.12);
  }
  // The item-item matrix carries no noise by construction.
  CHECK(oracle_rmse(n.truth, n.schema, 4, all_cells(n.schema.source(4))) < 1e-10);

  // oracle_predict on an order-2 source is the inner product itself.
  const std::int32_t probe[2] = {1, 2};
  double want = dot(n.truth.factors_for(0).row(1), n.truth.factors_for(1).row(2), 5);
  CHECK(oracle_predict(n.truth, {0, 1}, probe) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("four-way generator emits five sources over four fibers") {
  SimSpec4 spec;
  spec.n_users = 6;
  spec.n_tops = 3;
  spec.n_bottoms = 4;
  spec.n_hats = 2;
  spec.seed = 21;
  FourWayData d = gen_four_way(spec);

  CHECK(d.schema.fiber_count() == 4);
  REQUIRE(d.schema.source_count() == 5);
  CHECK(d.schema.source(1).count() == 6 * 3 * 4 * 2);  // utbh
  CHECK(d.schema.source(1).order() == 4);
  CHECK(d.schema.source(2).count() == 6 * 3 * 4);      // utb
  CHECK(d.schema.source(3).count() == 6 * 3);          // ut
  CHECK(d.schema.source(4).count() == 6 * 4);          // ub
  CHECK(d.schema.source(5).count() == 6 * 2);          // uh
  REQUIRE(d.truth.factors.size() == 4);
  CHECK(d.truth.factors_for(3).rows == 2);

  SimSpec4 bad = spec;
  bad.n_hats = 0;
  CHECK_THROWS_AS(gen_four_way(bad), ValidationError);
}

TEST_CASE("noise-free four-way values follow the pairwise-sum law") {
  SimSpec4 spec;
  spec.n_users = 4;
  spec.n_tops = 3;
  spec.n_bottoms = 3;
  spec.n_hats = 2;
  spec.noise_sd = 0.0;
  spec.seed = 8;
  FourWayData d = gen_four_way(spec);

  const std::size_t r = 5;
  const Mat& X1 = d.truth.factors_for(0);
  const Mat& X2 = d.truth.factors_for(1);
  const Mat& X3 = d.truth.factors_for(2);
  const Mat& X4 = d.truth.factors_for(3);

  // utbh: user-item pairs weight 1, item-item pairs weight 2.
  const DataSource& utbh = d.schema.source(1);
  for (std::uint32_t o = 0; o < utbh.count(); ++o) {
    const std::int32_t* t = utbh.index_tuple(o);
    const double* x1 = X1.row(t[0]);
    const double* x2 = X2.row(t[1]);
    const double* x3 = X3.row(t[2]);
    const double* x4 = X4.row(t[3]);
    double want = dot(x1, x2, r) + dot(x1, x3, r) + dot(x1, x4, r) +
                  2.0 * (dot(x2, x3, r) + dot(x2, x4, r) + dot(x3, x4, r));
    CHECK(utbh.values[o] == doctest::Approx(want).epsilon(1e-10).scale(1.0));
    CHECK(oracle_predict(d.truth, {0, 1, 2, 3}, t) == doctest::Approx(want).epsilon(1e-12));
  }

  // Dropping the hat removes exactly the hat's pair terms:
  // utbh(i,t,b,h) - utb(i,t,b) = x1'x4 + 2 x2'x4 + 2 x3'x4.
  const DataSource& utb = d.schema.source(2);
  for (std::uint32_t o = 0; o < utbh.count(); ++o) {
    const std::int32_t* t = utbh.index_tuple(o);
    double utb_val = 0.0;
    bool found = false;
    for (std::uint32_t p = 0; p < utb.count(); ++p) {
      const std::int32_t* q = utb.index_tuple(p);
      if (q[0] == t[0] && q[1] == t[1] && q[2] == t[2]) {
        utb_val = utb.values[p];
        found = true;
        break;
      }
    }
    REQUIRE(found);
    const double* x1 = X1.row(t[0]);
    const double* x2 = X2.row(t[1]);
    const double* x3 = X3.row(t[2]);
    const double* x4 = X4.row(t[3]);
    double want = dot(x1, x4, r) + 2.0 * dot(x2, x4, r) + 2.0 * dot(x3, x4, r);
    CHECK(utbh.values[o] - utb_val == doctest::Approx(want).epsilon(1e-9).scale(1.0));
  }

  // Every four-way source is noiseless here, so the oracle is exact on all.
  for (int sid = 1; sid <= 5; ++sid) {
    CHECK(oracle_rmse(d.truth, d.schema, sid, all_cells(d.schema.source(sid))) < 1e-10);
  }
}

TEST_CASE("latent coordinates are standard normal in aggregate") {
  SimSpec3 spec;
  spec.n_users = 2000;
  spec.n_tops = 2000;
  spec.n_bottoms = 10;
  spec.seed = 77;
  ThreeWayData d = gen_three_way(spec);

  std::size_t n = 0;
  double sum = 0.0, sumsq = 0.0;
  for (int fid : {0, 1}) {
    const Mat& f = d.truth.factors_for(fid);
    for (double v : f.data) {
      sum += v;
      sumsq += v * v;
      ++n;
    }
  }
  double mean = sum / (double)n;
  double var = sumsq / (double)n - mean * mean;
  // 5 standard errors: se(mean) = 1/sqrt(n), se(var) ~ sqrt(2/n).
  double se_mean = 1.0 / std::sqrt((double)n);
  double se_var = std::sqrt(2.0 / (double)n);
  CHECK(std::abs(mean) < 5.0 * se_mean);
  CHECK(std::abs(var - 1.0) < 5.0 * se_var);
}

TEST_CASE("ground truth JSON round-trips the factors exactly") {
  SimSpec3 spec;
  spec.n_users = 3;
  spec.n_tops = 2;
  spec.n_bottoms = 2;
  spec.seed = 5;
  ThreeWayData d = gen_three_way(spec);

  const std::string path = "simgen_truth_roundtrip.json";
  save_ground_truth_json(d.truth, path);
  GroundTruth back = load_ground_truth_json(path);
  std::remove(path.c_str());

  CHECK(back.fiber_ids == d.truth.fiber_ids);
  CHECK(back.interaction_weight == d.truth.interaction_weight);
  CHECK(back.actor_fiber == d.truth.actor_fiber);
  REQUIRE(back.factors.size() == d.truth.factors.size());
  for (std::size_t i = 0; i < back.factors.size(); ++i) {
    CHECK(back.factors[i] == d.truth.factors[i]);
  }
  CHECK_THROWS_AS(load_ground_truth_json("missing_truth.json"), ValidationError);
}
