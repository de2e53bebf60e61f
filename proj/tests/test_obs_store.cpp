#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "jima/common.hpp"
#include "jima/obs_store.hpp"

using namespace jima;

namespace {

FiberSpec fib(int id, std::size_t dim, const char* label) {
  FiberSpec f;
  f.fiber_id = id;
  f.dim = dim;
  f.label = label;
  return f;
}

DataSource src(int id, const char* label, std::vector<int> fibers) {
  DataSource s;
  s.source_id = id;
  s.label = label;
  s.fibers = std::move(fibers);
  return s;
}

void add3(DataSource& s, int a, int b, int c, double v) {
  std::int32_t idx[3] = {a, b, c};
  s.add(idx, v);
}

void add2(DataSource& s, int a, int b, double v) {
  std::int32_t idx[2] = {a, b};
  s.add(idx, v);
}

// The three-level schema used throughout: one order-3 source plus the three
// order-2 sources over its fiber pairs.
Schema small_three_level() {
  auto utb = src(0, "utb", {0, 1, 2});
  auto ut = src(1, "ut", {0, 1});
  auto ub = src(2, "ub", {0, 2});
  auto tb = src(3, "tb", {1, 2});
  add3(utb, 0, 0, 0, 1.5);
  add3(utb, 1, 2, 3, -0.25);
  add2(ut, 0, 1, 2.0);
  add2(ub, 1, 3, 0.5);
  add2(tb, 2, 0, -1.0);
  return build_schema({fib(0, 2, "user"), fib(1, 3, "top"), fib(2, 4, "bottom")},
                      {utb, ut, ub, tb});
}

}  // namespace

TEST_CASE("schema construction for the standard shapes") {
  Schema s3 = small_three_level();
  CHECK(s3.fiber_count() == 3);
  CHECK(s3.source_count() == 4);
  CHECK(s3.source(0).order() == 3);
  CHECK(s3.source(3).order() == 2);
  CHECK(s3.fiber(2).dim == 4);
  CHECK(s3.fiber_position(1) == 1);
  CHECK(s3.source_position(2) == 2);
  CHECK(s3.find_source(3) != nullptr);
  CHECK(s3.find_source(17) == nullptr);

  // Degenerate single matrix: L = 1.
  Schema m = build_schema({fib(0, 5, "row"), fib(1, 6, "col")}, {src(0, "m", {0, 1})});
  CHECK(m.source_count() == 1);

  // Four fibers, five sources (order-4 plus four order-2 side sources).
  Schema s4 = build_schema(
      {fib(0, 4, "user"), fib(1, 3, "top"), fib(2, 3, "bottom"), fib(3, 2, "hat")},
      {src(0, "utbh", {0, 1, 2, 3}), src(1, "ut", {0, 1}), src(2, "ub", {0, 2}),
       src(3, "tb", {1, 2}), src(4, "uh", {0, 3})});
  CHECK(s4.fiber_count() == 4);
  CHECK(s4.source_count() == 5);
}

TEST_CASE("schema validation rejects malformed inputs") {
  auto ok_fibers = std::vector<FiberSpec>{fib(0, 2, "a"), fib(1, 2, "b"), fib(2, 2, "c")};

  CHECK_THROWS_AS(build_schema({}, {}), ValidationError);
  CHECK_THROWS_AS(build_schema({fib(0, 0, "a")}, {}), ValidationError);
  CHECK_THROWS_AS(build_schema({fib(0, 2, "a"), fib(0, 3, "b")}, {}), ValidationError);

  // Source over an unknown fiber id.
  CHECK_THROWS_AS(build_schema(ok_fibers, {src(0, "s", {0, 9})}), ValidationError);
  // Order below 2 and above K.
  CHECK_THROWS_AS(build_schema(ok_fibers, {src(0, "s", {0})}), ValidationError);
  CHECK_THROWS_AS(build_schema(ok_fibers, {src(0, "s", {0, 1, 2, 0})}), ValidationError);
  // Repeated fiber inside one source.
  CHECK_THROWS_AS(build_schema(ok_fibers, {src(0, "s", {0, 0})}), ValidationError);
  // Duplicate source ids.
  CHECK_THROWS_AS(build_schema(ok_fibers, {src(0, "s", {0, 1}), src(0, "t", {0, 2})}),
                  ValidationError);
  // Two sources over the same fiber set, regardless of listed order.
  CHECK_THROWS_AS(build_schema(ok_fibers, {src(0, "s", {0, 1}), src(1, "t", {1, 0})}),
                  ValidationError);
  // Source count cap 2^K - K - 1: with K = 2 only one source is allowed.
  CHECK_THROWS_AS(build_schema({fib(0, 2, "a"), fib(1, 2, "b")},
                               {src(0, "s", {0, 1}), src(1, "t", {0, 1})}),
                  ValidationError);

  // Cell validation: out-of-range index, non-finite value, duplicate tuple.
  auto bad_idx = src(0, "s", {0, 1});
  add2(bad_idx, 0, 2, 1.0);
  CHECK_THROWS_AS(build_schema(ok_fibers, {bad_idx}), ValidationError);

  auto bad_val = src(0, "s", {0, 1});
  add2(bad_val, 0, 0, std::numeric_limits<double>::quiet_NaN());
  CHECK_THROWS_AS(build_schema(ok_fibers, {bad_val}), ValidationError);

  auto dup = src(0, "s", {0, 1});
  add2(dup, 1, 1, 1.0);
  add2(dup, 1, 1, 2.0);
  CHECK_THROWS_AS(build_schema(ok_fibers, {dup}), ValidationError);
}

TEST_CASE("density is observed count over full tensor size") {
  Schema s = small_three_level();
  CHECK(density(s, 0) == doctest::Approx(2.0 / (2 * 3 * 4)));
  CHECK(density(s, 1) == doctest::Approx(1.0 / 6.0));

  // The offline-study headline figure: 16254 cells at shape (386,50,50)
  // is a 1.68% fill.
  auto utb = src(0, "utb", {0, 1, 2});
  for (int t = 0; t < 16254; ++t) add3(utb, t / (50 * 50), (t / 50) % 50, t % 50, 1.0);
  Schema big = build_schema({fib(0, 386, "user"), fib(1, 50, "top"), fib(2, 50, "bottom")}, {utb});
  double d = density(big, 0);
  CHECK(d == doctest::Approx(16254.0 / 965000.0));
  CHECK(100.0 * d == doctest::Approx(1.68).epsilon(0.01));
}

TEST_CASE("split sizes follow the rounding rule exactly") {
  auto ut = src(0, "ut", {0, 1});
  for (int i = 0; i < 10; ++i) add2(ut, i / 5, i % 5, i * 0.1);
  Schema s = build_schema({fib(0, 2, "u"), fib(1, 5, "t")}, {ut});

  SplitPlan p = split(s, 0.2, 7);
  CHECK(p.for_source(0).train.size() == 2);
  CHECK(p.for_source(0).test.size() == 8);

  CHECK_THROWS_AS(split(s, 0.0, 1), ValidationError);
  CHECK_THROWS_AS(split(s, 1.0, 1), ValidationError);
  CHECK_THROWS_AS(split(s, -0.3, 1), ValidationError);
  CHECK_THROWS_AS(p.for_source(42), ValidationError);

  auto empty = src(0, "ut", {0, 1});
  Schema se = build_schema({fib(0, 2, "u"), fib(1, 5, "t")}, {empty});
  CHECK_THROWS_AS(split(se, 0.5, 1), ValidationError);
}

TEST_CASE("split partitions every source for a sweep of fractions") {
  auto ut = src(0, "ut", {0, 1});
  auto utb = src(1, "utb", {0, 1, 2});
  for (int i = 0; i < 137; ++i) add2(ut, i / 12, i % 12, 0.01 * i);
  for (int i = 0; i < 53; ++i) add3(utb, i % 12, i / 12, i % 3, 1.0 + i);
  Schema s = build_schema({fib(0, 12, "u"), fib(1, 12, "t"), fib(2, 3, "b")}, {utb, ut});

  for (int pct = 1; pct <= 9; ++pct) {
    double f = pct / 10.0;
    SplitPlan p = split(s, f, 1000 + pct);
    for (std::size_t si = 0; si < p.source_ids.size(); ++si) {
      const DataSource& d = s.source(p.source_ids[si]);
      const SourceSplit& sp = p.splits[si];
      CHECK(sp.train.size() == (std::size_t)std::lround(f * (double)d.count()));
      CHECK(sp.train.size() + sp.test.size() == d.count());

      std::vector<std::uint32_t> all(sp.train);
      all.insert(all.end(), sp.test.begin(), sp.test.end());
      std::sort(all.begin(), all.end());
      for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);
    }
  }
}

TEST_CASE("split is deterministic in the seed and varies across seeds") {
  auto ut = src(0, "ut", {0, 1});
  for (int i = 0; i < 120; ++i) add2(ut, i / 12, i % 12, 0.5);
  Schema s = build_schema({fib(0, 10, "u"), fib(1, 12, "t")}, {ut});

  SplitPlan a = split(s, 0.5, 99);
  SplitPlan b = split(s, 0.5, 99);
  CHECK(a.for_source(0).train == b.for_source(0).train);
  CHECK(a.for_source(0).test == b.for_source(0).test);

  SplitPlan c = split(s, 0.5, 100);
  CHECK(a.for_source(0).train != c.for_source(0).train);
}

TEST_CASE("minibatches partition the index list per epoch") {
  std::vector<std::uint32_t> idx = {10, 11, 12, 13, 14};

  auto batches = minibatches(0, idx, 2, 5, 0);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].size() == 2);
  CHECK(batches[1].size() == 2);
  CHECK(batches[2].size() == 1);

  auto one = minibatches(0, idx, 64, 5, 0);
  REQUIRE(one.size() == 1);
  CHECK(one[0].size() == 5);

  // Each epoch covers the list exactly once.
  auto flatten_sorted = [](const std::vector<std::vector<std::uint32_t>>& bs) {
    std::vector<std::uint32_t> flat;
    for (const auto& b : bs) flat.insert(flat.end(), b.begin(), b.end());
    std::sort(flat.begin(), flat.end());
    return flat;
  };
  std::vector<std::uint32_t> want = idx;
  std::sort(want.begin(), want.end());
  CHECK(flatten_sorted(batches) == want);

  // Different epochs reshuffle (witnessed on a list long enough that a
  // permutation collision is implausible), same membership.
  std::vector<std::uint32_t> longer(60);
  for (std::uint32_t i = 0; i < 60; ++i) longer[i] = i;
  auto e0 = minibatches(0, longer, 60, 5, 0);
  auto e1 = minibatches(0, longer, 60, 5, 1);
  CHECK(e0[0] != e1[0]);
  CHECK(flatten_sorted(e0) == flatten_sorted(e1));

  // Replaying an epoch gives the same batches; sources are decorrelated.
  CHECK(minibatches(0, longer, 7, 5, 3) == minibatches(0, longer, 7, 5, 3));
  CHECK(minibatches(0, longer, 60, 5, 0)[0] != minibatches(1, longer, 60, 5, 0)[0]);

  CHECK_THROWS_AS(minibatches(0, {}, 2, 5, 0), ValidationError);
  CHECK_THROWS_AS(minibatches(0, idx, 0, 5, 0), ValidationError);
}

TEST_CASE("observation CSV round-trips exactly") {
  Schema s = small_three_level();
  const std::string path = "obs_store_roundtrip.csv";
  save_observations_csv(path, s);

  // Same structure, no cells; loading refills it.
  Schema fresh = build_schema(
      {fib(0, 2, "user"), fib(1, 3, "top"), fib(2, 4, "bottom")},
      {src(0, "utb", {0, 1, 2}), src(1, "ut", {0, 1}), src(2, "ub", {0, 2}), src(3, "tb", {1, 2})});
  load_observations_csv(path, fresh);

  for (const auto& d : s.sources) {
    const DataSource& got = fresh.source(d.source_id);
    CHECK(got.values == d.values);
    CHECK(got.flat_indices == d.flat_indices);
  }
  std::remove(path.c_str());
}

TEST_CASE("observation CSV rows parse as source id, indices, value") {
  // Source 1 spans three fibers here, so its rows carry three indices.
  Schema s = build_schema(
      {fib(0, 2, "user"), fib(1, 2, "top"), fib(2, 2, "bottom")},
      {src(1, "utb", {0, 1, 2}), src(2, "ut", {0, 1})});

  const std::string path = "obs_store_rows.csv";
  {
    std::ofstream out(path);
    out << "1,0,0,0,3.5\n";
    out << "2,1,0,-2\n";
  }
  load_observations_csv(path, s);
  REQUIRE(s.source(1).count() == 1);
  CHECK(s.source(1).index_tuple(0)[0] == 0);
  CHECK(s.source(1).index_tuple(0)[1] == 0);
  CHECK(s.source(1).index_tuple(0)[2] == 0);
  CHECK(s.source(1).values[0] == 3.5);
  REQUIRE(s.source(2).count() == 1);
  CHECK(s.source(2).values[0] == -2.0);

  auto expect_reject = [&](const char* row) {
    Schema t = build_schema(
        {fib(0, 2, "user"), fib(1, 2, "top"), fib(2, 2, "bottom")},
        {src(1, "utb", {0, 1, 2}), src(2, "ut", {0, 1})});
    std::ofstream out(path);
    out << row << "\n";
    out.close();
    CHECK_THROWS_AS(load_observations_csv(path, t), ValidationError);
  };
  expect_reject("1,0,0,3.5");        // too few indices for an order-3 source
  expect_reject("7,0,0,1.0");        // unknown source
  expect_reject("1,0,0,5,1.0");      // index beyond the fiber dim
  expect_reject("1,0,0,zero,1.0");   // non-numeric index
  expect_reject("1,0,0,0,abc");      // non-numeric value
  expect_reject("1,0,0,0,1.0,9");    // trailing field
  std::remove(path.c_str());

  // Duplicate cell across two loads of the same row.
  {
    std::ofstream out(path);
    out << "2,0,0,1.0\n2,0,0,1.5\n";
  }
  Schema t = build_schema({fib(0, 2, "user"), fib(1, 2, "top")}, {src(2, "ut", {0, 1})});
  CHECK_THROWS_AS(load_observations_csv(path, t), ValidationError);
  std::remove(path.c_str());
}

TEST_CASE("schema JSON round-trips structure and loss kinds") {
  auto utb = src(0, "utb", {0, 1, 2});
  auto clicks = src(1, "clicks", {0, 1});
  clicks.loss_kind = LossKind::cross_entropy;
  Schema s = build_schema({fib(0, 4, "user"), fib(1, 3, "top"), fib(2, 2, "bottom")},
                          {utb, clicks});

  Schema back = schema_from_json_text(schema_to_json_text(s));
  REQUIRE(back.fiber_count() == 3);
  REQUIRE(back.source_count() == 2);
  CHECK(back.fiber(0).dim == 4);
  CHECK(back.fiber(1).label == "top");
  CHECK(back.source(0).fibers == std::vector<int>{0, 1, 2});
  CHECK(back.source(0).loss_kind == LossKind::squared);
  CHECK(back.source(1).loss_kind == LossKind::cross_entropy);
  CHECK(back.source(1).label == "clicks");

  CHECK_THROWS_AS(schema_from_json_text("not json"), ValidationError);
  CHECK_THROWS_AS(schema_from_json_text("{\"fibers\": []}"), ValidationError);
}
