#include "jima/ratings_ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "jima/simgen.hpp"

namespace jima {

namespace {

struct RawFile {
  int source_id;
  std::string label;
  std::vector<int> fibers;
  std::string path;
  std::vector<std::int32_t> flat;  // order entries per row
  std::vector<double> values;
};

// Reads `source_id,idx...,value` rows of fixed arity; only bounds against
// the declared source id are enforced here, the rest happens in
// build_schema.
void read_rating_file(RawFile& f) {
  std::ifstream in(f.path);
  if (!in) throw ValidationError("cannot read " + f.path);
  const std::size_t k = f.fibers.size();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const char* p = line.data();
    const char* end = p + line.size();
    auto bad = [&](const std::string& why) {
      return ValidationError(f.path + ":" + std::to_string(lineno) + ": " + why);
    };
    auto parse_int = [&](std::int64_t& v) {
      auto [np, ec] = std::from_chars(p, end, v);
      if (ec != std::errc()) throw bad("expected an integer");
      p = np;
    };
    auto expect_comma = [&]() {
      if (p == end || *p != ',') throw bad("expected ','");
      ++p;
    };
    std::int64_t sid;
    parse_int(sid);
    if (sid != f.source_id)
      throw bad("row belongs to source " + std::to_string(sid) + " but this file holds the " +
                f.label + " source (" + std::to_string(f.source_id) + ")");
    for (std::size_t j = 0; j < k; ++j) {
      expect_comma();
      std::int64_t v;
      parse_int(v);
      if (v < 0 || v > INT32_MAX) throw bad("index out of range");
      f.flat.push_back(static_cast<std::int32_t>(v));
    }
    expect_comma();
    double value;
    auto [np, ec] = std::from_chars(p, end, value);
    if (ec != std::errc()) throw bad("expected a number");
    if (np != end) throw bad("trailing characters");
    f.values.push_back(value);
  }
}

}  // namespace

RatingsLayout ratings_layout_from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": manifest parse error: " + e.what());
  }
  RatingsLayout lay;
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  auto resolve = [&](const std::string& p) {
    if (p.empty()) return p;
    std::filesystem::path fp(p);
    return fp.is_absolute() ? p : (base / fp).string();
  };
  try {
    lay.utb_path = resolve(j.at("utb").get<std::string>());
    lay.ut_path = resolve(j.at("ut").get<std::string>());
    lay.ub_path = resolve(j.at("ub").get<std::string>());
    lay.tb_path = resolve(j.value("tb", std::string()));
    if (j.contains("scale")) {
      lay.scale.lo = j["scale"].value("lo", 1.0);
      lay.scale.hi = j["scale"].value("hi", 5.0);
      lay.scale.step = j["scale"].value("step", 0.5);
    }
    if (j.contains("dims")) {
      lay.n_users = j["dims"].value("users", std::size_t{0});
      lay.n_tops = j["dims"].value("tops", std::size_t{0});
      lay.n_bottoms = j["dims"].value("bottoms", std::size_t{0});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": manifest structure error: " + e.what());
  }
  return lay;
}

RatingsData load_ratings(const RatingsLayout& layout) {
  if (!(layout.scale.lo < layout.scale.hi))
    throw ValidationError("ratings: scale must have lo < hi");

  std::vector<RawFile> files;
  files.push_back({1, "utb", {0, 1, 2}, layout.utb_path, {}, {}});
  files.push_back({2, "ut", {0, 1}, layout.ut_path, {}, {}});
  files.push_back({3, "ub", {0, 2}, layout.ub_path, {}, {}});
  if (!layout.tb_path.empty()) files.push_back({4, "tb", {1, 2}, layout.tb_path, {}, {}});

  for (RawFile& f : files) read_rating_file(f);
  // An empty tb file degrades to the three-source layout.
  if (files.size() == 4 && files.back().values.empty()) files.pop_back();

  for (const RawFile& f : files)
    for (double v : f.values)
      if (v < layout.scale.lo || v > layout.scale.hi)
        throw ValidationError(f.path + ": value " + format_double(v) + " outside the (" +
                              format_double(layout.scale.lo) + ", " +
                              format_double(layout.scale.hi) + ") rating scale");

  // Fiber dims: declared, or max index + 1 over every file touching them.
  std::size_t dims[3] = {layout.n_users, layout.n_tops, layout.n_bottoms};
  const bool infer = layout.n_users == 0 || layout.n_tops == 0 || layout.n_bottoms == 0;
  if (infer) {
    std::size_t seen[3] = {0, 0, 0};
    for (const RawFile& f : files) {
      const std::size_t k = f.fibers.size();
      for (std::size_t i = 0; i < f.values.size(); ++i)
        for (std::size_t j = 0; j < k; ++j) {
          const auto fid = static_cast<std::size_t>(f.fibers[j]);
          seen[fid] = std::max(seen[fid], static_cast<std::size_t>(f.flat[i * k + j]) + 1);
        }
    }
    for (int fid = 0; fid < 3; ++fid)
      if (dims[fid] == 0) dims[fid] = seen[fid];
  }

  std::vector<DataSource> sources;
  for (RawFile& f : files) {
    DataSource s;
    s.source_id = f.source_id;
    s.label = f.label;
    s.fibers = f.fibers;
    s.flat_indices = std::move(f.flat);
    s.values = std::move(f.values);
    sources.push_back(std::move(s));
  }

  RatingsData out;
  out.schema = build_schema(
      {{0, dims[0], "user"}, {1, dims[1], "top"}, {2, dims[2], "bottom"}}, std::move(sources));
  for (const DataSource& s : out.schema.sources)
    out.densities.push_back(density(out.schema, s.source_id));
  return out;
}

void write_synthetic_ratings(const SyntheticRatingsSpec& spec, const std::string& dir) {
  if (spec.n_users < 1 || spec.n_tops < 1 || spec.n_bottoms < 1)
    throw ValidationError("synthetic ratings: entity counts must be >= 1");
  const std::size_t full[4] = {spec.n_users * spec.n_tops * spec.n_bottoms,
                               spec.n_users * spec.n_tops, spec.n_users * spec.n_bottoms,
                               spec.n_tops * spec.n_bottoms};
  const std::size_t want[4] = {spec.utb_cells, spec.ut_cells, spec.ub_cells, spec.tb_cells};
  for (int s = 0; s < 4; ++s)
    if (want[s] > full[s])
      throw ValidationError("synthetic ratings: requested more cells than the shape holds");

  std::filesystem::create_directories(dir);

  // Low-rank structure mapped onto the rating grid.
  GroundTruth gt;
  gt.fiber_ids = {0, 1, 2};
  gt.interaction_weight = 2.0;
  std::mt19937_64 frng(mix_seed(spec.seed, hash_name("synthetic-ratings")));
  std::normal_distribution<double> nd(0.0, 1.0);
  const std::size_t dims[3] = {spec.n_users, spec.n_tops, spec.n_bottoms};
  const std::size_t r = 5;
  for (int fid = 0; fid < 3; ++fid) {
    Mat t(dims[fid], r);
    for (double& x : t.data) x = nd(frng);
    gt.factors.push_back(std::move(t));
  }

  const RatingScale& sc = spec.scale;
  const double mid = 0.5 * (sc.lo + sc.hi);
  auto to_scale = [&](double y, double sd) {
    double v = mid + y * (0.2 * (sc.hi - sc.lo) / sd);
    v = std::clamp(v, sc.lo, sc.hi);
    if (sc.step > 0.0) v = sc.lo + std::round((v - sc.lo) / sc.step) * sc.step;
    return std::min(v, sc.hi);
  };

  struct Role {
    int source_id;
    const char* label;
    std::vector<int> fibers;
    double sd;  // scale of the noise-free values, for the affine map
  };
  // sd of the composite is sqrt(r*(1+1+w^2)) with w=2; matrices are sqrt(r).
  const std::vector<Role> roles = {{1, "utb", {0, 1, 2}, std::sqrt(5.0 * 6.0)},
                                   {2, "ut", {0, 1}, std::sqrt(5.0)},
                                   {3, "ub", {0, 2}, std::sqrt(5.0)},
                                   {4, "tb", {1, 2}, std::sqrt(5.0)}};

  nlohmann::json manifest;
  for (int s = 0; s < 4; ++s) {
    const Role& role = roles[s];
    const std::size_t k = role.fibers.size();
    std::size_t shape[4] = {0, 0, 0, 0};
    for (std::size_t j = 0; j < k; ++j) shape[j] = dims[role.fibers[j]];

    std::vector<std::uint64_t> linear(full[s]);
    std::iota(linear.begin(), linear.end(), 0ull);
    std::mt19937_64 rng(
        mix_seed(mix_seed(spec.seed, hash_name("ratings-cells")), static_cast<std::uint64_t>(s)));
    std::shuffle(linear.begin(), linear.end(), rng);
    linear.resize(want[s]);
    std::sort(linear.begin(), linear.end());

    const std::string fname = std::string(role.label) + ".csv";
    std::ofstream out(std::filesystem::path(dir) / fname);
    if (!out) throw ValidationError("cannot write " + fname + " in " + dir);
    std::int32_t idx[4];
    for (std::uint64_t cell : linear) {
      std::uint64_t rest = cell;
      for (std::size_t j = k; j-- > 0;) {
        idx[j] = static_cast<std::int32_t>(rest % shape[j]);
        rest /= shape[j];
      }
      const double y = oracle_predict(gt, role.fibers, idx);
      out << role.source_id;
      for (std::size_t j = 0; j < k; ++j) out << ',' << idx[j];
      out << ',' << format_double(to_scale(y, role.sd)) << '\n';
    }
    manifest[role.label] = fname;
  }
  manifest["scale"] = {{"lo", sc.lo}, {"hi", sc.hi}, {"step", sc.step}};
  manifest["dims"] = {{"users", spec.n_users}, {"tops", spec.n_tops}, {"bottoms", spec.n_bottoms}};
  manifest["note"] = "synthetic pipeline-test data, not measured ratings";
  std::ofstream mout(std::filesystem::path(dir) / "manifest.json");
  if (!mout) throw ValidationError("cannot write manifest.json in " + dir);
  mout << manifest.dump(2) << "\n";
}

}  // namespace jima
