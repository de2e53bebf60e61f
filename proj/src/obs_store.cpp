#include "jima/obs_store.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

namespace jima {

namespace {

std::string describe_source(const DataSource& s) {
  return "source " + std::to_string(s.source_id) + (s.label.empty() ? "" : " (" + s.label + ")");
}

// Sorted fiber-id set, used to detect two sources spanning the same fibers.
std::vector<int> fiber_signature(const DataSource& s) {
  std::vector<int> sig = s.fibers;
  std::sort(sig.begin(), sig.end());
  return sig;
}

// Packs an index tuple into a single integer via mixed radix over the fiber
// dims. Returns false if the shape is too large to pack (then the caller
// falls back to lexicographic tuple comparison).
bool pack_cells(const DataSource& s, const std::vector<std::size_t>& dims,
                std::vector<std::uint64_t>& out) {
  std::uint64_t prod = 1;
  for (std::size_t d : dims) {
    if (d != 0 && prod > UINT64_MAX / d) return false;
    prod *= d;
  }
  const std::size_t k = s.order();
  out.resize(s.count());
  for (std::size_t i = 0; i < s.count(); ++i) {
    const std::int32_t* t = s.index_tuple(i);
    std::uint64_t key = 0;
    for (std::size_t j = 0; j < k; ++j) key = key * dims[j] + static_cast<std::uint64_t>(t[j]);
    out[i] = key;
  }
  return true;
}

void check_no_duplicates(const DataSource& s, const std::vector<std::size_t>& dims) {
  std::vector<std::uint64_t> keys;
  if (pack_cells(s, dims, keys)) {
    std::sort(keys.begin(), keys.end());
    if (std::adjacent_find(keys.begin(), keys.end()) != keys.end())
      throw ValidationError(describe_source(s) + ": duplicate index tuple");
    return;
  }
  const std::size_t k = s.order();
  std::vector<std::uint32_t> idx(s.count());
  std::iota(idx.begin(), idx.end(), 0u);
  auto tuple_less = [&](std::uint32_t a, std::uint32_t b) {
    const std::int32_t* ta = s.index_tuple(a);
    const std::int32_t* tb = s.index_tuple(b);
    return std::lexicographical_compare(ta, ta + k, tb, tb + k);
  };
  std::sort(idx.begin(), idx.end(), tuple_less);
  for (std::size_t i = 1; i < idx.size(); ++i) {
    const std::int32_t* ta = s.index_tuple(idx[i - 1]);
    const std::int32_t* tb = s.index_tuple(idx[i]);
    if (std::equal(ta, ta + k, tb)) throw ValidationError(describe_source(s) + ": duplicate index tuple");
  }
}

std::vector<std::size_t> source_dims(const Schema& schema, const DataSource& s) {
  std::vector<std::size_t> dims;
  dims.reserve(s.order());
  for (int fid : s.fibers) dims.push_back(schema.fiber(fid).dim);
  return dims;
}

LossKind loss_from_string(const std::string& s) {
  if (s == "squared") return LossKind::squared;
  if (s == "cross_entropy") return LossKind::cross_entropy;
  throw ValidationError("unknown loss kind '" + s + "'");
}

const char* loss_to_string(LossKind k) {
  return k == LossKind::squared ? "squared" : "cross_entropy";
}

}  // namespace

std::size_t Schema::fiber_position(int fiber_id) const {
  for (std::size_t i = 0; i < fibers.size(); ++i)
    if (fibers[i].fiber_id == fiber_id) return i;
  throw ValidationError("unknown fiber id " + std::to_string(fiber_id));
}

std::size_t Schema::source_position(int source_id) const {
  for (std::size_t i = 0; i < sources.size(); ++i)
    if (sources[i].source_id == source_id) return i;
  throw ValidationError("unknown source id " + std::to_string(source_id));
}

const DataSource* Schema::find_source(int source_id) const {
  for (const DataSource& s : sources)
    if (s.source_id == source_id) return &s;
  return nullptr;
}

void validate_source_cells(const Schema& schema, const DataSource& src) {
  const std::vector<std::size_t> dims = source_dims(schema, src);
  const std::size_t k = src.order();
  if (src.flat_indices.size() != src.values.size() * k)
    throw ValidationError(describe_source(src) + ": index storage inconsistent with value count");
  for (std::size_t i = 0; i < src.count(); ++i) {
    const std::int32_t* t = src.index_tuple(i);
    for (std::size_t j = 0; j < k; ++j) {
      if (t[j] < 0 || static_cast<std::size_t>(t[j]) >= dims[j])
        throw ValidationError(describe_source(src) + ": index " + std::to_string(t[j]) +
                              " out of range for fiber " + std::to_string(src.fibers[j]) +
                              " (dim " + std::to_string(dims[j]) + ")");
    }
    if (!std::isfinite(src.values[i]))
      throw ValidationError(describe_source(src) + ": non-finite value");
  }
  check_no_duplicates(src, dims);
}

Schema build_schema(std::vector<FiberSpec> fibers, std::vector<DataSource> sources) {
  if (fibers.empty()) throw ValidationError("schema needs at least one fiber");
  for (std::size_t i = 0; i < fibers.size(); ++i) {
    if (fibers[i].dim < 1)
      throw ValidationError("fiber " + std::to_string(fibers[i].fiber_id) + ": dim must be >= 1");
    for (std::size_t j = i + 1; j < fibers.size(); ++j)
      if (fibers[i].fiber_id == fibers[j].fiber_id)
        throw ValidationError("duplicate fiber id " + std::to_string(fibers[i].fiber_id));
  }

  const std::size_t K = fibers.size();
  // Sources may span any subset of >= 2 fibers, each subset at most once.
  const std::size_t max_sources =
      K >= 64 ? SIZE_MAX : ((std::size_t{1} << K) - K - 1);
  if (sources.size() > max_sources)
    throw ValidationError("too many sources: " + std::to_string(sources.size()) + " > " +
                          std::to_string(max_sources) + " possible fiber subsets of size >= 2");

  Schema schema;
  schema.fibers = std::move(fibers);
  schema.sources = std::move(sources);

  std::vector<std::vector<int>> signatures;
  for (std::size_t i = 0; i < schema.sources.size(); ++i) {
    const DataSource& s = schema.sources[i];
    if (s.order() < 2)
      throw ValidationError(describe_source(s) + ": needs at least 2 fibers");
    if (s.order() > K)
      throw ValidationError(describe_source(s) + ": order exceeds fiber count");
    for (int fid : s.fibers) schema.fiber_position(fid);  // throws if unknown
    std::vector<int> sig = fiber_signature(s);
    if (std::adjacent_find(sig.begin(), sig.end()) != sig.end())
      throw ValidationError(describe_source(s) + ": repeated fiber within one source");
    for (std::size_t j = i + 1; j < schema.sources.size(); ++j)
      if (s.source_id == schema.sources[j].source_id)
        throw ValidationError("duplicate source id " + std::to_string(s.source_id));
    if (std::find(signatures.begin(), signatures.end(), sig) != signatures.end())
      throw ValidationError(describe_source(s) + ": another source spans the same fiber set");
    signatures.push_back(std::move(sig));
  }

  for (const DataSource& s : schema.sources) validate_source_cells(schema, s);
  return schema;
}

double density(const Schema& schema, int source_id) {
  const DataSource& s = schema.source(source_id);
  double cells = 1.0;
  for (int fid : s.fibers) cells *= static_cast<double>(schema.fiber(fid).dim);
  return static_cast<double>(s.count()) / cells;
}

const SourceSplit& SplitPlan::for_source(int source_id) const {
  for (std::size_t i = 0; i < source_ids.size(); ++i)
    if (source_ids[i] == source_id) return splits[i];
  throw ValidationError("split plan has no source id " + std::to_string(source_id));
}

SplitPlan split(const Schema& schema, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ValidationError("train_fraction must lie strictly inside (0,1)");

  SplitPlan plan;
  plan.train_fraction = train_fraction;
  plan.seed = seed;
  for (const DataSource& s : schema.sources) {
    const std::size_t n = s.count();
    if (n == 0) throw ValidationError(describe_source(s) + ": cannot split an empty source");
    std::vector<std::uint32_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0u);
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(s.source_id)));
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
    SourceSplit ss;
    ss.train.assign(perm.begin(), perm.begin() + n_train);
    ss.test.assign(perm.begin() + n_train, perm.end());
    plan.source_ids.push_back(s.source_id);
    plan.splits.push_back(std::move(ss));
  }
  return plan;
}

std::vector<std::vector<std::uint32_t>> minibatches(int source_id,
                                                    const std::vector<std::uint32_t>& index_list,
                                                    std::size_t batch_size, std::uint64_t seed,
                                                    std::uint64_t epoch) {
  if (index_list.empty()) throw ValidationError("minibatches: empty index list");
  if (batch_size < 1) throw ValidationError("minibatches: batch_size must be >= 1");

  std::vector<std::uint32_t> perm = index_list;
  std::mt19937_64 rng(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(source_id)), epoch));
  std::shuffle(perm.begin(), perm.end(), rng);

  std::vector<std::vector<std::uint32_t>> batches;
  for (std::size_t at = 0; at < perm.size(); at += batch_size) {
    const std::size_t end = std::min(at + batch_size, perm.size());
    batches.emplace_back(perm.begin() + at, perm.begin() + end);
  }
  return batches;
}

void save_observations_csv(const std::string& path, const Schema& schema) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  std::string line;
  for (const DataSource& s : schema.sources) {
    const std::size_t k = s.order();
    for (std::size_t i = 0; i < s.count(); ++i) {
      line.clear();
      line += std::to_string(s.source_id);
      const std::int32_t* t = s.index_tuple(i);
      for (std::size_t j = 0; j < k; ++j) {
        line += ',';
        line += std::to_string(t[j]);
      }
      line += ',';
      line += format_double(s.values[i]);
      line += '\n';
      out << line;
    }
  }
  if (!out) throw ValidationError("write failed on " + path);
}

void load_observations_csv(const std::string& path, Schema& schema) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path);

  std::vector<bool> touched(schema.sources.size(), false);
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::int32_t> idx;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const char* p = line.data();
    const char* end = p + line.size();
    auto bad = [&](const std::string& why) {
      return ValidationError(path + ":" + std::to_string(lineno) + ": " + why);
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
    const DataSource* found = nullptr;
    std::size_t spos = 0;
    for (std::size_t i = 0; i < schema.sources.size(); ++i)
      if (schema.sources[i].source_id == sid) {
        found = &schema.sources[i];
        spos = i;
        break;
      }
    if (!found) throw bad("unknown source id " + std::to_string(sid));

    idx.clear();
    for (std::size_t j = 0; j < found->order(); ++j) {
      expect_comma();
      std::int64_t v;
      parse_int(v);
      if (v < 0 || v > INT32_MAX) throw bad("index out of range");
      idx.push_back(static_cast<std::int32_t>(v));
    }
    expect_comma();
    double value;
    auto [np, ec] = std::from_chars(p, end, value);
    if (ec != std::errc()) throw bad("expected a number");
    p = np;
    if (p != end) throw bad("trailing characters");

    schema.sources[spos].add(idx.data(), value);
    touched[spos] = true;
  }

  for (std::size_t i = 0; i < schema.sources.size(); ++i)
    if (touched[i]) validate_source_cells(schema, schema.sources[i]);
}

Schema schema_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("schema JSON parse error: ") + e.what());
  }
  std::vector<FiberSpec> fibers;
  std::vector<DataSource> sources;
  try {
    for (const auto& f : j.at("fibers")) {
      FiberSpec fs;
      fs.fiber_id = f.at("id").get<int>();
      fs.dim = f.at("dim").get<std::size_t>();
      fs.label = f.value("label", std::string());
      fibers.push_back(std::move(fs));
    }
    for (const auto& s : j.at("sources")) {
      DataSource ds;
      ds.source_id = s.at("id").get<int>();
      ds.label = s.value("label", std::string());
      ds.fibers = s.at("fibers").get<std::vector<int>>();
      ds.loss_kind = loss_from_string(s.value("loss", std::string("squared")));
      sources.push_back(std::move(ds));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("schema JSON structure error: ") + e.what());
  }
  return build_schema(std::move(fibers), std::move(sources));
}

Schema schema_from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return schema_from_json_text(ss.str());
}

std::string schema_to_json_text(const Schema& schema) {
  nlohmann::json j;
  j["fibers"] = nlohmann::json::array();
  for (const FiberSpec& f : schema.fibers)
    j["fibers"].push_back({{"id", f.fiber_id}, {"dim", f.dim}, {"label", f.label}});
  j["sources"] = nlohmann::json::array();
  for (const DataSource& s : schema.sources)
    j["sources"].push_back({{"id", s.source_id},
                            {"label", s.label},
                            {"fibers", s.fibers},
                            {"loss", loss_to_string(s.loss_kind)}});
  return j.dump(2) + "\n";
}

void save_schema_json(const Schema& schema, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out << schema_to_json_text(schema);
  if (!out) throw ValidationError("write failed on " + path);
}

}  // namespace jima
