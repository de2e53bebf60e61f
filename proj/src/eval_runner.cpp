#include "jima/eval_runner.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "jima/baselines.hpp"
#include "jima/ratings_ingest.hpp"

namespace jima {

namespace {

bool valid_name(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.'))
      return false;
  return true;
}

void parse_method(const nlohmann::json& j, MethodSpec& ms) {
  ms.name = j.at("name").get<std::string>();
  if (!valid_name(ms.name))
    throw ValidationError("method name '" + ms.name + "' must be alphanumeric/_-.");
  ms.kind = j.value("kind", std::string());
  if (j.contains("sources")) {
    for (const auto& s : j["sources"]) {
      if (s.is_string())
        ms.sources.push_back(s.get<std::string>());
      else
        ms.sources.push_back(std::to_string(s.get<long long>()));
    }
  }
  if (j.contains("use_interactions")) ms.use_interactions = j["use_interactions"].get<bool>();
  ms.r = j.value("r", ms.r);
  ms.lambda = j.value("lambda", ms.lambda);
  ms.embedding_lambda = j.value("embedding_lambda", ms.embedding_lambda);
  ms.adam.learning_rate = j.value("learning_rate", ms.adam.learning_rate);
  ms.adam.beta1 = j.value("beta1", ms.adam.beta1);
  ms.adam.beta2 = j.value("beta2", ms.adam.beta2);
  ms.adam.epsilon = j.value("epsilon", ms.adam.epsilon);
  ms.epochs = j.value("epochs", ms.epochs);
  ms.batch_size = j.value("batch_size", ms.batch_size);
  if (j.contains("hidden")) ms.hidden = j["hidden"].get<std::vector<std::size_t>>();
  if (j.contains("clamp")) {
    const auto c = j["clamp"].get<std::vector<double>>();
    if (c.size() != 2) throw ValidationError("method clamp must be [lo, hi]");
    ms.clamp_range = {c[0], c[1]};
  }
  ms.cp_sweeps = j.value("sweeps", ms.cp_sweeps);
  ms.cp_tol = j.value("tol", ms.cp_tol);
  ms.cp_ridge = j.value("ridge", ms.cp_ridge);
}

void parse_generator(const nlohmann::json& j, GeneratorSpec& g) {
  g.kind = j.at("kind").get<std::string>();
  if (g.kind == "sim3") {
    g.sim3.n_users = j.at("n_users").get<std::size_t>();
    g.sim3.n_tops = j.at("n_tops").get<std::size_t>();
    g.sim3.n_bottoms = j.at("n_bottoms").get<std::size_t>();
    g.sim3.r = j.value("r", g.sim3.r);
    g.sim3.noise_sd = j.value("noise_sd", g.sim3.noise_sd);
    g.sim3.interaction_weight = j.value("interaction_weight", g.sim3.interaction_weight);
  } else if (g.kind == "sim4") {
    g.sim4.n_users = j.at("n_users").get<std::size_t>();
    g.sim4.n_tops = j.at("n_tops").get<std::size_t>();
    g.sim4.n_bottoms = j.at("n_bottoms").get<std::size_t>();
    g.sim4.n_hats = j.at("n_hats").get<std::size_t>();
    g.sim4.r = j.value("r", g.sim4.r);
    g.sim4.noise_sd = j.value("noise_sd", g.sim4.noise_sd);
    g.sim4.interaction_weight = j.value("interaction_weight", g.sim4.interaction_weight);
  } else if (g.kind == "files") {
    g.schema_path = j.at("schema").get<std::string>();
    g.observations_path = j.at("observations").get<std::string>();
  } else if (g.kind == "ratings") {
    g.ratings_manifest = j.at("manifest").get<std::string>();
  } else {
    throw ValidationError("unknown generator kind '" + g.kind + "'");
  }
}

struct RepData {
  Schema schema;
};

RepData generate_data(const GeneratorSpec& g, std::uint64_t seed) {
  RepData d;
  if (g.kind == "sim3") {
    SimSpec3 s = g.sim3;
    s.seed = seed;
    d.schema = std::move(gen_three_way(s).schema);
  } else if (g.kind == "sim4") {
    SimSpec4 s = g.sim4;
    s.seed = seed;
    d.schema = std::move(gen_four_way(s).schema);
  } else if (g.kind == "files") {
    d.schema = schema_from_json_file(g.schema_path);
    load_observations_csv(g.observations_path, d.schema);
  } else if (g.kind == "ratings") {
    d.schema = std::move(load_ratings(ratings_layout_from_json_file(g.ratings_manifest)).schema);
  } else {
    throw ValidationError("unknown generator kind '" + g.kind + "'");
  }
  return d;
}

struct Resolved {
  enum class Kind { gmi, mf, cp, nf } kind = Kind::gmi;
  std::vector<int> source_ids;
  bool use_interactions = false;
};

int first_source_of_order2(const Schema& schema) {
  for (const DataSource& s : schema.sources)
    if (s.order() == 2) return s.source_id;
  throw ValidationError("no order-2 source in the schema");
}

int first_source_of_max_order(const Schema& schema) {
  std::size_t best = 0;
  int id = -1;
  for (const DataSource& s : schema.sources)
    if (s.order() > best) {
      best = s.order();
      id = s.source_id;
    }
  if (id < 0) throw ValidationError("schema has no sources");
  return id;
}

std::vector<int> all_source_ids(const Schema& schema) {
  std::vector<int> ids;
  for (const DataSource& s : schema.sources) ids.push_back(s.source_id);
  return ids;
}

int source_by_label_or_id(const Schema& schema, const std::string& key) {
  for (const DataSource& s : schema.sources)
    if (s.label == key) return s.source_id;
  try {
    const int id = std::stoi(key);
    schema.source_position(id);
    return id;
  } catch (const std::invalid_argument&) {
  } catch (const std::out_of_range&) {
  }
  throw ValidationError("no source labeled '" + key + "'");
}

// Config errors here are fatal for the whole experiment: they throw
// ValidationError rather than becoming per-replication failures.
Resolved resolve_method(const MethodSpec& ms, const Schema& schema) {
  Resolved r;
  std::string kind = ms.kind;
  bool inter = true;
  std::vector<int> default_sources;

  if (kind.empty()) {
    if (ms.name == "gmi") {
      kind = "gmi";
    } else if (ms.name == "mf") {
      kind = "mf";
    } else if (ms.name == "cp" || ms.name == "tf" || ms.name == "tf_cpd") {
      kind = "cp";
    } else if (ms.name == "jima") {
      kind = "nf";
      inter = true;
      default_sources = all_source_ids(schema);
    } else if (ms.name == "ntf") {
      kind = "nf";
      inter = false;
      default_sources = {first_source_of_max_order(schema)};
    } else if (ms.name == "ncf") {
      kind = "nf";
      inter = false;
      default_sources = {first_source_of_order2(schema)};
    } else if (ms.name == "nf_x") {
      kind = "nf";
      inter = true;
      default_sources = {first_source_of_max_order(schema)};
    } else if (ms.name == "nf_joint") {
      kind = "nf";
      inter = false;
      default_sources = all_source_ids(schema);
    } else {
      throw ValidationError("method '" + ms.name +
                            "' is not a known method name; give it an explicit kind");
    }
  }

  if (kind == "gmi") {
    r.kind = Resolved::Kind::gmi;
    default_sources = all_source_ids(schema);
  } else if (kind == "mf") {
    r.kind = Resolved::Kind::mf;
    if (default_sources.empty()) default_sources = {first_source_of_order2(schema)};
  } else if (kind == "cp") {
    r.kind = Resolved::Kind::cp;
    if (default_sources.empty()) default_sources = {first_source_of_max_order(schema)};
  } else if (kind == "nf") {
    r.kind = Resolved::Kind::nf;
    if (default_sources.empty()) default_sources = all_source_ids(schema);
  } else {
    throw ValidationError("method '" + ms.name + "': unknown kind '" + kind + "'");
  }

  r.source_ids = default_sources;
  if (!ms.sources.empty()) {
    r.source_ids.clear();
    for (const std::string& key : ms.sources)
      r.source_ids.push_back(source_by_label_or_id(schema, key));
  }
  r.use_interactions = ms.use_interactions.value_or(inter);

  if (r.source_ids.empty()) throw ValidationError("method '" + ms.name + "': no sources");
  if (r.kind == Resolved::Kind::mf) {
    if (r.source_ids.size() != 1 || schema.source(r.source_ids[0]).order() != 2)
      throw ValidationError("method '" + ms.name + "': mf needs exactly one order-2 source");
  }
  if (r.kind == Resolved::Kind::cp) {
    if (r.source_ids.size() != 1 || schema.source(r.source_ids[0]).order() < 3)
      throw ValidationError("method '" + ms.name + "': cp needs exactly one order >= 3 source");
  }
  return r;
}

void score_predictions(const DataSource& src, const std::vector<std::uint32_t>& test,
                       const std::function<double(const std::int32_t*)>& predict, double& rmse,
                       double& mae) {
  if (test.empty()) throw ValidationError("empty test set for source " + src.label);
  double se = 0.0, ae = 0.0;
  for (std::uint32_t obs : test) {
    const double e = predict(src.index_tuple(obs)) - src.values[obs];
    se += e * e;
    ae += std::abs(e);
  }
  const auto n = static_cast<double>(test.size());
  rmse = std::sqrt(se / n);
  mae = ae / n;
}

std::vector<RawRecord> run_method(const MethodSpec& ms, const Resolved& rm, const Schema& schema,
                                  const SplitPlan& plan, std::uint64_t rep_seed,
                                  std::size_t rep) {
  const std::uint64_t method_seed = mix_seed(rep_seed, hash_name(ms.name));
  std::vector<RawRecord> recs;
  auto add = [&](int sid, double rmse, double mae) {
    RawRecord rec;
    rec.method = ms.name;
    rec.source_id = sid;
    rec.source_label = schema.source(sid).label;
    rec.rep = rep;
    rec.rmse = rmse;
    rec.mae = mae;
    recs.push_back(std::move(rec));
  };

  const auto t0 = std::chrono::steady_clock::now();
  switch (rm.kind) {
    case Resolved::Kind::gmi: {
      for (int sid : rm.source_ids) {
        const DataSource& src = schema.source(sid);
        const GmiModel g = gmi_fit(src, plan.for_source(sid).train);
        double rmse, mae;
        score_predictions(src, plan.for_source(sid).test,
                          [&](const std::int32_t*) { return g.mean; }, rmse, mae);
        add(sid, rmse, mae);
      }
      break;
    }
    case Resolved::Kind::mf: {
      const int sid = rm.source_ids[0];
      MfConfig cfg;
      cfg.r = ms.r;
      cfg.lambda = ms.lambda;
      cfg.adam = ms.adam;
      cfg.epochs = ms.epochs;
      cfg.batch_size = ms.batch_size;
      cfg.seed = method_seed;
      const MfModel m = mf_fit(schema, sid, plan.for_source(sid).train, cfg);
      double rmse, mae;
      score_predictions(schema.source(sid), plan.for_source(sid).test,
                        [&](const std::int32_t* t) { return mf_predict(m, t[0], t[1]); }, rmse,
                        mae);
      add(sid, rmse, mae);
      break;
    }
    case Resolved::Kind::cp: {
      const int sid = rm.source_ids[0];
      CpConfig cfg;
      cfg.r = ms.r;
      cfg.max_sweeps = ms.cp_sweeps;
      cfg.tol = ms.cp_tol;
      cfg.ridge = ms.cp_ridge;
      cfg.seed = method_seed;
      const CpModel m = cp_fit(schema, sid, plan.for_source(sid).train, cfg);
      double rmse, mae;
      score_predictions(schema.source(sid), plan.for_source(sid).test,
                        [&](const std::int32_t* t) { return cp_predict(m, t); }, rmse, mae);
      add(sid, rmse, mae);
      break;
    }
    case Resolved::Kind::nf: {
      ModelConfig mc;
      mc.r = ms.r;
      mc.use_interactions = rm.use_interactions;
      mc.sources = rm.source_ids;
      mc.head_hidden = ms.hidden;
      mc.head_lambda = ms.lambda;
      mc.embedding_lambda = ms.embedding_lambda;
      mc.adam = ms.adam;
      mc.epochs = ms.epochs;
      mc.batch_size = ms.batch_size;
      mc.seed = method_seed;
      mc.clamp_range = ms.clamp_range;
      JointModel model = init_joint_model(schema, mc);
      train(model, schema, plan);
      for (const SourceEval& ev : evaluate(model, schema, plan)) add(ev.source_id, ev.rmse, ev.mae);
      break;
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (RawRecord& rec : recs) rec.time_s = secs;
  return recs;
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  const auto n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  if (v.size() < 2) return {mean, 0.0};
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / (n - 1.0))};
}

std::string fmt3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

}  // namespace

ExperimentSpec experiment_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("experiment JSON parse error: ") + e.what());
  }
  ExperimentSpec spec;
  try {
    spec.name = j.value("name", std::string("experiment"));
    parse_generator(j.at("generator"), spec.generator);
    for (const auto& mj : j.at("methods")) {
      MethodSpec ms;
      parse_method(mj, ms);
      spec.methods.push_back(std::move(ms));
    }
    spec.train_fraction = j.value("train_fraction", spec.train_fraction);
    spec.replications = j.value("replications", spec.replications);
    spec.base_seed = j.value("base_seed", spec.base_seed);
    if (j.contains("metrics")) {
      spec.metric_rmse = false;
      spec.metric_mae = false;
      for (const auto& m : j["metrics"]) {
        const auto s = m.get<std::string>();
        if (s == "rmse")
          spec.metric_rmse = true;
        else if (s == "mae")
          spec.metric_mae = true;
        else
          throw ValidationError("unknown metric '" + s + "'");
      }
    }
    spec.time_limit_s = j.value("time_limit_s", spec.time_limit_s);
    spec.workers = j.value("workers", spec.workers);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("experiment JSON structure error: ") + e.what());
  }
  return spec;
}

ExperimentSpec experiment_from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return experiment_from_json_text(ss.str());
}

const ResultCell* ResultTable::find(const std::string& method,
                                    const std::string& source_label) const {
  for (const ResultCell& c : cells)
    if (c.method == method && c.source_label == source_label) return &c;
  return nullptr;
}

ResultTable run_experiment(const ExperimentSpec& spec) {
  if (spec.replications < 1) throw ValidationError("experiment: replications must be >= 1");
  if (spec.methods.empty()) throw ValidationError("experiment: no methods");
  if (!spec.metric_rmse && !spec.metric_mae)
    throw ValidationError("experiment: no metrics requested");
  for (std::size_t i = 0; i < spec.methods.size(); ++i)
    for (std::size_t j = i + 1; j < spec.methods.size(); ++j)
      if (spec.methods[i].name == spec.methods[j].name)
        throw ValidationError("experiment: duplicate method name '" + spec.methods[i].name + "'");

  const std::size_t R = spec.replications;
  ResultTable table;
  table.experiment = spec.name;
  table.replications = R;
  for (const MethodSpec& ms : spec.methods) table.method_order.push_back(ms.name);

  std::vector<std::vector<RawRecord>> per_rep(R);
  std::once_flag source_once;
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;

  auto run_rep = [&](std::size_t rep) {
    const std::uint64_t rep_seed = spec.base_seed + rep;
    RepData data = generate_data(spec.generator, rep_seed);
    const SplitPlan plan = split(data.schema, spec.train_fraction, rep_seed);
    std::call_once(source_once, [&]() {
      for (const DataSource& s : data.schema.sources)
        table.source_order.emplace_back(s.source_id, s.label);
    });

    const auto rep_t0 = std::chrono::steady_clock::now();
    for (const MethodSpec& ms : spec.methods) {
      const Resolved rm = resolve_method(ms, data.schema);  // config errors abort the run
      if (spec.time_limit_s > 0.0) {
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - rep_t0).count();
        if (elapsed > spec.time_limit_s) {
          RawRecord rec;
          rec.method = ms.name;
          rec.source_id = -1;
          rec.source_label = "*";
          rec.rep = rep;
          rec.failed = true;
          rec.error = "replication time limit exceeded";
          per_rep[rep].push_back(std::move(rec));
          continue;
        }
      }
      try {
        auto recs = run_method(ms, rm, data.schema, plan, rep_seed, rep);
        for (RawRecord& r : recs) per_rep[rep].push_back(std::move(r));
      } catch (const std::exception& e) {
        RawRecord rec;
        rec.method = ms.name;
        rec.source_id = -1;
        rec.source_label = "*";
        rec.rep = rep;
        rec.failed = true;
        rec.error = e.what();
        per_rep[rep].push_back(std::move(rec));
      }
    }
  };

  auto worker = [&]() {
    for (;;) {
      const std::size_t rep = next.fetch_add(1);
      if (rep >= R) return;
      {
        std::lock_guard<std::mutex> lk(err_mu);
        if (first_error) return;
      }
      try {
        run_rep(rep);
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mu);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  const std::size_t workers = std::min(std::max<std::size_t>(spec.workers, 1), R);
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  for (std::size_t rep = 0; rep < R; ++rep)
    for (RawRecord& r : per_rep[rep]) table.raw.push_back(std::move(r));

  for (const std::string& method : table.method_order) {
    for (const auto& [sid, label] : table.source_order) {
      std::vector<double> rmses, maes, times;
      for (const RawRecord& r : table.raw) {
        if (r.failed || r.method != method || r.source_id != sid) continue;
        rmses.push_back(r.rmse);
        maes.push_back(r.mae);
        times.push_back(r.time_s);
      }
      if (rmses.empty()) continue;
      ResultCell c;
      c.method = method;
      c.source_id = sid;
      c.source_label = label;
      c.r_effective = rmses.size();
      std::tie(c.rmse_mean, c.rmse_std) = mean_std(rmses);
      std::tie(c.mae_mean, c.mae_std) = mean_std(maes);
      std::tie(c.time_mean_s, c.time_std_s) = mean_std(times);
      table.cells.push_back(std::move(c));
    }
  }
  return table;
}

double method_failure_fraction(const ResultTable& table, const std::string& method) {
  if (table.replications == 0) return 0.0;
  std::vector<std::size_t> failed_reps;
  for (const RawRecord& r : table.raw)
    if (r.failed && r.method == method) failed_reps.push_back(r.rep);
  std::sort(failed_reps.begin(), failed_reps.end());
  failed_reps.erase(std::unique(failed_reps.begin(), failed_reps.end()), failed_reps.end());
  return static_cast<double>(failed_reps.size()) / static_cast<double>(table.replications);
}

bool results_metrics_equal(const ResultTable& a, const ResultTable& b) {
  if (a.method_order != b.method_order || a.source_order != b.source_order) return false;
  if (a.raw.size() != b.raw.size() || a.cells.size() != b.cells.size()) return false;
  for (std::size_t i = 0; i < a.raw.size(); ++i) {
    const RawRecord& x = a.raw[i];
    const RawRecord& y = b.raw[i];
    if (x.method != y.method || x.source_id != y.source_id || x.rep != y.rep ||
        x.failed != y.failed)
      return false;
    if (!x.failed && (x.rmse != y.rmse || x.mae != y.mae)) return false;
  }
  for (std::size_t i = 0; i < a.cells.size(); ++i) {
    const ResultCell& x = a.cells[i];
    const ResultCell& y = b.cells[i];
    if (x.method != y.method || x.source_id != y.source_id ||
        x.r_effective != y.r_effective || x.rmse_mean != y.rmse_mean ||
        x.rmse_std != y.rmse_std || x.mae_mean != y.mae_mean || x.mae_std != y.mae_std)
      return false;
  }
  return true;
}

void write_results_csv(const ResultTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out << "method,source_id,source,rmse_mean,rmse_std,mae_mean,mae_std,time_mean_s,"
         "time_std_s,r_effective\n";
  for (const ResultCell& c : table.cells) {
    out << c.method << ',' << c.source_id << ',' << c.source_label << ','
        << format_double(c.rmse_mean) << ','
        << format_double(c.rmse_std) << ',' << format_double(c.mae_mean) << ','
        << format_double(c.mae_std) << ',' << format_double(c.time_mean_s) << ','
        << format_double(c.time_std_s) << ',' << c.r_effective << '\n';
  }
  if (!out) throw ValidationError("write failed on " + path);
}

ResultTable read_results_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path);
  ResultTable table;
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path + ": empty results file");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t at = 0;
    while (true) {
      const std::size_t comma = line.find(',', at);
      if (comma == std::string::npos) {
        fields.push_back(line.substr(at));
        break;
      }
      fields.push_back(line.substr(at, comma - at));
      at = comma + 1;
    }
    if (fields.size() != 10)
      throw ValidationError(path + ":" + std::to_string(lineno) + ": expected 10 columns");
    ResultCell c;
    c.method = fields[0];
    c.source_label = fields[2];
    try {
      c.source_id = std::stoi(fields[1]);
      c.rmse_mean = std::stod(fields[3]);
      c.rmse_std = std::stod(fields[4]);
      c.mae_mean = std::stod(fields[5]);
      c.mae_std = std::stod(fields[6]);
      c.time_mean_s = std::stod(fields[7]);
      c.time_std_s = std::stod(fields[8]);
      c.r_effective = static_cast<std::size_t>(std::stoull(fields[9]));
    } catch (const std::exception&) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": malformed number");
    }
    if (std::find(table.method_order.begin(), table.method_order.end(), c.method) ==
        table.method_order.end())
      table.method_order.push_back(c.method);
    bool have_source = false;
    for (const auto& [sid, label] : table.source_order) have_source |= sid == c.source_id;
    if (!have_source) table.source_order.emplace_back(c.source_id, c.source_label);
    table.cells.push_back(std::move(c));
  }
  return table;
}

void write_raw_csv(const ResultTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out << "method,source,rep,rmse,mae,time_s,error\n";
  for (const RawRecord& r : table.raw) {
    out << r.method << ',' << r.source_label << ',' << r.rep << ',';
    if (r.failed)
      out << ",," << format_double(r.time_s) << ',' << r.error << '\n';
    else
      out << format_double(r.rmse) << ',' << format_double(r.mae) << ','
          << format_double(r.time_s) << ",\n";
  }
  if (!out) throw ValidationError("write failed on " + path);
}

std::string render_text_table(const ResultTable& table) {
  std::ostringstream os;
  os << "experiment: " << table.experiment << "   replications: " << table.replications << "\n";

  struct Grid {
    std::string title;
    bool with_time;
  };
  std::vector<Grid> grids = {{"RMSE, mean (std)", true}, {"MAE, mean (std)", false}};

  for (const Grid& grid : grids) {
    const bool rmse = grid.title[0] == 'R';
    // column labels: method, one per source, optionally time
    std::vector<std::string> headers{"method"};
    for (const auto& [sid, label] : table.source_order) headers.push_back(label);
    if (grid.with_time) headers.push_back("time_s");

    std::vector<std::vector<std::string>> rows;
    for (const std::string& method : table.method_order) {
      std::vector<std::string> row{method};
      double tmean = 0.0, tstd = 0.0;
      bool any = false;
      for (const auto& [sid, label] : table.source_order) {
        const ResultCell* c = table.find(method, label);
        if (!c) {
          row.push_back("");
          continue;
        }
        const double mean = rmse ? c->rmse_mean : c->mae_mean;
        const double std_ = rmse ? c->rmse_std : c->mae_std;
        row.push_back(fmt3(mean) + " (" + fmt3(std_) + ")");
        tmean = c->time_mean_s;
        tstd = c->time_std_s;
        any = true;
      }
      if (grid.with_time) row.push_back(any ? fmt3(tmean) + " (" + fmt3(tstd) + ")" : "");
      rows.push_back(std::move(row));
    }

    std::vector<std::size_t> width(headers.size());
    for (std::size_t c = 0; c < headers.size(); ++c) {
      width[c] = headers[c].size();
      for (const auto& row : rows) width[c] = std::max(width[c], row[c].size());
    }
    os << "\n" << grid.title << "\n";
    auto emit = [&](const std::vector<std::string>& row) {
      for (std::size_t c = 0; c < row.size(); ++c) {
        os << row[c];
        if (c + 1 < row.size()) os << std::string(width[c] - row[c].size() + 2, ' ');
      }
      os << "\n";
    };
    emit(headers);
    for (const auto& row : rows) emit(row);
  }

  // note any failures
  bool any_failed = false;
  for (const RawRecord& r : table.raw) any_failed |= r.failed;
  if (any_failed) {
    os << "\nfailures:\n";
    for (const std::string& method : table.method_order) {
      const double f = method_failure_fraction(table, method);
      if (f > 0.0)
        os << "  " << method << ": failed in " << fmt3(100.0 * f) << "% of replications\n";
    }
  }
  return os.str();
}

}  // namespace jima
