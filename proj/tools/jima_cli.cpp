#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "jima/eval_runner.hpp"
#include "jima/gradcheck.hpp"
#include "jima/joint_model.hpp"
#include "jima/obs_store.hpp"
#include "jima/ratings_ingest.hpp"
#include "jima/simgen.hpp"

namespace fs = std::filesystem;

namespace {

nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw jima::ValidationError("cannot read " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw jima::ValidationError(path + ": JSON parse error: " + e.what());
  }
  return j;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw jima::ValidationError("cannot create directory " + dir + ": " + ec.message());
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

int cmd_simulate(const std::string& config, const std::string& out,
                 std::optional<std::uint64_t> seed) {
  const nlohmann::json j = load_json(config);
  const auto kind = j.at("kind").get<std::string>();
  ensure_dir(out);

  if (kind == "synthetic_ratings") {
    jima::SyntheticRatingsSpec spec;
    spec.n_users = j.value("n_users", spec.n_users);
    spec.n_tops = j.value("n_tops", spec.n_tops);
    spec.n_bottoms = j.value("n_bottoms", spec.n_bottoms);
    spec.utb_cells = j.value("utb_cells", spec.utb_cells);
    spec.ut_cells = j.value("ut_cells", spec.ut_cells);
    spec.ub_cells = j.value("ub_cells", spec.ub_cells);
    spec.tb_cells = j.value("tb_cells", spec.tb_cells);
    spec.seed = seed.value_or(j.value("seed", spec.seed));
    jima::write_synthetic_ratings(spec, out);
    std::cout << "wrote synthetic rating files + manifest.json to " << out << "\n";
    return 0;
  }

  jima::Schema schema;
  jima::GroundTruth truth;
  if (kind == "sim3") {
    jima::SimSpec3 s;
    s.n_users = j.at("n_users").get<std::size_t>();
    s.n_tops = j.at("n_tops").get<std::size_t>();
    s.n_bottoms = j.at("n_bottoms").get<std::size_t>();
    s.r = j.value("r", s.r);
    s.noise_sd = j.value("noise_sd", s.noise_sd);
    s.interaction_weight = j.value("interaction_weight", s.interaction_weight);
    s.seed = seed.value_or(j.value("seed", s.seed));
    auto data = jima::gen_three_way(s);
    schema = std::move(data.schema);
    truth = std::move(data.truth);
  } else if (kind == "sim4") {
    jima::SimSpec4 s;
    s.n_users = j.at("n_users").get<std::size_t>();
    s.n_tops = j.at("n_tops").get<std::size_t>();
    s.n_bottoms = j.at("n_bottoms").get<std::size_t>();
    s.n_hats = j.at("n_hats").get<std::size_t>();
    s.r = j.value("r", s.r);
    s.noise_sd = j.value("noise_sd", s.noise_sd);
    s.interaction_weight = j.value("interaction_weight", s.interaction_weight);
    s.seed = seed.value_or(j.value("seed", s.seed));
    auto data = jima::gen_four_way(s);
    schema = std::move(data.schema);
    truth = std::move(data.truth);
  } else {
    throw jima::ValidationError("simulate: unknown kind '" + kind + "'");
  }

  jima::save_schema_json(schema, join_path(out, "schema.json"));
  jima::save_observations_csv(join_path(out, "observations.csv"), schema);
  jima::save_ground_truth_json(truth, join_path(out, "ground_truth.json"));
  std::size_t cells = 0;
  for (const auto& s : schema.sources) cells += s.count();
  std::cout << "wrote schema.json, observations.csv (" << cells
            << " cells), ground_truth.json to " << out << "\n";
  return 0;
}

jima::ModelConfig model_config_from_json(const nlohmann::json& j) {
  jima::ModelConfig mc;
  mc.r = j.value("r", mc.r);
  mc.use_interactions = j.value("use_interactions", mc.use_interactions);
  if (j.contains("sources")) mc.sources = j["sources"].get<std::vector<int>>();
  if (j.contains("hidden")) mc.head_hidden = j["hidden"].get<std::vector<std::size_t>>();
  mc.head_lambda = j.value("lambda", mc.head_lambda);
  if (j.contains("lambdas")) mc.head_lambdas = j["lambdas"].get<std::vector<double>>();
  mc.embedding_lambda = j.value("embedding_lambda", mc.embedding_lambda);
  mc.adam.learning_rate = j.value("learning_rate", mc.adam.learning_rate);
  mc.adam.beta1 = j.value("beta1", mc.adam.beta1);
  mc.adam.beta2 = j.value("beta2", mc.adam.beta2);
  mc.adam.epsilon = j.value("epsilon", mc.adam.epsilon);
  mc.epochs = j.value("epochs", mc.epochs);
  mc.batch_size = j.value("batch_size", mc.batch_size);
  mc.seed = j.value("seed", mc.seed);
  if (j.contains("clamp")) {
    const auto c = j["clamp"].get<std::vector<double>>();
    if (c.size() != 2) throw jima::ValidationError("model clamp must be [lo, hi]");
    mc.clamp_range = {c[0], c[1]};
  }
  return mc;
}

// schema + observations + split parameters shared by train and evaluate
struct DataSetup {
  jima::Schema schema;
  jima::SplitPlan plan;
};

DataSetup load_data_and_split(const nlohmann::json& j) {
  DataSetup d;
  d.schema = jima::schema_from_json_file(j.at("schema").get<std::string>());
  jima::load_observations_csv(j.at("observations").get<std::string>(), d.schema);
  const double frac = j.value("train_fraction", 0.2);
  const auto split_seed = j.value("split_seed", std::uint64_t{0});
  d.plan = jima::split(d.schema, frac, split_seed);
  return d;
}

int cmd_train(const std::string& config, const std::string& out,
              std::optional<std::uint64_t> seed) {
  const nlohmann::json j = load_json(config);
  DataSetup d = load_data_and_split(j);
  jima::ModelConfig mc = model_config_from_json(j.value("model", nlohmann::json::object()));
  if (mc.sources.empty())
    for (const auto& s : d.schema.sources) mc.sources.push_back(s.source_id);
  if (seed) mc.seed = *seed;

  jima::JointModel m = jima::init_joint_model(d.schema, mc);
  const jima::TrainResult tr = jima::train(m, d.schema, d.plan);

  ensure_dir(out);
  jima::save_model(m, join_path(out, "model.bin"));
  std::ofstream loss(join_path(out, "train_loss.csv"));
  loss << "epoch,objective\n";
  for (std::size_t e = 0; e < tr.epoch_loss.size(); ++e)
    loss << e + 1 << ',' << jima::format_double(tr.epoch_loss[e]) << '\n';
  std::cout << "trained " << m.heads.size() << " heads for " << mc.epochs
            << " epochs; final objective "
            << (tr.epoch_loss.empty() ? 0.0 : tr.epoch_loss.back()) << "\n"
            << "wrote model.bin and train_loss.csv to " << out << "\n";
  return 0;
}

int cmd_evaluate(const std::string& config, const std::string& out) {
  const nlohmann::json j = load_json(config);
  DataSetup d = load_data_and_split(j);
  const jima::JointModel m = jima::load_model(j.at("model").get<std::string>());
  const auto evals = jima::evaluate(m, d.schema, d.plan);

  ensure_dir(out);
  std::ofstream csv(join_path(out, "metrics.csv"));
  csv << "source,rmse,mae,n_test\n";
  std::printf("%-12s %10s %10s %8s\n", "source", "rmse", "mae", "n_test");
  for (const auto& ev : evals) {
    csv << ev.label << ',' << jima::format_double(ev.rmse) << ','
        << jima::format_double(ev.mae) << ',' << ev.n_test << '\n';
    std::printf("%-12s %10.4f %10.4f %8zu\n", ev.label.c_str(), ev.rmse, ev.mae, ev.n_test);
  }
  std::cout << "wrote metrics.csv to " << out << "\n";
  return 0;
}

int cmd_run(const std::string& config, const std::string& out,
            std::optional<std::uint64_t> seed, std::optional<std::size_t> reps,
            const std::vector<std::string>& methods) {
  jima::ExperimentSpec spec = jima::experiment_from_json_file(config);
  if (seed) spec.base_seed = *seed;
  if (reps) spec.replications = *reps;
  if (!methods.empty()) {
    std::vector<jima::MethodSpec> keep;
    for (const std::string& name : methods) {
      bool found = false;
      for (const jima::MethodSpec& ms : spec.methods)
        if (ms.name == name) {
          keep.push_back(ms);
          found = true;
        }
      if (!found)
        throw jima::ValidationError("--methods: '" + name + "' is not in the experiment config");
    }
    spec.methods = std::move(keep);
  }

  const jima::ResultTable table = jima::run_experiment(spec);

  ensure_dir(out);
  jima::write_results_csv(table, join_path(out, "results.csv"));
  jima::write_raw_csv(table, join_path(out, "raw.csv"));
  const std::string text = jima::render_text_table(table);
  std::ofstream txt(join_path(out, "results.txt"));
  txt << text;
  std::cout << text << "wrote results.csv, raw.csv, results.txt to " << out << "\n";

  for (const std::string& m : table.method_order)
    if (jima::method_failure_fraction(table, m) >= 0.5) {
      std::cerr << "error: method '" << m << "' failed in at least half the replications\n";
      return 2;
    }
  return 0;
}

int cmd_report(const std::string& config, const std::string& out) {
  const jima::ResultTable table = jima::read_results_csv(config);
  ensure_dir(out);
  const std::string text = jima::render_text_table(table);
  std::ofstream txt(join_path(out, "results.txt"));
  txt << text;
  std::cout << text << "wrote results.txt to " << out << "\n";
  return 0;
}

int cmd_gradcheck(double tol, std::optional<std::uint64_t> seed, std::size_t instances,
                  bool inject) {
  jima::GradCheckConfig cfg;
  cfg.tolerance = tol;
  cfg.instances = instances;
  if (seed) cfg.seed = *seed;
  cfg.inject_sign_error = inject;
  const jima::GradCheckReport rep = jima::run_gradient_check(cfg);
  std::cout << jima::format_gradcheck(rep) << "\n";
  return rep.passed ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-level preference modeling: simulation, training, benchmarks"};
  app.require_subcommand(1);

  std::string config, out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> reps;
  std::vector<std::string> methods;
  double tol = 1e-4;
  std::size_t instances = 100;
  bool inject = false;

  auto* sim = app.add_subcommand("simulate", "generate synthetic data files");
  sim->add_option("--config", config, "simulation spec (JSON)")->required();
  sim->add_option("--out", out, "output directory");
  sim->add_option("--seed", seed, "override the config's seed");

  auto* run = app.add_subcommand("run", "run a replicated benchmark experiment");
  run->add_option("--config", config, "experiment spec (JSON)")->required();
  run->add_option("--out", out, "output directory");
  run->add_option("--seed", seed, "override base_seed");
  run->add_option("--reps", reps, "override replication count");
  run->add_option("--methods", methods, "subset of configured methods")->delimiter(',');

  auto* trn = app.add_subcommand("train", "fit one joint model on data files");
  trn->add_option("--config", config, "training spec (JSON)")->required();
  trn->add_option("--out", out, "output directory");
  trn->add_option("--seed", seed, "override the model seed");

  auto* ev = app.add_subcommand("evaluate", "score a saved model on the test split");
  ev->add_option("--config", config, "evaluation spec (JSON)")->required();
  ev->add_option("--out", out, "output directory");

  auto* rep = app.add_subcommand("report", "re-render a results CSV as a text table");
  rep->add_option("--config", config, "results.csv path")->required();
  rep->add_option("--out", out, "output directory");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference audit of all gradients");
  gc->add_option("--tol", tol, "max relative error");
  gc->add_option("--seed", seed, "randomization seed");
  gc->add_option("--instances", instances, "number of randomized instances");
  gc->add_flag("--inject-sign-error", inject)->group("");  // test hook, hidden from help

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (sim->parsed()) return cmd_simulate(config, out, seed);
    if (run->parsed()) return cmd_run(config, out, seed, reps, methods);
    if (trn->parsed()) return cmd_train(config, out, seed);
    if (ev->parsed()) return cmd_evaluate(config, out);
    if (rep->parsed()) return cmd_report(config, out);
    if (gc->parsed()) return cmd_gradcheck(tol, seed, instances, inject);
  } catch (const jima::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
