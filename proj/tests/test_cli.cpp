#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "jima/obs_store.hpp"

// End-to-end checks of the command-line binary. CMake passes its build path
// in as JIMA_CLI_PATH; each invocation is a real subprocess.

namespace {

namespace fs = std::filesystem;

int run_cli(const std::string& args, const std::string& log) {
  std::string cmd = std::string(JIMA_CLI_PATH) + " " + args + " > " + log + " 2>&1";
  int status = std::system(cmd.c_str());
  if (status < 0) return -1;
#if defined(_WIN32)
  return status;
#else
  return WEXITSTATUS(status);
#endif
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path);
  out << body;
}

struct CliDir {
  fs::path root;
  CliDir() : root("cli_test_dir") {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~CliDir() { fs::remove_all(root); }
  std::string path(const char* name) const { return (root / name).string(); }
};

}  // namespace

TEST_CASE("simulate writes a loadable dataset of the configured shape") {
  CliDir dir;
  write_file(dir.path("sim.json"),
             R"({"kind": "sim3", "n_users": 20, "n_tops": 10, "n_bottoms": 15})");
  int rc = run_cli("simulate --config " + dir.path("sim.json") + " --out " + dir.path("data") +
                       " --seed 5",
                   dir.path("log.txt"));
  CHECK(rc == 0);

  jima::Schema schema = jima::schema_from_json_file(dir.path("data/schema.json"));
  jima::load_observations_csv(dir.path("data/observations.csv"), schema);
  REQUIRE(schema.source_count() == 4);
  std::size_t cells = 0;
  for (const auto& s : schema.sources) cells += s.count();
  CHECK(cells == 20 * 10 * 15 + 200 + 300 + 150);
  CHECK(fs::exists(dir.path("data/ground_truth.json")));

  // Same seed, same file; different seed, different values.
  int rc2 = run_cli("simulate --config " + dir.path("sim.json") + " --out " + dir.path("data2") +
                        " --seed 5",
                    dir.path("log2.txt"));
  CHECK(rc2 == 0);
  CHECK(slurp(dir.path("data/observations.csv")) == slurp(dir.path("data2/observations.csv")));
  run_cli("simulate --config " + dir.path("sim.json") + " --out " + dir.path("data3") +
              " --seed 6",
          dir.path("log3.txt"));
  CHECK(slurp(dir.path("data/observations.csv")) != slurp(dir.path("data3/observations.csv")));
}

TEST_CASE("run executes an experiment config end to end") {
  CliDir dir;
  write_file(dir.path("exp.json"), R"({
    "name": "cli-smoke",
    "generator": {"kind": "sim3", "n_users": 10, "n_tops": 8, "n_bottoms": 6},
    "train_fraction": 0.5,
    "replications": 2,
    "base_seed": 3,
    "methods": [
      {"name": "gmi"},
      {"name": "mf_ut", "kind": "mf", "sources": ["ut"], "epochs": 3},
      {"name": "jima", "hidden": [8, 4], "epochs": 2, "batch_size": 32}
    ]
  })");

  int rc = run_cli("run --config " + dir.path("exp.json") + " --out " + dir.path("out"),
                   dir.path("log.txt"));
  CHECK(rc == 0);
  CHECK(fs::exists(dir.path("out/results.csv")));
  CHECK(fs::exists(dir.path("out/raw.csv")));
  CHECK(fs::exists(dir.path("out/results.txt")));

  std::string printed = slurp(dir.path("log.txt"));
  CHECK(printed.find("RMSE, mean (std)") != std::string::npos);
  CHECK(printed.find("jima") != std::string::npos);

  // --methods filters to a subset; asking for an unlisted one is an error.
  int rc2 = run_cli("run --config " + dir.path("exp.json") + " --out " + dir.path("out2") +
                        " --methods gmi",
                    dir.path("log2.txt"));
  CHECK(rc2 == 0);
  std::string results = slurp(dir.path("out2/results.csv"));
  CHECK(results.find("gmi") != std::string::npos);
  CHECK(results.find("jima") == std::string::npos);

  CHECK(run_cli("run --config " + dir.path("exp.json") + " --out " + dir.path("out3") +
                    " --methods nope",
                dir.path("log3.txt")) == 1);

  // report re-renders a results CSV.
  CHECK(run_cli("report --config " + dir.path("out/results.csv"), dir.path("log4.txt")) == 0);
  CHECK(slurp(dir.path("log4.txt")).find("RMSE") != std::string::npos);
}

TEST_CASE("train then evaluate round-trips a model over files") {
  CliDir dir;
  write_file(dir.path("sim.json"),
             R"({"kind": "sim3", "n_users": 8, "n_tops": 6, "n_bottoms": 5})");
  REQUIRE(run_cli("simulate --config " + dir.path("sim.json") + " --out " + dir.path("data") +
                      " --seed 1",
                  dir.path("log0.txt")) == 0);

  write_file(dir.path("train.json"), "{\n"
             "  \"schema\": \"" + dir.path("data/schema.json") + "\",\n"
             "  \"observations\": \"" + dir.path("data/observations.csv") + "\",\n"
             "  \"train_fraction\": 0.5,\n"
             "  \"split_seed\": 4,\n"
             "  \"model\": {\"hidden\": [8, 4], \"epochs\": 3, \"batch_size\": 32}\n"
             "}\n");
  CHECK(run_cli("train --config " + dir.path("train.json") + " --out " + dir.path("fit") +
                    " --seed 2",
                dir.path("log1.txt")) == 0);
  CHECK(fs::exists(dir.path("fit/model.bin")));
  std::string loss_csv = slurp(dir.path("fit/train_loss.csv"));
  CHECK(loss_csv.rfind("epoch,objective", 0) == 0);
  CHECK(std::count(loss_csv.begin(), loss_csv.end(), '\n') == 4);  // header + 3 epochs

  write_file(dir.path("eval.json"), "{\n"
             "  \"schema\": \"" + dir.path("data/schema.json") + "\",\n"
             "  \"observations\": \"" + dir.path("data/observations.csv") + "\",\n"
             "  \"train_fraction\": 0.5,\n"
             "  \"split_seed\": 4,\n"
             "  \"model\": \"" + dir.path("fit/model.bin") + "\"\n"
             "}\n");
  CHECK(run_cli("evaluate --config " + dir.path("eval.json") + " --out " + dir.path("scores"),
                dir.path("log2.txt")) == 0);
  std::string metrics = slurp(dir.path("scores/metrics.csv"));
  CHECK(metrics.rfind("source,rmse,mae,n_test", 0) == 0);
  CHECK(metrics.find("utb") != std::string::npos);
}

TEST_CASE("gradcheck passes clean and fails with an injected sign error") {
  CliDir dir;
  CHECK(run_cli("gradcheck --instances 6 --seed 11", dir.path("log.txt")) == 0);
  std::string out = slurp(dir.path("log.txt"));
  CHECK(out.find("PASS") != std::string::npos);

  CHECK(run_cli("gradcheck --instances 4 --inject-sign-error", dir.path("log2.txt")) != 0);
  std::string out2 = slurp(dir.path("log2.txt"));
  CHECK(out2.find("FAIL") != std::string::npos);
}

TEST_CASE("bad invocations exit with the documented codes") {
  CliDir dir;
  // No subcommand.
  CHECK(run_cli("", dir.path("log.txt")) != 0);
  // Unknown flag.
  CHECK(run_cli("simulate --nonsense", dir.path("log2.txt")) != 0);
  // Config file missing: a validation error, exit 1.
  CHECK(run_cli("run --config does_not_exist.json --out x", dir.path("log3.txt")) == 1);
  std::string msg = slurp(dir.path("log3.txt"));
  CHECK(msg.find("error") != std::string::npos);
}
