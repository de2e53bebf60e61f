#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "jima/joint_model.hpp"
#include "jima/obs_store.hpp"
#include "jima/simgen.hpp"

// Replication harness: R times over, generate (or load) the data, split it,
// fit every configured method, and score it on the test cells; then
// aggregate mean/std per (method, source) the way the benchmark tables
// report them.

namespace jima {

struct MethodSpec {
  std::string name;  // unique row label; well-known names imply a kind
  std::string kind;  // gmi | mf | cp | nf; empty = inferred from name

  std::vector<std::string> sources;  // source labels; empty = kind default
  std::optional<bool> use_interactions;

  std::size_t r = 5;
  double lambda = 1e-4;            // nf head L2 / mf factor L2
  double embedding_lambda = 1e-4;  // nf only
  AdamParams adam;
  std::size_t epochs = 200;
  std::size_t batch_size = 256;
  std::vector<std::size_t> hidden = {64, 32, 16, 8};
  std::optional<std::pair<double, double>> clamp_range;
  std::size_t cp_sweeps = 100;
  double cp_tol = 1e-6;
  double cp_ridge = 1e-8;
};

struct GeneratorSpec {
  std::string kind;  // sim3 | sim4 | files | ratings
  SimSpec3 sim3;     // seed field ignored; replications reseed
  SimSpec4 sim4;
  std::string schema_path;        // files
  std::string observations_path;  // files
  std::string ratings_manifest;   // ratings
};

struct ExperimentSpec {
  std::string name;
  GeneratorSpec generator;
  std::vector<MethodSpec> methods;
  double train_fraction = 0.2;
  std::size_t replications = 10;
  std::uint64_t base_seed = 0;
  bool metric_rmse = true;
  bool metric_mae = true;
  double time_limit_s = 0.0;  // per replication; 0 = unlimited
  std::size_t workers = 1;
};

ExperimentSpec experiment_from_json_text(const std::string& text);
ExperimentSpec experiment_from_json_file(const std::string& path);

struct RawRecord {
  std::string method;
  int source_id = 0;
  std::string source_label;
  std::size_t rep = 0;
  double rmse = 0.0;
  double mae = 0.0;
  double time_s = 0.0;
  bool failed = false;
  std::string error;  // set when failed
};

struct ResultCell {
  std::string method;
  int source_id = 0;
  std::string source_label;
  std::size_t r_effective = 0;
  double rmse_mean = 0.0, rmse_std = 0.0;
  double mae_mean = 0.0, mae_std = 0.0;
  double time_mean_s = 0.0, time_std_s = 0.0;
};

struct ResultTable {
  std::string experiment;
  std::size_t replications = 0;
  std::vector<std::string> method_order;
  std::vector<std::pair<int, std::string>> source_order;  // schema order
  std::vector<RawRecord> raw;
  std::vector<ResultCell> cells;

  const ResultCell* find(const std::string& method, const std::string& source_label) const;
};

// Runs the whole protocol. Replication i seeds generation, splitting, and
// every method's internal stream from base_seed + i; each method's stream is
// additionally keyed by its name so methods never perturb each other. A
// method that throws in one replication is recorded as failed there and
// excluded from that cell's aggregation.
ResultTable run_experiment(const ExperimentSpec& spec);

// Fraction of replications in which the named method failed.
double method_failure_fraction(const ResultTable& table, const std::string& method);

// True when both tables hold identical methods, sources, and metric values
// (bit-equal rmse/mae everywhere; wall-clock times ignored).
bool results_metrics_equal(const ResultTable& a, const ResultTable& b);

// Aggregated long-format CSV: method, source_id, source, rmse_mean, rmse_std,
// mae_mean, mae_std, time_mean_s, time_std_s, r_effective. Values round-trip
// exactly.
void write_results_csv(const ResultTable& table, const std::string& path);
ResultTable read_results_csv(const std::string& path);

// Per-replication values: method, source, rep, rmse, mae, time_s, error.
void write_raw_csv(const ResultTable& table, const std::string& path);

// Aligned text grid, one row per method, one column per source, cells
// "mean (std)" at 3 decimals, blank where a method does not model a source.
std::string render_text_table(const ResultTable& table);

}  // namespace jima
