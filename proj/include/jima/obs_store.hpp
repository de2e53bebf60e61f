#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jima/common.hpp"

// Sparse multi-level observation data: a master tensor described by fibers
// (modes), plus L data sources, each an observed sub-tensor over a subset of
// those fibers holding (index-tuple, value) cells. Also the reproducible
// train/test splitting and minibatching used by every trainer.

namespace jima {

enum class LossKind { squared, cross_entropy };

struct FiberSpec {
  int fiber_id = 0;
  std::size_t dim = 0;
  std::string label;
};

// One observed tensor: which fibers it spans (in order) and its cells,
// stored structure-of-arrays: flat_indices holds order() entries per cell.
struct DataSource {
  int source_id = 0;
  std::string label;
  std::vector<int> fibers;
  LossKind loss_kind = LossKind::squared;

  std::vector<std::int32_t> flat_indices;
  std::vector<double> values;

  std::size_t order() const { return fibers.size(); }
  std::size_t count() const { return values.size(); }
  const std::int32_t* index_tuple(std::size_t obs) const {
    return flat_indices.data() + obs * fibers.size();
  }
  void add(const std::int32_t* idx, double value) {
    flat_indices.insert(flat_indices.end(), idx, idx + fibers.size());
    values.push_back(value);
  }
};

struct Schema {
  std::vector<FiberSpec> fibers;
  std::vector<DataSource> sources;

  std::size_t fiber_count() const { return fibers.size(); }    // K
  std::size_t source_count() const { return sources.size(); }  // L

  // Position of a fiber id within `fibers`; throws ValidationError if absent.
  std::size_t fiber_position(int fiber_id) const;
  const FiberSpec& fiber(int fiber_id) const { return fibers[fiber_position(fiber_id)]; }

  std::size_t source_position(int source_id) const;
  const DataSource& source(int source_id) const { return sources[source_position(source_id)]; }
  DataSource& source(int source_id) { return sources[source_position(source_id)]; }
  const DataSource* find_source(int source_id) const;
};

// Validates everything: unique fiber ids, dims >= 1, known fibers per source,
// unique source ids, 2 <= order <= K, distinct fibers within a source, no two
// sources over the same fiber set, L <= 2^K - K - 1, all indices in range,
// finite values, no duplicate cells within a source.
Schema build_schema(std::vector<FiberSpec> fibers, std::vector<DataSource> sources);

// Re-checks one source's cells (bounds, finiteness, duplicates) against the
// schema's fibers; used after appending observations to a built schema.
void validate_source_cells(const Schema& schema, const DataSource& src);

// |cells| / product of fiber dims.
double density(const Schema& schema, int source_id);

struct SourceSplit {
  std::vector<std::uint32_t> train;
  std::vector<std::uint32_t> test;
};

struct SplitPlan {
  double train_fraction = 0.0;
  std::uint64_t seed = 0;
  std::vector<int> source_ids;        // parallel to splits
  std::vector<SourceSplit> splits;

  const SourceSplit& for_source(int source_id) const;
};

// Per-source independent uniform sampling without replacement;
// |train| = round(train_fraction * count). Deterministic in (schema
// contents, fraction, seed). Fraction must lie strictly inside (0,1) and
// every source must be non-empty.
SplitPlan split(const Schema& schema, double train_fraction, std::uint64_t seed);

// One epoch's minibatches: a seeded permutation of index_list cut into
// chunks of at most batch_size. The permutation depends on (seed, source_id,
// epoch), so different epochs reshuffle and different sources are
// decorrelated. index_list must be non-empty and batch_size >= 1.
std::vector<std::vector<std::uint32_t>> minibatches(int source_id,
                                                    const std::vector<std::uint32_t>& index_list,
                                                    std::size_t batch_size, std::uint64_t seed,
                                                    std::uint64_t epoch);

// Observation CSV: one row per cell, `source_id,idx_1,...,idx_k,value`,
// 0-based indices, value printed round-trip exact.
void load_observations_csv(const std::string& path, Schema& schema);
void save_observations_csv(const std::string& path, const Schema& schema);

// Schema structure (fibers, sources, loss kinds) as JSON; observations are
// not included (they live in the CSV).
Schema schema_from_json_text(const std::string& text);
Schema schema_from_json_file(const std::string& path);
std::string schema_to_json_text(const Schema& schema);
void save_schema_json(const Schema& schema, const std::string& path);

}  // namespace jima
