#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jima/obs_store.hpp"

// Loader for the offline-study data layout: up to four rating files
// (user-outfit utb, user-top ut, user-bottom ub, and expert top-bottom tb)
// in the observation CSV format, tied together by a small JSON manifest.
// No real dataset ships with this repository; a clearly synthetic generator
// of files in the same shape exists purely so the pipeline can be tested.

namespace jima {

struct RatingScale {
  double lo = 1.0;
  double hi = 5.0;
  double step = 0.5;  // display grid; bounds are enforced, the grid is not
};

struct RatingsLayout {
  std::string utb_path, ut_path, ub_path, tb_path;  // tb_path may be empty
  RatingScale scale;
  // 0 = infer from the data (max index + 1).
  std::size_t n_users = 0, n_tops = 0, n_bottoms = 0;
};

// Manifest JSON: {"utb": path, "ut": path, "ub": path, "tb": path,
// "scale": {"lo","hi","step"}, "dims": {"users","tops","bottoms"}}; paths
// are resolved relative to the manifest's directory, tb and dims optional.
RatingsLayout ratings_layout_from_json_file(const std::string& path);

struct RatingsData {
  Schema schema;                // K=3; L=4, or 3 when tb is absent/empty
  std::vector<double> densities;  // parallel to schema.sources
};

// Validates every value against [scale.lo, scale.hi] and builds the usual
// fiber/source schema (sources: utb=1, ut=2, ub=3, tb=4).
RatingsData load_ratings(const RatingsLayout& layout);

struct SyntheticRatingsSpec {
  std::size_t n_users = 386, n_tops = 50, n_bottoms = 50;
  std::size_t utb_cells = 16254, ut_cells = 4712, ub_cells = 4569, tb_cells = 2500;
  RatingScale scale;
  std::uint64_t seed = 0;
};

// Writes utb.csv/ut.csv/ub.csv/tb.csv plus manifest.json into dir: latent
// low-rank structure mapped onto the rating scale and snapped to its step.
// Test fixture data only; resembles nothing measured from people.
void write_synthetic_ratings(const SyntheticRatingsSpec& spec, const std::string& dir);

}  // namespace jima
