#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jima/obs_store.hpp"

// Synthetic data: latent factors drawn i.i.d. standard normal per entity,
// observations formed from inner products of the factors plus Gaussian
// noise. The three-way setting emits four fully observed sources over
// (user, top, bottom); the four-way setting emits five over (user, top,
// bottom, hat). The generating factors are returned so tests can score an
// oracle that knows the truth.

namespace jima {

struct SimSpec3 {
  std::size_t n_users = 0, n_tops = 0, n_bottoms = 0;
  std::size_t r = 5;
  double noise_sd = 0.1;
  double interaction_weight = 2.0;  // weight of item-item terms in composite sources
  std::uint64_t seed = 0;
};

struct SimSpec4 {
  std::size_t n_users = 0, n_tops = 0, n_bottoms = 0, n_hats = 0;
  std::size_t r = 5;
  double noise_sd = 0.1;
  double interaction_weight = 2.0;
  std::uint64_t seed = 0;
};

struct GroundTruth {
  std::vector<int> fiber_ids;  // parallel to factors
  std::vector<Mat> factors;    // n_k x r
  double interaction_weight = 2.0;
  int actor_fiber = 0;  // pairs not touching this fiber carry interaction_weight

  const Mat& factors_for(int fiber_id) const;
};

// Fibers: 0 user, 1 top, 2 bottom. Sources: 1 utb (order 3), 2 ut, 3 ub,
// 4 tb; all cells emitted. utb = xu + xv + w*uv + noise; ut = xu + noise;
// ub = xv + noise; tb = uv with no noise.
struct ThreeWayData {
  Schema schema;
  GroundTruth truth;
};
ThreeWayData gen_three_way(const SimSpec3& spec);

// Fibers: 0 user, 1 top, 2 bottom, 3 hat. Sources: 1 utbh (order 4),
// 2 utb (order 3), 3 ut, 4 ub, 5 uh; all noisy, all cells emitted.
// Composite sources sum every pairwise inner product, item-item pairs
// weighted by interaction_weight.
struct FourWayData {
  Schema schema;
  GroundTruth truth;
};
FourWayData gen_four_way(const SimSpec4& spec);

// The generating function's noise-free value for one cell: order-2 sources
// are a plain inner product; higher orders sum all pairs with item-item
// pairs weighted.
double oracle_predict(const GroundTruth& gt, const std::vector<int>& source_fibers,
                      const std::int32_t* idx);

// Oracle RMSE over the listed cells of one source.
double oracle_rmse(const GroundTruth& gt, const Schema& schema, int source_id,
                   const std::vector<std::uint32_t>& cells);

// Ground-truth factors as JSON (exact round-trip of the doubles).
void save_ground_truth_json(const GroundTruth& gt, const std::string& path);
GroundTruth load_ground_truth_json(const std::string& path);

}  // namespace jima
