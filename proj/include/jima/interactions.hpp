#pragma once

#include <cstdint>
#include <vector>

#include "jima/common.hpp"

// Interaction features over k entity embeddings of length r: one block per
// subset of size >= 2, each block the element-wise product of the subset's
// vectors. Blocks are ordered by ascending bitmask value (bit j = input j);
// that ordering is a fixed convention of this codebase. A prediction head
// consumes [raw vectors || interaction blocks].

namespace jima {

// (2^k - k - 1) * r, the concatenated interaction blocks.
std::size_t interaction_output_dim(std::size_t k, std::size_t r);

// k*r without interactions, (2^k - 1)*r with.
std::size_t head_input_dim(std::size_t k, std::size_t r, bool use_interactions);

// Subset bitmasks with popcount >= 2, ascending. k must be >= 2 (a single
// vector has no interactions) and small enough to enumerate (k <= 20).
std::vector<std::uint32_t> interaction_masks(std::size_t k);

// Writes interaction_output_dim(k, r) doubles to out, one block per mask in
// interaction_masks(k) order.
void interaction_features(const double* const* vecs, std::size_t k, std::size_t r, double* out);

// dfeat holds dLoss/d(interaction block) in the same layout; accumulates
// (+=) dLoss/dvecs[j] into dvecs[j] for every input via the product rule.
void interaction_backward(const double* const* vecs, std::size_t k, std::size_t r,
                          const double* dfeat, double* const* dvecs);

}  // namespace jima
