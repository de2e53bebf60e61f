#include "jima/interactions.hpp"

#include <algorithm>
#include <bit>

#include "jima/kernels.hpp"

namespace jima {

namespace {

void check_k(std::size_t k) {
  if (k < 2) throw ValidationError("interactions: need at least 2 vectors");
  if (k > 20) throw ValidationError("interactions: too many fibers to enumerate subsets");
}

}  // namespace

std::size_t interaction_output_dim(std::size_t k, std::size_t r) {
  check_k(k);
  return ((std::size_t{1} << k) - k - 1) * r;
}

std::size_t head_input_dim(std::size_t k, std::size_t r, bool use_interactions) {
  if (!use_interactions) return k * r;
  return k * r + interaction_output_dim(k, r);
}

std::vector<std::uint32_t> interaction_masks(std::size_t k) {
  check_k(k);
  std::vector<std::uint32_t> masks;
  const std::uint32_t full = (std::uint32_t{1} << k) - 1;
  for (std::uint32_t m = 3; m <= full; ++m)
    if (std::popcount(m) >= 2) masks.push_back(m);
  return masks;
}

void interaction_features(const double* const* vecs, std::size_t k, std::size_t r, double* out) {
  check_k(k);
  const auto& ops = kernels::active();

  // Each mask's product reuses the product for the mask without its highest
  // bit: that smaller mask is either a raw vector (popcount 1) or an earlier
  // block (masks are emitted ascending, so it is already in `out`).
  const std::uint32_t full = (std::uint32_t{1} << k) - 1;
  std::vector<const double*> block_of(full + 1, nullptr);
  for (std::size_t j = 0; j < k; ++j) block_of[std::uint32_t{1} << j] = vecs[j];

  double* cur = out;
  for (std::uint32_t m = 3; m <= full; ++m) {
    if (std::popcount(m) < 2) continue;
    const int h = 31 - std::countl_zero(m);
    const std::uint32_t rest = m ^ (std::uint32_t{1} << h);
    ops.hadamard(block_of[rest], vecs[h], cur, r);
    block_of[m] = cur;
    cur += r;
  }
}

void interaction_backward(const double* const* vecs, std::size_t k, std::size_t r,
                          const double* dfeat, double* const* dvecs) {
  check_k(k);
  const auto& ops = kernels::active();

  std::vector<double> prod(r);
  const std::uint32_t full = (std::uint32_t{1} << k) - 1;
  const double* cur = dfeat;
  for (std::uint32_t m = 3; m <= full; ++m) {
    if (std::popcount(m) < 2) continue;
    for (std::size_t j = 0; j < k; ++j) {
      if (!(m & (std::uint32_t{1} << j))) continue;
      // prod = element-wise product of every member except j
      bool started = false;
      for (std::size_t i = 0; i < k; ++i) {
        if (i == j || !(m & (std::uint32_t{1} << i))) continue;
        if (!started) {
          std::copy(vecs[i], vecs[i] + r, prod.begin());
          started = true;
        } else {
          ops.hadamard(prod.data(), vecs[i], prod.data(), r);
        }
      }
      ops.hadamard_acc(cur, prod.data(), dvecs[j], r);
    }
    cur += r;
  }
}

}  // namespace jima
