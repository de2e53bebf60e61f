#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace jima {

// Thrown for problems the caller can fix (bad config, malformed file, value
// out of range). The CLI maps these to exit code 1; everything else is a
// runtime failure (exit 2).
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Dense row-major matrix of doubles. Rows are contiguous, which the kernels
// rely on.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double* row(std::size_t i) { return data.data() + i * cols; }
  const double* row(std::size_t i) const { return data.data() + i * cols; }
  double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  std::size_t size() const { return data.size(); }
  void zero();

  bool operator==(const Mat&) const = default;
};

// splitmix64-style mixer for deriving independent RNG streams from a base
// seed plus a stream tag (replication index, source id, epoch, ...).
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream);

// FNV-1a, used to turn method names into stream tags so that adding or
// removing one method never shifts another method's random stream.
std::uint64_t hash_name(std::string_view name);

bool all_finite(const double* p, std::size_t n);
bool all_finite(const std::vector<double>& v);

std::string format_double(double v);  // shortest round-trip decimal form

}  // namespace jima
