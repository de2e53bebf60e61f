#pragma once

#include <cstdint>
#include <string>

// Self-contained finite-difference audit of every analytic gradient path:
// plain network backward (weights, biases, input), and the full multi-task
// objective (head parameters, shared factor rows through all interaction
// blocks, both L2 terms). Randomized toy instances, central differences.

namespace jima {

struct GradCheckConfig {
  std::size_t instances = 100;  // randomized problem instances, split across suites
  double step = 1e-5;           // central-difference step
  double tolerance = 1e-4;      // max allowed relative error
  std::uint64_t seed = 2024;
  // Test hook: flips the largest analytic component in each instance so the
  // suite must report failure. Never set outside mutation tests.
  bool inject_sign_error = false;
};

struct GradCheckReport {
  std::size_t instances = 0;
  std::size_t checked_parameters = 0;
  double worst_rel_err = 0.0;
  std::string worst_site;
  bool passed = false;
};

GradCheckReport run_gradient_check(const GradCheckConfig& cfg);

std::string format_gradcheck(const GradCheckReport& rep);

}  // namespace jima
