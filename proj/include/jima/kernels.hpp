#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

// Arithmetic inner loops used by the trainers. Every operation has a scalar
// reference implementation plus (on x86-64 builds) an AVX2/FMA variant; the
// backend is picked once at startup. Set JIMA_KERNELS=scalar|avx2 in the
// environment to force a backend. The variants are equivalence-tested against
// the scalar reference in tests/test_kernels.cpp.
//
// Conventions: all matrices are dense row-major doubles; sizes are element
// counts, never bytes. Backends may reassociate sums (FMA), so results agree
// with the reference to rounding, not bit-for-bit.

namespace jima::kernels {

struct Ops {
  const char* name;

  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  void (*scale)(double* x, double alpha, std::size_t n);
  // c = a .* b   /   c += a .* b
  void (*hadamard)(const double* a, const double* b, double* c, std::size_t n);
  void (*hadamard_acc)(const double* a, const double* b, double* c, std::size_t n);
  double (*sum)(const double* a, std::size_t n);
  double (*sumsq)(const double* a, std::size_t n);

  // C(m x n) = A(m x k) * B(n x k)^T        (acc: +=)
  void (*gemm_nt)(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                  std::size_t k, bool acc);
  // C(m x n) = A(m x k) * B(k x n)
  void (*gemm_nn)(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                  std::size_t k, bool acc);
  // C(m x n) = A(k x m)^T * B(k x n)
  void (*gemm_tn)(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                  std::size_t k, bool acc);

  void (*relu)(const double* x, double* y, std::size_t n);
  // dx = dy where pre > 0, else 0
  void (*relu_grad)(const double* pre, const double* dy, double* dx, std::size_t n);

  // Y(m x n) += b broadcast over rows
  void (*add_row_vector)(double* y, const double* b, std::size_t m, std::size_t n);
  // out[j] (+)= sum_i A[i][j]
  void (*colsum)(const double* a, double* out, std::size_t m, std::size_t n, bool acc);

  // One bias-corrected Adam update over n parameters. bc1/bc2 are the
  // 1 - beta^t correction terms, precomputed by the caller.
  void (*adam_update)(double* p, const double* g, double* m, double* v, std::size_t n, double lr,
                      double beta1, double beta2, double eps, double bc1, double bc2);
};

// Backend selected at startup (env override, then CPU detection).
const Ops& active();

// Scalar reference, always available; the ground truth for equivalence tests.
const Ops& scalar_ops();

// All compiled-in backends usable on this machine.
std::vector<const Ops*> available();

// Lookup by name; nullptr if absent or unusable on this CPU.
const Ops* find(std::string_view name);

}  // namespace jima::kernels
