#pragma once
// Arithmetic inner loops shared by the network layers, preprocessing and
// metrics. Every kernel has a portable scalar reference and, where the CPU
// supports it, an AVX2+FMA variant. The active set is chosen once at startup.

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace ichseg::kernels {

struct OverlapCounts {
  std::uint64_t a = 0;     // nonzero in a
  std::uint64_t b = 0;     // nonzero in b
  std::uint64_t both = 0;  // nonzero in both
};

/// Function table for one instruction-set level.
struct KernelSet {
  std::string_view name;

  /// C[M x N] += A[M x K] * B[K x N], all row-major with leading dimensions.
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
                  const float* b, std::size_t ldb, float* c, std::size_t ldc);

  float (*dot)(const float* a, const float* b, std::size_t n);

  /// y += alpha * x
  void (*axpy)(float alpha, const float* x, float* y, std::size_t n);

  /// Counts nonzero bytes in a, b and a&b. Masks hold 0 or 1.
  OverlapCounts (*overlap)(const std::uint8_t* a, const std::uint8_t* b, std::size_t n);

  /// Minimum and maximum of a nonempty range.
  void (*min_max)(const float* x, std::size_t n, float* lo, float* hi);

  /// out[i] = max(x[i], 0)
  void (*relu)(const float* x, float* out, std::size_t n);

  /// g[i] = x[i] > 0 ? g[i] : 0
  void (*relu_backward)(const float* x, float* g, std::size_t n);
};

const KernelSet& scalar_kernels();

/// Nullptr when the AVX2 variant was not compiled in or the CPU lacks AVX2/FMA.
const KernelSet* avx2_kernels();

/// The dispatched set. Honors ICHSEG_FORCE_SCALAR=1 in the environment.
const KernelSet& active();

}  // namespace ichseg::kernels
