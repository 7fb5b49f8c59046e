#include <cstdlib>
#include <cstring>

#include "ichseg/kernels/kernels.hpp"

namespace ichseg::kernels {

#if defined(ICHSEG_HAVE_AVX2)
const KernelSet& avx2_kernel_table();
#endif

const KernelSet* avx2_kernels() {
#if defined(ICHSEG_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  static const bool supported = [] {
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  }();
  return supported ? &avx2_kernel_table() : nullptr;
#else
  return nullptr;
#endif
}

const KernelSet& active() {
  static const KernelSet& chosen = []() -> const KernelSet& {
    const char* force = std::getenv("ICHSEG_FORCE_SCALAR");
    if (force != nullptr && std::strcmp(force, "0") != 0) return scalar_kernels();
    if (const KernelSet* simd = avx2_kernels()) return *simd;
    return scalar_kernels();
  }();
  return chosen;
}

}  // namespace ichseg::kernels
