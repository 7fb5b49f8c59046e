#include "ichseg/kernels/kernels.hpp"

#include <algorithm>

namespace ichseg::kernels {
namespace {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = c + i * ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = a[i * lda + p];
      if (av == 0.0f) continue;
      const float* brow = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

float dot(const float* a, const float* b, std::size_t n) {
  float s = 0.0f;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(float alpha, const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

OverlapCounts overlap(const std::uint8_t* a, const std::uint8_t* b, std::size_t n) {
  OverlapCounts r;
  for (std::size_t i = 0; i < n; ++i) {
    const bool pa = a[i] != 0;
    const bool pb = b[i] != 0;
    r.a += pa;
    r.b += pb;
    r.both += pa && pb;
  }
  return r;
}

void min_max(const float* x, std::size_t n, float* lo, float* hi) {
  float l = x[0];
  float h = x[0];
  for (std::size_t i = 1; i < n; ++i) {
    l = std::min(l, x[i]);
    h = std::max(h, x[i]);
  }
  *lo = l;
  *hi = h;
}

void relu(const float* x, float* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_backward(const float* x, float* g, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (!(x[i] > 0.0f)) g[i] = 0.0f;
}

}  // namespace

const KernelSet& scalar_kernels() {
  static const KernelSet set{"scalar", gemm_nn, dot, axpy, overlap, min_max, relu, relu_backward};
  return set;
}

}  // namespace ichseg::kernels
