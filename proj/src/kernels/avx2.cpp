// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.
#include "ichseg/kernels/kernels.hpp"

#include <immintrin.h>

#include <algorithm>

namespace ichseg::kernels {
namespace {

inline __m256i tail_mask(std::size_t rem) {
  alignas(32) static const int table[16] = {-1, -1, -1, -1, -1, -1, -1, -1, 0, 0, 0, 0, 0, 0, 0, 0};
  return _mm256_loadu_si256(reinterpret_cast<const __m256i*>(table + 8 - rem));
}

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 sh = _mm_movehdup_ps(lo);
  lo = _mm_add_ps(lo, sh);
  sh = _mm_movehl_ps(sh, lo);
  lo = _mm_add_ss(lo, sh);
  return _mm_cvtss_f32(lo);
}

// 4x16 register tile.
inline void tile_4x16(std::size_t k, const float* a, std::size_t lda, const float* b,
                      std::size_t ldb, float* c, std::size_t ldc) {
  __m256 c00 = _mm256_setzero_ps(), c01 = _mm256_setzero_ps();
  __m256 c10 = _mm256_setzero_ps(), c11 = _mm256_setzero_ps();
  __m256 c20 = _mm256_setzero_ps(), c21 = _mm256_setzero_ps();
  __m256 c30 = _mm256_setzero_ps(), c31 = _mm256_setzero_ps();
  for (std::size_t p = 0; p < k; ++p) {
    const __m256 b0 = _mm256_loadu_ps(b + p * ldb);
    const __m256 b1 = _mm256_loadu_ps(b + p * ldb + 8);
    __m256 av = _mm256_broadcast_ss(a + p);
    c00 = _mm256_fmadd_ps(av, b0, c00);
    c01 = _mm256_fmadd_ps(av, b1, c01);
    av = _mm256_broadcast_ss(a + lda + p);
    c10 = _mm256_fmadd_ps(av, b0, c10);
    c11 = _mm256_fmadd_ps(av, b1, c11);
    av = _mm256_broadcast_ss(a + 2 * lda + p);
    c20 = _mm256_fmadd_ps(av, b0, c20);
    c21 = _mm256_fmadd_ps(av, b1, c21);
    av = _mm256_broadcast_ss(a + 3 * lda + p);
    c30 = _mm256_fmadd_ps(av, b0, c30);
    c31 = _mm256_fmadd_ps(av, b1, c31);
  }
  auto store = [&](float* row, __m256 lo, __m256 hi) {
    _mm256_storeu_ps(row, _mm256_add_ps(_mm256_loadu_ps(row), lo));
    _mm256_storeu_ps(row + 8, _mm256_add_ps(_mm256_loadu_ps(row + 8), hi));
  };
  store(c, c00, c01);
  store(c + ldc, c10, c11);
  store(c + 2 * ldc, c20, c21);
  store(c + 3 * ldc, c30, c31);
}

// One row of C against up to 8 columns (masked when rem < 8).
inline void row_cols8(std::size_t k, const float* a, const float* b, std::size_t ldb, float* c,
                      std::size_t rem) {
  const __m256i m = tail_mask(rem);
  __m256 acc = _mm256_setzero_ps();
  for (std::size_t p = 0; p < k; ++p) {
    const __m256 bv = _mm256_maskload_ps(b + p * ldb, m);
    acc = _mm256_fmadd_ps(_mm256_broadcast_ss(a + p), bv, acc);
  }
  _mm256_maskstore_ps(c, m, _mm256_add_ps(_mm256_maskload_ps(c, m), acc));
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  constexpr std::size_t kBlock = 256;
  for (std::size_t p0 = 0; p0 < k; p0 += kBlock) {
    const std::size_t kb = std::min(kBlock, k - p0);
    const float* ap = a + p0;
    const float* bp = b + p0 * ldb;
    std::size_t j = 0;
    for (; j + 16 <= n; j += 16) {
      std::size_t i = 0;
      for (; i + 4 <= m; i += 4) tile_4x16(kb, ap + i * lda, lda, bp + j, ldb, c + i * ldc + j, ldc);
      for (; i < m; ++i) {
        row_cols8(kb, ap + i * lda, bp + j, ldb, c + i * ldc + j, 8);
        row_cols8(kb, ap + i * lda, bp + j + 8, ldb, c + i * ldc + j + 8, 8);
      }
    }
    for (; j < n; j += 8) {
      const std::size_t rem = std::min<std::size_t>(8, n - j);
      for (std::size_t i = 0; i < m; ++i) row_cols8(kb, ap + i * lda, bp + j, ldb, c + i * ldc + j, rem);
    }
  }
}

float dot(const float* a, const float* b, std::size_t n) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), acc1);
  }
  for (; i + 8 <= n; i += 8)
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
  float s = hsum(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(float alpha, const float* x, float* y, std::size_t n) {
  const __m256 av = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

OverlapCounts overlap(const std::uint8_t* a, const std::uint8_t* b, std::size_t n) {
  OverlapCounts r;
  const __m256i zero = _mm256_setzero_si256();
  std::size_t i = 0;
  for (; i + 32 <= n; i += 32) {
    const __m256i va = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(a + i));
    const __m256i vb = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(b + i));
    const auto za = static_cast<std::uint32_t>(_mm256_movemask_epi8(_mm256_cmpeq_epi8(va, zero)));
    const auto zb = static_cast<std::uint32_t>(_mm256_movemask_epi8(_mm256_cmpeq_epi8(vb, zero)));
    r.a += static_cast<std::uint64_t>(_mm_popcnt_u32(~za));
    r.b += static_cast<std::uint64_t>(_mm_popcnt_u32(~zb));
    r.both += static_cast<std::uint64_t>(_mm_popcnt_u32(~za & ~zb));
  }
  for (; i < n; ++i) {
    const bool pa = a[i] != 0;
    const bool pb = b[i] != 0;
    r.a += pa;
    r.b += pb;
    r.both += pa && pb;
  }
  return r;
}

void min_max(const float* x, std::size_t n, float* lo, float* hi) {
  std::size_t i = 0;
  float l = x[0];
  float h = x[0];
  if (n >= 8) {
    __m256 vl = _mm256_loadu_ps(x);
    __m256 vh = vl;
    for (i = 8; i + 8 <= n; i += 8) {
      const __m256 v = _mm256_loadu_ps(x + i);
      vl = _mm256_min_ps(vl, v);
      vh = _mm256_max_ps(vh, v);
    }
    alignas(32) float bl[8];
    alignas(32) float bh[8];
    _mm256_store_ps(bl, vl);
    _mm256_store_ps(bh, vh);
    l = *std::min_element(bl, bl + 8);
    h = *std::max_element(bh, bh + 8);
  }
  for (; i < n; ++i) {
    l = std::min(l, x[i]);
    h = std::max(h, x[i]);
  }
  *lo = l;
  *hi = h;
}

void relu(const float* x, float* out, std::size_t n) {
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_max_ps(_mm256_loadu_ps(x + i), zero));
  for (; i < n; ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_backward(const float* x, float* g, std::size_t n) {
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 keep = _mm256_cmp_ps(_mm256_loadu_ps(x + i), zero, _CMP_GT_OQ);
    _mm256_storeu_ps(g + i, _mm256_and_ps(_mm256_loadu_ps(g + i), keep));
  }
  for (; i < n; ++i)
    if (!(x[i] > 0.0f)) g[i] = 0.0f;
}

}  // namespace

const KernelSet& avx2_kernel_table() {
  static const KernelSet set{"avx2", gemm_nn, dot, axpy, overlap, min_max, relu, relu_backward};
  return set;
}

}  // namespace ichseg::kernels
