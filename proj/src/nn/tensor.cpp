#include "ichseg/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>

#include "ichseg/kernels/kernels.hpp"

namespace ichseg::nn {

Parameter::Parameter(std::string n, std::vector<std::size_t> s) : name(std::move(n)), shape(std::move(s)) {
  const std::size_t count = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  value.assign(count, 0.0f);
  grad.assign(count, 0.0f);
}

void Parameter::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0f); }

void he_normal(Parameter& p, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<float> g(0.0f, std::sqrt(2.0f / static_cast<float>(std::max<std::size_t>(fan_in, 1))));
  for (float& v : p.value) v = g(rng);
}

void uniform_init(Parameter& p, float bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-bound, bound);
  for (float& v : p.value) v = u(rng);
}

namespace {

void transpose(const float* src, std::size_t rows, std::size_t cols, std::vector<float>& dst) {
  dst.resize(rows * cols);
  constexpr std::size_t kTile = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kTile)
    for (std::size_t c0 = 0; c0 < cols; c0 += kTile)
      for (std::size_t r = r0; r < std::min(rows, r0 + kTile); ++r)
        for (std::size_t c = c0; c < std::min(cols, c0 + kTile); ++c) dst[c * rows + r] = src[r * cols + c];
}

}  // namespace

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
          bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0f);
  if (m == 0 || n == 0 || k == 0) return;
  thread_local std::vector<float> at;
  thread_local std::vector<float> bt;
  const float* ap = a;
  const float* bp = b;
  if (ta == Trans::kYes) {
    transpose(a, k, m, at);
    ap = at.data();
  }
  if (tb == Trans::kYes) {
    transpose(b, n, k, bt);
    bp = bt.data();
  }
  kernels::active().gemm_nn(m, n, k, ap, k, bp, n, c, n);
}

std::uint64_t checksum(const std::vector<const Parameter*>& params) {
  std::uint64_t h = 1469598103934665603ull;
  for (const Parameter* p : params) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
    for (std::size_t i = 0; i < p->value.size() * sizeof(float); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace ichseg::nn
