#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "ichseg/kernels/kernels.hpp"

using namespace ichseg::kernels;

namespace {

std::vector<float> random_floats(std::size_t n, std::mt19937& rng) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Naive triple loop in double; independent of both kernel variants.
std::vector<double> gemm_oracle(std::size_t m, std::size_t n, std::size_t k, const std::vector<float>& a,
                                const std::vector<float>& b, const std::vector<float>& c0) {
  std::vector<double> c(c0.begin(), c0.end());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += static_cast<double>(a[i * k + p]) * b[p * n + j];
      c[i * n + j] += s;
    }
  return c;
}

std::vector<const KernelSet*> variants() {
  std::vector<const KernelSet*> v{&scalar_kernels()};
  if (const KernelSet* s = avx2_kernels()) v.push_back(s);
  return v;
}

}  // namespace

TEST_CASE("gemm variants agree with a double-precision oracle") {
  std::mt19937 rng(11);
  const std::vector<std::array<std::size_t, 3>> shapes{{1, 1, 1},   {3, 5, 7},    {4, 16, 9},  {7, 33, 300},
                                                       {17, 8, 27}, {5, 100, 64}, {64, 9, 513}};
  for (const KernelSet* ks : variants()) {
    for (auto [m, n, k] : shapes) {
      CAPTURE(ks->name);
      CAPTURE(m);
      CAPTURE(n);
      CAPTURE(k);
      const auto a = random_floats(m * k, rng);
      const auto b = random_floats(k * n, rng);
      auto c = random_floats(m * n, rng);
      const auto want = gemm_oracle(m, n, k, a, b, c);
      ks->gemm_nn(m, n, k, a.data(), k, b.data(), n, c.data(), n);
      for (std::size_t i = 0; i < c.size(); ++i)
        REQUIRE(std::fabs(c[i] - want[i]) <= 1e-4 * (1.0 + std::sqrt(static_cast<double>(k))));
    }
  }
}

TEST_CASE("SIMD kernels match the scalar reference") {
  const KernelSet* simd = avx2_kernels();
  if (simd == nullptr) {
    MESSAGE("AVX2 variant unavailable on this CPU; equivalence not exercised");
    return;
  }
  const KernelSet& ref = scalar_kernels();
  std::mt19937 rng(5);
  for (std::size_t n : {1u, 7u, 8u, 15u, 16u, 31u, 32u, 33u, 100u, 1000u, 4097u}) {
    CAPTURE(n);
    const auto a = random_floats(n, rng);
    const auto b = random_floats(n, rng);

    CHECK(simd->dot(a.data(), b.data(), n) == doctest::Approx(ref.dot(a.data(), b.data(), n)).epsilon(1e-4));

    auto y1 = b;
    auto y2 = b;
    ref.axpy(0.37f, a.data(), y1.data(), n);
    simd->axpy(0.37f, a.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-6));

    float l1, h1, l2, h2;
    ref.min_max(a.data(), n, &l1, &h1);
    simd->min_max(a.data(), n, &l2, &h2);
    CHECK(l1 == l2);
    CHECK(h1 == h2);

    std::vector<float> r1(n), r2(n);
    ref.relu(a.data(), r1.data(), n);
    simd->relu(a.data(), r2.data(), n);
    CHECK(r1 == r2);

    auto g1 = b;
    auto g2 = b;
    ref.relu_backward(a.data(), g1.data(), n);
    simd->relu_backward(a.data(), g2.data(), n);
    CHECK(g1 == g2);

    std::bernoulli_distribution coin(0.4);
    std::vector<std::uint8_t> ma(n), mb(n);
    for (std::size_t i = 0; i < n; ++i) {
      ma[i] = coin(rng);
      mb[i] = coin(rng);
    }
    const auto o1 = ref.overlap(ma.data(), mb.data(), n);
    const auto o2 = simd->overlap(ma.data(), mb.data(), n);
    CHECK(o1.a == o2.a);
    CHECK(o1.b == o2.b);
    CHECK(o1.both == o2.both);
  }
}

TEST_CASE("overlap counts match a direct tally") {
  std::vector<std::uint8_t> a{1, 0, 1, 1, 0, 0, 1};
  std::vector<std::uint8_t> b{1, 1, 0, 1, 0, 1, 0};
  for (const KernelSet* ks : variants()) {
    const auto c = ks->overlap(a.data(), b.data(), a.size());
    CHECK(c.a == 4);
    CHECK(c.b == 4);
    CHECK(c.both == 2);
  }
}

TEST_CASE("active set is one of the compiled variants") {
  const auto name = active().name;
  CHECK((name == "scalar" || name == "avx2"));
}
