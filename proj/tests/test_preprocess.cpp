#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "ichseg/preprocess.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace ichseg;

namespace {

Image2D random_slice(std::size_t nx, std::size_t ny, std::mt19937& rng, float lo, float hi) {
  Image2D s(nx, ny);
  std::uniform_real_distribution<float> u(lo, hi);
  for (auto& v : s.data) v = u(rng);
  return s;
}

// Independent Gaussian oracle: separable passes with per-axis border renormalization.
Image2D gaussian_oracle(const Image2D& s, double sigma) {
  const auto r = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  auto w = [&](std::ptrdiff_t d) { return std::exp(-static_cast<double>(d * d) / (2.0 * sigma * sigma)); };
  const auto nx = static_cast<std::ptrdiff_t>(s.nx), ny = static_cast<std::ptrdiff_t>(s.ny);
  std::vector<double> tmp(s.data.size());
  for (std::ptrdiff_t y = 0; y < ny; ++y)
    for (std::ptrdiff_t x = 0; x < nx; ++x) {
      double a = 0, b = 0;
      for (std::ptrdiff_t d = -r; d <= r; ++d)
        if (x + d >= 0 && x + d < nx) {
          a += w(d) * s.data[static_cast<std::size_t>(y * nx + x + d)];
          b += w(d);
        }
      tmp[static_cast<std::size_t>(y * nx + x)] = a / b;
    }
  Image2D out(s.nx, s.ny);
  for (std::ptrdiff_t y = 0; y < ny; ++y)
    for (std::ptrdiff_t x = 0; x < nx; ++x) {
      double a = 0, b = 0;
      for (std::ptrdiff_t d = -r; d <= r; ++d)
        if (y + d >= 0 && y + d < ny) {
          a += w(d) * tmp[static_cast<std::size_t>((y + d) * nx + x)];
          b += w(d);
        }
      out.data[static_cast<std::size_t>(y * nx + x)] = static_cast<float>(a / b);
    }
  return out;
}

double variance(const std::vector<double>& v) {
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size());
}

}  // namespace

TEST_CASE("to_three_channel") {
  SUBCASE("value at every window center maps to 0.5") {
    const WindowSet w{WindowSpec{40, 80}, WindowSpec{40, 200}, WindowSpec{40, 2800}};
    Image2D s(3, 2, 40.0f);
    const auto out = to_three_channel(s, w);
    for (float v : out.data) CHECK(v == doctest::Approx(0.5));
  }
  SUBCASE("below every floor clamps to 0") {
    Image2D s(2, 2, -2000.0f);
    const auto out = to_three_channel(s, default_windows());
    for (float v : out.data) CHECK(v == 0.0f);
  }
  SUBCASE("random slice matches direct formula") {
    std::mt19937 rng(4);
    const auto s = random_slice(17, 9, rng, -1200.0f, 2500.0f);
    const auto w = default_windows();
    const auto out = to_three_channel(s, w);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < s.data.size(); ++i) {
        const double lo = w[c].center - w[c].width / 2;
        const double want = std::min(1.0, std::max(0.0, (s.data[i] - lo) / w[c].width));
        CHECK(out.channel(c)[i] == doctest::Approx(want).epsilon(1e-6));
      }
  }
  SUBCASE("monotone per channel") {
    Image2D s(400, 1);
    for (std::size_t i = 0; i < 400; ++i) s.data[i] = -1500.0f + 10.0f * static_cast<float>(i);
    const auto out = to_three_channel(s, default_windows());
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 1; i < 400; ++i) CHECK(out.channel(c)[i] >= out.channel(c)[i - 1]);
  }
  SUBCASE("non-finite input rejected") {
    Image2D s(2, 2, 0.0f);
    s.data[3] = std::nanf("");
    CHECK_THROWS_AS(to_three_channel(s, default_windows()), Error);
  }
}

TEST_CASE("bilateral_smooth") {
  SkullStripConfig cfg;
  SUBCASE("constant slice is a fixed point") {
    Image2D s(20, 15, 37.5f);
    const auto out = bilateral_smooth(s, cfg);
    for (float v : out.data) CHECK(v == doctest::Approx(37.5f).epsilon(1e-6));
  }
  SUBCASE("step edge preserved while flat regions are smoothed") {
    std::mt19937 rng(8);
    std::normal_distribution<float> noise(0.0f, 5.0f);
    Image2D s(40, 40);
    for (std::size_t y = 0; y < 40; ++y)
      for (std::size_t x = 0; x < 40; ++x) s(x, y) = (x < 20 ? 0.0f : 300.0f) + noise(rng);
    const auto out = bilateral_smooth(s, cfg);
    std::vector<double> lb, la, rb, ra;
    for (std::size_t y = 5; y < 35; ++y) {
      // Largest jump in each row stays between columns 19 and 20 (within 1 px).
      std::size_t best = 0;
      float jump = 0;
      for (std::size_t x = 1; x < 40; ++x)
        if (std::fabs(out(x, y) - out(x - 1, y)) > jump) {
          jump = std::fabs(out(x, y) - out(x - 1, y));
          best = x;
        }
      CHECK(best >= 19);
      CHECK(best <= 21);
      for (std::size_t x = 3; x < 16; ++x) {
        lb.push_back(s(x, y));
        la.push_back(out(x, y));
      }
      for (std::size_t x = 24; x < 37; ++x) {
        rb.push_back(s(x, y));
        ra.push_back(out(x, y));
      }
    }
    CHECK(variance(la) < variance(lb));
    CHECK(variance(ra) < variance(rb));
  }
  SUBCASE("infinite range sigma approaches the Gaussian blur") {
    std::mt19937 rng(9);
    const auto s = random_slice(32, 24, rng, 0.0f, 100.0f);
    SkullStripConfig wide = cfg;
    wide.bilateral_range_sigma = 1e9;
    const auto got = bilateral_smooth(s, wide);
    const auto want = gaussian_oracle(s, cfg.bilateral_spatial_sigma);
    double se = 0;
    for (std::size_t i = 0; i < got.data.size(); ++i) se += std::pow(got.data[i] - want.data[i], 2);
    CHECK(std::sqrt(se / static_cast<double>(got.data.size())) < 1e-3);
  }
}

TEST_CASE("percentile uses linear interpolation") {
  CHECK(percentile({1, 2, 3, 4, 5}, 50) == doctest::Approx(3));
  CHECK(percentile({1, 2, 3, 4}, 50) == doctest::Approx(2.5));
  CHECK(percentile({10, 0}, 95) == doctest::Approx(9.5));
}

TEST_CASE("strip_skull") {
  SkullStripConfig cfg;
  SUBCASE("ring phantom: ring and exterior removed, disc intact") {
    const auto v = oracle::ring_phantom(64, 3, 24.0, 28.0);
    const auto r = strip_skull(v, cfg);
    CHECK(r.warnings.empty());
    std::size_t ring_ext = 0, removed = 0, disc = 0, kept = 0;
    for (std::size_t i = 0; i < v.voxels.size(); ++i) {
      if (v.voxels[i] == 40.0f) {
        ++disc;
        kept += r.brain.voxels[i];
        CHECK(r.stripped.voxels[i] == 40.0f);
      } else {
        ++ring_ext;
        removed += r.brain.voxels[i] == 0;
      }
    }
    CHECK(kept == disc);
    CHECK(static_cast<double>(removed) >= 0.99 * static_cast<double>(ring_ext));
  }
  SUBCASE("constant slice: all-ones mask and a warning") {
    CTVolume v{"flat", Grid3<float>({16, 16, 2}, 25.0f), {1, 1, 1}, {}};
    const auto r = strip_skull(v, cfg);
    CHECK(r.warnings.size() == 2);
    CHECK(r.slices_without_skull == std::vector<std::size_t>{0, 1});
    CHECK(r.brain.count() == v.voxels.size());
    CHECK(r.stripped.voxels == v.voxels);
  }
  SUBCASE("bright blob touching the ring interior is retained") {
    auto v = oracle::ring_phantom(64, 1, 24.0, 28.0);
    const double c = 31.5;
    std::vector<std::size_t> blob;
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 64; ++x) {
        const double rr = std::hypot(static_cast<double>(x) - c, static_cast<double>(y) - c);
        const double rb = std::hypot(static_cast<double>(x) - (c + 19.0), static_cast<double>(y) - c);
        if (rb < 5.0 && rr < 24.0) {
          v.voxels(x, y, 0) = 85.0f;
          blob.push_back(v.voxels.index(x, y, 0));
        }
      }
    REQUIRE(!blob.empty());
    const auto r = strip_skull(v, cfg);
    for (std::size_t i : blob) {
      CHECK(r.brain.voxels[i] == 1);
      CHECK(r.stripped.voxels[i] == 85.0f);
    }
  }
  SUBCASE("output is the pointwise product of input and mask") {
    std::mt19937 rng(12);
    auto v = oracle::ring_phantom(48, 2, 17.0, 21.0);
    std::normal_distribution<float> noise(0.0f, 8.0f);
    for (auto& x : v.voxels.data()) x += noise(rng);
    const auto r = strip_skull(v, cfg);
    for (std::size_t i = 0; i < v.voxels.size(); ++i)
      CHECK(r.stripped.voxels[i] == (r.brain.voxels[i] ? v.voxels[i] : 0.0f));
  }
}

TEST_CASE("equalize") {
  SUBCASE("uniform in-mask intensity gives a constant") {
    CTVolume v{"u", Grid3<float>({6, 6, 1}, 55.0f), {1, 1, 1}, {}};
    BinaryMask m = mask_like(v);
    for (std::size_t i = 0; i < 20; ++i) m.voxels[i] = 1;
    const auto out = equalize(v, m);
    for (std::size_t i = 0; i < 36; ++i) CHECK(out.voxels[i] == (i < 20 ? 1.0f : 0.0f));
  }
  SUBCASE("two-level slice maps to CDF values 0.25 and 1.0") {
    CTVolume v{"t", Grid3<float>({4, 4, 1}, 80.0f), {1, 1, 1}, {}};
    for (std::size_t i = 0; i < 4; ++i) v.voxels[i] = 10.0f;
    BinaryMask m = mask_like(v);
    std::fill(m.voxels.data().begin(), m.voxels.data().end(), std::uint8_t{1});
    const auto out = equalize(v, m);
    for (std::size_t i = 0; i < 16; ++i) CHECK(out.voxels[i] == doctest::Approx(i < 4 ? 0.25 : 1.0));
  }
  SUBCASE("random slice: approximately uniform, rank preserving, in range") {
    std::mt19937 rng(21);
    auto v = testing::random_volume({64, 64, 2}, rng, -50.0f, 120.0f);
    std::normal_distribution<float> g(40.0f, 10.0f);
    for (auto& x : v.voxels.data()) x = g(rng);
    BinaryMask m = mask_like(v);
    std::bernoulli_distribution coin(0.7);
    for (auto& x : m.voxels.data()) x = coin(rng);
    const auto out = equalize(v, m);
    for (std::size_t z = 0; z < 2; ++z) {
      std::vector<std::size_t> bins(10, 0);
      std::size_t n = 0;
      for (std::size_t i = z * 4096; i < (z + 1) * 4096; ++i) {
        const float o = out.voxels[i];
        CHECK(o >= 0.0f);
        CHECK(o <= 1.0f);
        if (!m.voxels[i]) {
          CHECK(o == 0.0f);
          continue;
        }
        ++n;
        bins[std::min<std::size_t>(9, static_cast<std::size_t>(o * 10.0f - 1e-6f))]++;
      }
      const double expect = static_cast<double>(n) / 10.0;
      double chi2 = 0;
      for (auto b : bins) chi2 += std::pow(static_cast<double>(b) - expect, 2) / expect;
      CHECK(chi2 < 21.67);  // chi-square 9 dof, p = 0.01
    }
    for (int t = 0; t < 2000; ++t) {
      const std::size_t i = rng() % 4096, j = rng() % 4096;
      if (m.voxels[i] && m.voxels[j] && v.voxels[i] < v.voxels[j]) CHECK(out.voxels[i] <= out.voxels[j]);
    }
  }
  SUBCASE("empty mask slice yields zeros") {
    CTVolume v{"z", Grid3<float>({3, 3, 1}, 5.0f), {1, 1, 1}, {}};
    const auto out = equalize(v, mask_like(v));
    for (float x : out.voxels.data()) CHECK(x == 0.0f);
  }
}

TEST_CASE("classifier_input zeroes out-of-brain pixels in every channel") {
  std::mt19937 rng(30);
  auto v = testing::random_volume({8, 8, 2}, rng, -100.0f, 200.0f);
  BinaryMask m = mask_like(v);
  for (std::size_t i = 0; i < m.voxels.size(); i += 3) m.voxels[i] = 1;
  const auto s = classifier_input(v, m, default_windows());
  CHECK(s.nz == 2);
  for (std::size_t z = 0; z < 2; ++z)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 64; ++i)
        if (!m.voxels[z * 64 + i]) CHECK(s.slice(z)[c * 64 + i] == 0.0f);
}
