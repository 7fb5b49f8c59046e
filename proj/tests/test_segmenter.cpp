#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "ichseg/metrics.hpp"
#include "ichseg/phantom.hpp"
#include "ichseg/segmenter.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace ichseg;
using namespace ichseg::segmenter;

namespace {

void random_pair(std::size_t n, std::mt19937& rng, std::vector<float>& y, std::vector<float>& p) {
  std::bernoulli_distribution coin(0.3);
  std::uniform_int_distribution<int> k(13, 243);
  y.resize(n);
  p.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = coin(rng) ? 1.0f : 0.0f;
    p[i] = static_cast<float>(k(rng)) / 256.0f;  // exact in float, away from the clamp
  }
}

class ConstantModel final : public PatchPredictor {
 public:
  ConstantModel(nn::Dim3 p, float v) : p_(p), v_(v) {}
  nn::Dim3 patch() const override { return p_; }
  nn::Tensor probabilities(const nn::Tensor& x) const override {
    return nn::Tensor(x.n(), 1, x.d(), x.h(), x.w(), v_);
  }

 private:
  nn::Dim3 p_;
  float v_;
};

// Probability = the input voxel itself, which exposes window placement.
class IdentityModel final : public PatchPredictor {
 public:
  explicit IdentityModel(nn::Dim3 p) : p_(p) {}
  nn::Dim3 patch() const override { return p_; }
  nn::Tensor probabilities(const nn::Tensor& x) const override { return x; }

 private:
  nn::Dim3 p_;
};

UNetConfig tiny_config() {
  UNetConfig c;
  c.depth = 2;
  c.base_channels = 4;
  c.patch_x = c.patch_y = 16;
  c.patch_z = 8;
  return c;
}

std::vector<float> mask_floats(const Grid3<std::uint8_t>& g) { return {g.data().begin(), g.data().end()}; }

bool intersects(const Patch& p) {
  return std::any_of(p.mask.data().begin(), p.mask.data().end(), [](std::uint8_t v) { return v != 0; });
}

}  // namespace

TEST_CASE("combined loss trivial cases") {
  const std::vector<float> ones(64, 1.0f), zeros(64, 0.0f);
  const LossTerms perfect = combined_loss(ones, ones, 1e-6);
  CHECK(perfect.dice == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(perfect.bce <= 1e-6);
  CHECK(perfect.total() <= 2e-6);
  const LossTerms empty = combined_loss(zeros, zeros, 1e-6);
  CHECK(empty.dice == 0.0);
  CHECK(empty.bce <= 1e-6);
  const LossTerms wrong = combined_loss(ones, zeros, 1e-6);
  CHECK(wrong.dice > 0.99);
  CHECK(wrong.bce > 15.0);
  CHECK_THROWS_WITH_AS(combined_loss(ones, std::vector<float>(63, 0.5f), 1e-6), doctest::Contains("shape mismatch"),
                       Error);
  CHECK_THROWS_AS(combined_loss(ones, std::vector<float>(64, 1.5f), 1e-6), Error);
}

TEST_CASE("combined loss matches a scalar oracle on 100 random 8^3 patches") {
  std::mt19937 rng(5);
  std::vector<float> y, p;
  for (int t = 0; t < 100; ++t) {
    random_pair(512, rng, y, p);
    if (t % 10 == 0) std::fill(y.begin(), y.end(), 0.0f);
    const LossTerms l = combined_loss(y, p, 1e-6);
    CHECK(l.total() >= 0.0);
    CHECK(std::fabs(l.total() - static_cast<double>(oracle::combined_loss(y, p, 1e-6))) <= 1e-9);
  }
}

TEST_CASE("combined loss gradient matches central differences on 20 random 4^3 patches") {
  std::mt19937 rng(6);
  std::vector<float> y, p;
  const double h = 1.0 / 4096.0;  // p +- h stays exact in float
  std::size_t checked = 0;
  for (int t = 0; t < 20; ++t) {
    random_pair(64, rng, y, p);
    const auto g = combined_loss_grad(y, p, 1e-6);
    for (std::size_t i = 0; i < p.size(); ++i) {
      std::vector<float> q = p;
      q[i] = static_cast<float>(p[i] + h);
      const double up = combined_loss(y, q, 1e-6).total();
      q[i] = static_cast<float>(p[i] - h);
      const double dn = combined_loss(y, q, 1e-6).total();
      const double fd = (up - dn) / (2 * h);
      CHECK(std::fabs(fd - g[i]) <= 1e-4 * std::fabs(g[i]) + 1e-9);
      ++checked;
    }
  }
  CHECK(checked >= 100);
}

TEST_CASE("logit-space gradient matches the chain rule through the sigmoid") {
  std::mt19937 rng(7);
  std::vector<float> y, p;
  for (int t = 0; t < 20; ++t) {
    random_pair(64, rng, y, p);
    std::vector<float> z(p.size()), dz(p.size()), sp(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      z[i] = std::log(p[i] / (1.0f - p[i]));
      sp[i] = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(z[i]))));
    }
    const LossTerms l = combined_loss_logits(y, z, 1e-6, dz);
    CHECK(l.total() == doctest::Approx(combined_loss(y, sp, 1e-6).total()).epsilon(1e-12));
    const auto g = combined_loss_grad(y, sp, 1e-6);
    for (std::size_t i = 0; i < z.size(); ++i)
      CHECK(dz[i] == doctest::Approx(g[i] * sp[i] * (1.0 - sp[i])).epsilon(1e-5));
  }
}

TEST_CASE("patch sampling") {
  std::mt19937 rng(8);
  CTVolume v = testing::random_volume({40, 36, 12}, rng, 0.0f, 1.0f);
  BinaryMask m = mask_like(v);
  for (std::size_t z = 5; z < 7; ++z)
    for (std::size_t y = 30; y < 34; ++y)
      for (std::size_t x = 2; x < 5; ++x) m.voxels(x, y, z) = 1;
  const UNetConfig cfg = tiny_config();

  SUBCASE("at least half the draws see the lesion") {
    const auto ps = sample_patches(v, m, cfg, 1, 100);
    const auto hits = std::count_if(ps.begin(), ps.end(), intersects);
    CHECK(hits >= 50);
    for (const auto& p : ps) {
      CHECK(p.image.dims() == Dims{16, 16, 8});
      if (p.lesion_centred) CHECK(intersects(p));
    }
  }
  SUBCASE("fixed seed gives an identical sequence") {
    const auto a = sample_patches(v, m, cfg, 42, 20);
    const auto b = sample_patches(v, m, cfg, 42, 20);
    const auto c = sample_patches(v, m, cfg, 43, 20);
    bool same = true, differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      same = same && a[i].image == b[i].image && a[i].mask == b[i].mask;
      differs = differs || !(a[i].image == c[i].image);
    }
    CHECK(same);
    CHECK(differs);
  }
  SUBCASE("empty masks yield background patches only") {
    const auto ps = sample_patches(v, mask_like(v), cfg, 3, 10);
    CHECK(ps.size() == 10);
    for (const auto& p : ps) CHECK_FALSE(intersects(p));
  }
  SUBCASE("volumes smaller than the patch are edge padded") {
    CTVolume small = testing::random_volume({10, 9, 3}, rng, 0.0f, 1.0f);
    BinaryMask sm = mask_like(small);
    sm.voxels(9, 8, 2) = 1;
    const auto ps = sample_patches(small, sm, cfg, 4, 4);
    for (const auto& p : ps) {
      CHECK(p.image.dims() == Dims{16, 16, 8});
      CHECK(p.image(0, 0, 0) == small.voxels(0, 0, 0));
      CHECK(p.image(15, 15, 7) == small.voxels(9, 8, 2));
      CHECK(p.image(12, 3, 5) == small.voxels(9, 3, 2));
      CHECK(p.mask(15, 15, 7) == 1);
    }
  }
}

TEST_CASE("window starts cover the extent") {
  CHECK(window_starts(10, 16, 0.5) == std::vector<std::size_t>{0});
  CHECK(window_starts(16, 16, 0.5) == std::vector<std::size_t>{0});
  CHECK(window_starts(40, 16, 0.0) == std::vector<std::size_t>{0, 16, 24});
  CHECK(window_starts(40, 16, 0.5) == std::vector<std::size_t>{0, 8, 16, 24});
  CHECK_THROWS_AS(window_starts(40, 16, 1.0), Error);
}

TEST_CASE("sliding-window inference") {
  std::mt19937 rng(9);
  const nn::Dim3 patch{8, 16, 16};
  CTVolume v = testing::random_volume({37, 29, 11}, rng, 0.0f, 1.0f);
  BinaryMask brain = mask_like(v);
  for (std::size_t i = 0; i < brain.voxels.size(); ++i) brain.voxels[i] = (i % 7) != 0;

  SUBCASE("constant model gives the same mask at any overlap") {
    const ConstantModel model(patch, 0.6f);
    const SegMask a = predict_equalized(model, v, brain, {0.0, 0.5, 0});
    const SegMask b = predict_equalized(model, v, brain, {0.5, 0.5, 0});
    CHECK(a.binarized.voxels == b.binarized.voxels);
    CHECK(a.probabilities == b.probabilities);
    CHECK(a.binarized.count() == brain.count());
  }
  SUBCASE("averaging reproduces a voxelwise model exactly and stays inside the brain") {
    const IdentityModel model(patch);
    for (double overlap : {0.0, 0.25, 0.5, 0.75}) {
      const SegMask s = predict_equalized(model, v, brain, {overlap, 0.5, 0});
      REQUIRE(s.probabilities.dims() == v.dims());
      bool exact = true, inside = true, binarized = true;
      for (std::size_t i = 0; i < v.voxels.size(); ++i) {
        const float want = brain.voxels[i] ? v.voxels[i] : 0.0f;
        exact = exact && std::fabs(s.probabilities[i] - want) <= 1e-6f;
        inside = inside && (!s.binarized.voxels[i] || brain.voxels[i]);
        binarized = binarized && (s.binarized.voxels[i] == (s.probabilities[i] >= 0.5f));
      }
      CHECK(exact);
      CHECK(inside);
      CHECK(binarized);
    }
  }
  SUBCASE("all-air volume gives an empty mask") {
    SegmenterModel model(tiny_config(), 1);
    CTVolume air{"air", Grid3<float>({24, 24, 8}, -1000.0f), {1, 1, 5}, {}};
    const SegMask s = predict_volume(model, air, {}, {0.5, 0.5, 0});
    CHECK(s.binarized.count() == 0);
    BinaryMask none = mask_like(air);
    const SegMask forced = predict_equalized(ConstantModel(patch, 1.0f), air, none, {});
    CHECK(forced.binarized.count() == 0);
  }
}

TEST_CASE("small components are removed only when requested") {
  BinaryMask m{"m", Grid3<std::uint8_t>({10, 10, 3}, 0), {}, {}};
  m.voxels(1, 1, 0) = 1;
  m.voxels(2, 2, 1) = 1;  // diagonal neighbour of the first
  for (std::size_t x = 5; x < 9; ++x) m.voxels(x, 7, 2) = 1;
  BinaryMask keep = m;
  remove_small_components(keep, 0);
  CHECK(keep.voxels == m.voxels);
  remove_small_components(m, 3);
  CHECK(m.count() == 4);
  CHECK(m.voxels(1, 1, 0) == 0);
  remove_small_components(m, 5);
  CHECK(m.count() == 0);
}

TEST_CASE("training contract") {
  std::mt19937 rng(10);
  const UNetConfig cfg = tiny_config();
  CTVolume v = testing::random_volume({16, 16, 8}, rng, 0.0f, 1.0f);
  BinaryMask m = mask_like(v);
  SegTrainConfig tc;
  tc.max_epochs = 2;
  tc.patience = 1;
  tc.patches_per_epoch = 4;

  CHECK_THROWS_WITH_AS(train_unet({{v, m}}, {}, cfg, tc), doctest::Contains("no positive supervision"), Error);
  m.voxels(8, 8, 4) = 1;
  tc.learning_rate = 0.0;
  const SegmenterModel fresh(cfg, tc.seed);
  const SegmenterModel trained = train_unet({{v, m}}, {}, cfg, tc);
  CHECK(trained.checksum() == fresh.checksum());

  const auto dir = testing::temp_dir("segmenter");
  trained.save(dir / "unet.ckpt");
  const SegmenterModel loaded = SegmenterModel::load(dir / "unet.ckpt");
  CHECK(loaded.checksum() == trained.checksum());
  CHECK(loaded.config().patch_z == cfg.patch_z);
  CHECK_THROWS_AS(SegmenterModel::load(dir / "missing.ckpt"), Error);

  UNetConfig bad = cfg;
  bad.patch_z = 4;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.patch_overlap = 1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("segmenter learns synthetic blobs and generalizes to held-out volumes") {
  const auto t0 = std::chrono::steady_clock::now();
  phantom::PhantomSpec spec;
  spec.nx = spec.ny = 48;
  spec.nz = 10;
  spec.blob_radius_min = 4.0;
  spec.blob_radius_max = 7.0;
  spec.seed = 3;
  std::vector<TrainingVolume> train, val;
  std::vector<phantom::Phantom> test;
  for (std::size_t i = 0; i < 10; ++i) {
    phantom::Phantom p = phantom::generate(spec, i);
    if (i >= 8) {
      test.push_back(std::move(p));
      continue;
    }
    const Preprocessed pre = preprocess_volume(p.volume, {});
    (i < 6 ? train : val).push_back({pre.equalized, p.lesion});
  }
  UNetConfig cfg;
  cfg.depth = 3;
  cfg.base_channels = 8;
  cfg.patch_x = cfg.patch_y = 32;
  cfg.patch_z = 8;
  SegTrainConfig tc;
  tc.max_epochs = 15;
  tc.patience = 5;
  tc.patches_per_epoch = 32;
  tc.seed = 1;
  SegTrainLog log;
  const SegmenterModel model = train_unet(train, val, cfg, tc, &log);
  REQUIRE(log.best_epoch >= 1);
  CHECK(log.epochs.front().val_loss > log.epochs[log.best_epoch - 1].val_loss);

  for (const auto& p : test) {
    const SegMask a = predict_volume(model, p.volume, {}, {cfg.patch_overlap, 0.5, 0});
    const SegMask b = predict_volume(model, p.volume, {}, {cfg.patch_overlap, 0.5, 0});
    CHECK(a.probabilities == b.probabilities);
    const double d = metrics::dice(a.binarized, p.lesion);
    MESSAGE("held-out ", p.volume.id, " dice ", d);
    CHECK(d >= 0.8);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  MESSAGE("trained ", log.epochs.size(), " epochs in ", secs, " s");
}
