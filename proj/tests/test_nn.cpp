#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "ichseg/nn/checkpoint.hpp"
#include "ichseg/nn/layers.hpp"
#include "ichseg/nn/optim.hpp"
#include "ichseg/nn/unet.hpp"
#include "test_support.hpp"

using namespace ichseg::nn;

namespace {

Tensor random_tensor(std::array<std::size_t, 5> s, std::mt19937_64& rng) {
  Tensor t(s[0], s[1], s[2], s[3], s[4]);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (float& v : t.data) v = u(rng);
  return t;
}

// Loss = sum(r * f(x)); analytical gradients are checked against central differences.
double probe(const Tensor& y, const Tensor& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += static_cast<double>(y.data[i]) * r.data[i];
  return s;
}

void check_close(double analytic, double numeric) {
  CHECK(std::fabs(analytic - numeric) <= 2e-2 * std::max(1.0, std::fabs(numeric)));
}

void grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, const Tensor& dx,
                const ParamRefs& params, const Tensor& r, std::mt19937_64& rng) {
  const float eps = 1e-2f;
  std::uniform_int_distribution<std::size_t> pick_x(0, x.size() - 1);
  for (int t = 0; t < 12 && dx.size() > 0; ++t) {
    const std::size_t i = pick_x(rng);
    const float keep = x.data[i];
    x.data[i] = keep + eps;
    const double up = probe(f(x), r);
    x.data[i] = keep - eps;
    const double dn = probe(f(x), r);
    x.data[i] = keep;
    check_close(dx.data[i], (up - dn) / (2 * eps));
  }
  for (Parameter* p : params) {
    std::uniform_int_distribution<std::size_t> pick(0, p->size() - 1);
    for (int t = 0; t < 8; ++t) {
      const std::size_t i = pick(rng);
      const float keep = p->value[i];
      p->value[i] = keep + eps;
      const double up = probe(f(x), r);
      p->value[i] = keep - eps;
      const double dn = probe(f(x), r);
      p->value[i] = keep;
      CAPTURE(p->name);
      check_close(p->grad[i], (up - dn) / (2 * eps));
    }
  }
}

}  // namespace

TEST_CASE("conv3d matches a direct convolution") {
  std::mt19937_64 rng(1);
  Conv3d conv("c", 2, 3, {3, 3, 3}, {1, 2, 1}, {1, 1, 0}, true, rng);
  const Tensor x = random_tensor({2, 2, 4, 5, 6}, rng);
  for (float& b : conv.bias.value) b = 0.3f;
  const Tensor y = conv.forward(x);
  const Dim3 od = conv.output_dims(x);
  REQUIRE(y.shape == std::array<std::size_t, 5>{2, 3, od.d, od.h, od.w});
  CHECK(od.d == 4);
  CHECK(od.h == 3);
  CHECK(od.w == 4);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t o = 0; o < 3; ++o)
      for (std::size_t d = 0; d < od.d; ++d)
        for (std::size_t h = 0; h < od.h; ++h)
          for (std::size_t w = 0; w < od.w; ++w) {
            double s = 0.3;
            for (std::size_t c = 0; c < 2; ++c)
              for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b)
                  for (int e = 0; e < 3; ++e) {
                    const long id = static_cast<long>(d) + a - 1, ih = static_cast<long>(h * 2) + b - 1,
                               iw = static_cast<long>(w) + e;
                    if (id < 0 || id >= 4 || ih < 0 || ih >= 5 || iw < 0 || iw >= 6) continue;
                    s += conv.weight.value[(((o * 2 + c) * 3 + a) * 3 + b) * 3 + e] *
                         x.data[(((n * 2 + c) * 4 + id) * 5 + ih) * 6 + iw];
                  }
            CHECK(y.data[(((n * 3 + o) * od.d + d) * od.h + h) * od.w + w] == doctest::Approx(s).epsilon(1e-4));
          }
}

TEST_CASE("layer gradients match finite differences") {
  std::mt19937_64 rng(2);

  SUBCASE("conv3d") {
    Conv3d conv("c", 2, 3, {1, 3, 3}, {1, 2, 2}, {0, 1, 1}, true, rng);
    Tensor x = random_tensor({2, 2, 2, 5, 5}, rng);
    const Tensor y = conv.forward(x);
    const Tensor r = random_tensor(y.shape, rng);
    const Tensor dx = conv.backward(x, r);
    ParamRefs ps;
    conv.collect(ps);
    grad_check([&](const Tensor& in) { return conv.forward(in); }, x, dx, ps, r, rng);
  }
  SUBCASE("pointwise conv3d") {
    Conv3d conv("p", 3, 2, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, false, rng);
    Tensor x = random_tensor({2, 3, 2, 3, 3}, rng);
    const Tensor r = random_tensor(conv.forward(x).shape, rng);
    const Tensor dx = conv.backward(x, r);
    ParamRefs ps;
    conv.collect(ps);
    grad_check([&](const Tensor& in) { return conv.forward(in); }, x, dx, ps, r, rng);
  }
  SUBCASE("transposed conv") {
    ConvTranspose3d up("u", 3, 2, {1, 2, 2}, rng);
    Tensor x = random_tensor({2, 3, 2, 2, 3}, rng);
    const Tensor y = up.forward(x);
    CHECK(y.shape == std::array<std::size_t, 5>{2, 2, 2, 4, 6});
    const Tensor r = random_tensor(y.shape, rng);
    const Tensor dx = up.backward(x, r);
    ParamRefs ps;
    up.collect(ps);
    grad_check([&](const Tensor& in) { return up.forward(in); }, x, dx, ps, r, rng);
  }
  SUBCASE("linear") {
    Linear fc("fc", 5, 3, rng);
    Tensor x = random_tensor({4, 5, 1, 1, 1}, rng);
    const Tensor r = random_tensor({4, 3, 1, 1, 1}, rng);
    const Tensor dx = fc.backward(x, r);
    ParamRefs ps;
    fc.collect(ps);
    grad_check([&](const Tensor& in) { return fc.forward(in); }, x, dx, ps, r, rng);
  }
  SUBCASE("lstm") {
    Lstm lstm("l", 3, 4, rng);
    Tensor x = random_tensor({2, 5, 3, 1, 1}, rng);
    Lstm::Trace trace;
    const Tensor y = lstm.forward(x, &trace);
    const Tensor r = random_tensor(y.shape, rng);
    const Tensor dx = lstm.backward(x, trace, r);
    ParamRefs ps;
    lstm.collect(ps);
    grad_check([&](const Tensor& in) { return lstm.forward(in); }, x, dx, ps, r, rng);
  }
  SUBCASE("pooling, relu and global average") {
    MaxPool3d pool({1, 2, 2});
    Tensor x = random_tensor({2, 2, 2, 4, 4}, rng);
    auto f = [&](const Tensor& in) {
      Tensor p = pool.forward(in);
      relu_inplace(p);
      return global_avg_pool(p);
    };
    std::vector<std::uint32_t> arg;
    Tensor p = pool.forward(x, &arg);
    relu_inplace(p);
    const Tensor g = global_avg_pool(p);
    const Tensor r = random_tensor(g.shape, rng);
    Tensor dp = global_avg_pool_backward(p, r);
    relu_backward(p, dp);
    const Tensor dx = pool.backward(x, dp, arg);
    grad_check(f, x, dx, {}, r, rng);
  }
  SUBCASE("unet") {
    UNetSpec spec;
    spec.depth = 2;
    spec.base_channels = 2;
    spec.pools = unet_pools({4, 8, 8}, 2);
    CHECK(spec.pools[0].d == 2);
    UNet3d net(spec, rng);
    Tensor x = random_tensor({1, 1, 4, 8, 8}, rng);
    UNet3d::Trace trace;
    const Tensor y = net.forward(x, &trace);
    CHECK(y.shape == std::array<std::size_t, 5>{1, 1, 4, 8, 8});
    const Tensor r = random_tensor(y.shape, rng);
    net.backward(trace, r);
    ParamRefs ps;
    net.collect(ps);
    // Many ReLUs sit between each weight and the output, so an occasional
    // probe straddles a kink; require nearly all probes to agree instead.
    const float eps = 1e-3f;
    int agree = 0, total = 0;
    for (Parameter* p : ps) {
      std::uniform_int_distribution<std::size_t> pick(0, p->size() - 1);
      for (int t = 0; t < 8; ++t) {
        const std::size_t i = pick(rng);
        const float keep = p->value[i];
        p->value[i] = keep + eps;
        const double up = probe(net.forward(x), r);
        p->value[i] = keep - eps;
        const double dn = probe(net.forward(x), r);
        p->value[i] = keep;
        const double numeric = (up - dn) / (2 * eps);
        agree += std::fabs(p->grad[i] - numeric) <= 5e-2 * std::max(1.0, std::fabs(numeric));
        ++total;
      }
    }
    CHECK(agree >= total - total / 10);
  }
}

TEST_CASE("unet pooling follows the patch shape") {
  const auto p = unet_pools({8, 32, 32}, 4);
  REQUIRE(p.size() == 3);
  CHECK(p[0].d == 2);
  CHECK(p[1].d == 2);
  CHECK(p[2].d == 1);  // axial extent is down to 2
  CHECK(p[2].h == 2);
  CHECK_THROWS(unet_pools({8, 12, 12}, 4));
}

TEST_CASE("reverse_time is an involution") {
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({2, 4, 3, 1, 1}, rng);
  const Tensor y = reverse_time(x);
  CHECK(y.data[0] == x.data[9]);
  CHECK(reverse_time(y).data == x.data);
}

TEST_CASE("concat and split are inverse") {
  std::mt19937_64 rng(4);
  const Tensor a = random_tensor({2, 2, 1, 2, 2}, rng);
  const Tensor b = random_tensor({2, 3, 1, 2, 2}, rng);
  Tensor ga, gb;
  split_channels(concat_channels(a, b), 2, ga, gb);
  CHECK(ga.data == a.data);
  CHECK(gb.data == b.data);
}

TEST_CASE("optimizers") {
  std::mt19937_64 rng(5);
  SUBCASE("zero learning rate leaves parameters unchanged") {
    for (auto kind : {OptimizerKind::kSgd, OptimizerKind::kAdam}) {
      Linear fc("fc", 3, 2, rng);
      const auto before = fc.weight.value;
      ParamRefs ps;
      fc.collect(ps);
      Optimizer opt(ps, {kind, 0.0});
      for (float& g : fc.weight.grad) g = 1.0f;
      opt.step();
      CHECK(fc.weight.value == before);
    }
  }
  SUBCASE("both minimize a quadratic") {
    for (auto kind : {OptimizerKind::kSgd, OptimizerKind::kAdam}) {
      Parameter p("p", {4});
      p.value = {3.0f, -2.0f, 1.0f, 5.0f};
      Optimizer opt({&p}, {kind, kind == OptimizerKind::kSgd ? 0.05 : 0.1});
      for (int i = 0; i < 500; ++i) {
        opt.zero_grad();
        for (std::size_t j = 0; j < 4; ++j) p.grad[j] = 2.0f * p.value[j];
        opt.step();
      }
      for (float v : p.value) CHECK(std::fabs(v) < 1e-2);
    }
  }
  SUBCASE("frozen parameters are skipped") {
    Parameter p("p", {2});
    p.trainable = false;
    Optimizer opt({&p}, {OptimizerKind::kSgd, 1.0});
    p.grad = {1.0f, 1.0f};
    opt.step();
    CHECK(p.value == std::vector<float>{0.0f, 0.0f});
  }
}

TEST_CASE("checkpoint round trip") {
  std::mt19937_64 rng(6);
  const auto dir = ichseg::testing::temp_dir("ckpt");
  Conv3d conv("c", 2, 3, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, true, rng);
  Linear fc("fc", 3, 1, rng);
  ConstParamRefs cs;
  conv.collect(cs);
  fc.collect(cs);
  save_checkpoint(dir / "m.ckpt", {{"stage", "backbone"}}, cs);
  CHECK(read_checkpoint_meta(dir / "m.ckpt").at("stage") == "backbone");

  std::mt19937_64 other(99);
  Conv3d conv2("c", 2, 3, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, true, other);
  Linear fc2("fc", 3, 1, other);
  ParamRefs ps;
  conv2.collect(ps);
  fc2.collect(ps);
  load_checkpoint(dir / "m.ckpt", ps);
  CHECK(conv2.weight.value == conv.weight.value);
  CHECK(fc2.bias.value == fc.bias.value);

  Linear wrong("fc", 4, 1, other);
  ParamRefs bad;
  wrong.collect(bad);
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "m.ckpt", bad), doctest::Contains("shape mismatch"), ichseg::Error);
  Linear missing("head", 3, 1, other);
  ParamRefs miss;
  missing.collect(miss);
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "m.ckpt", miss), doctest::Contains("lacks tensor"), ichseg::Error);
  CHECK_THROWS_AS(read_checkpoint_meta(dir / "nope.ckpt"), ichseg::Error);
}
