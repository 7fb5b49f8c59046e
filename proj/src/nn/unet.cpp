#include "ichseg/nn/unet.hpp"

#include "ichseg/volume.hpp"

namespace ichseg::nn {

namespace {

constexpr Dim3 k3{3, 3, 3};
constexpr Dim3 s1{1, 1, 1};
constexpr Dim3 p1{1, 1, 1};

}  // namespace

std::vector<Dim3> unet_pools(Dim3 patch, std::size_t depth) {
  if (depth == 0) throw Error("U-Net depth must be at least 1");
  std::vector<Dim3> pools;
  Dim3 cur = patch;
  for (std::size_t l = 0; l + 1 < depth; ++l) {
    if (cur.h % 2 != 0 || cur.w % 2 != 0)
      throw Error("patch in-plane size must be divisible by 2^(depth - 1)");
    const std::size_t pz = (cur.d % 2 == 0 && cur.d >= 4) ? 2 : 1;
    pools.push_back({pz, 2, 2});
    cur = {cur.d / pz, cur.h / 2, cur.w / 2};
  }
  return pools;
}

UNet3d::UNet3d(const UNetSpec& spec, std::mt19937_64& rng) : spec_(spec) {
  if (spec.pools.size() + 1 != spec.depth) throw Error("U-Net needs depth - 1 pooling kernels");
  std::size_t in = spec.in_channels;
  for (std::size_t l = 0; l < spec.depth; ++l) {
    const std::size_t ch = spec.channels(l);
    const std::string n = "enc" + std::to_string(l);
    enc_.push_back({Conv3d(n + ".a", in, ch, k3, s1, p1, true, rng), Conv3d(n + ".b", ch, ch, k3, s1, p1, true, rng)});
    in = ch;
  }
  for (std::size_t l = 0; l + 1 < spec.depth; ++l) {
    const std::size_t ch = spec.channels(l);
    const std::string n = "dec" + std::to_string(l);
    up_.emplace_back("up" + std::to_string(l), spec.channels(l + 1), ch, spec.pools[l], rng);
    dec_.push_back({Conv3d(n + ".a", 2 * ch, ch, k3, s1, p1, true, rng), Conv3d(n + ".b", ch, ch, k3, s1, p1, true, rng)});
  }
  head_ = Conv3d("head", spec.channels(0), 1, s1, s1, {0, 0, 0}, true, rng);
}

Tensor UNet3d::forward(const Tensor& x, Trace* t) const {
  const std::size_t depth = spec_.depth;
  if (t) *t = Trace{};
  std::vector<Tensor> skip(depth);
  Tensor cur = x;
  for (std::size_t l = 0; l < depth; ++l) {
    Tensor a1 = enc_[l].a.forward(cur);
    relu_inplace(a1);
    Tensor a2 = enc_[l].b.forward(a1);
    relu_inplace(a2);
    if (t) {
      t->enc_in.push_back(cur);
      t->enc_a1.push_back(a1);
      t->enc_a2.push_back(a2);
    }
    if (l + 1 < depth) {
      std::vector<std::uint32_t> arg;
      cur = MaxPool3d(spec_.pools[l]).forward(a2, t ? &arg : nullptr);
      if (t) t->pool_arg.push_back(std::move(arg));
    }
    skip[l] = std::move(a2);
  }
  cur = std::move(skip[depth - 1]);
  if (t) {
    t->dec_in.resize(depth - 1);
    t->dec_cat.resize(depth - 1);
    t->dec_a1.resize(depth - 1);
    t->dec_a2.resize(depth - 1);
  }
  for (std::size_t l = depth - 1; l-- > 0;) {
    Tensor u = up_[l].forward(cur);
    Tensor c = concat_channels(skip[l], u);
    Tensor a1 = dec_[l].a.forward(c);
    relu_inplace(a1);
    Tensor a2 = dec_[l].b.forward(a1);
    relu_inplace(a2);
    if (t) {
      t->dec_in[l] = std::move(cur);
      t->dec_cat[l] = std::move(c);
      t->dec_a1[l] = a1;
      t->dec_a2[l] = a2;
    }
    cur = std::move(a2);
  }
  Tensor logits = head_.forward(cur);
  if (t) t->head_in = std::move(cur);
  return logits;
}

void UNet3d::backward(const Trace& t, const Tensor& dlogits) {
  const std::size_t depth = spec_.depth;
  Tensor g = head_.backward(t.head_in, dlogits);
  std::vector<Tensor> dskip(depth);
  for (std::size_t l = 0; l + 1 < depth; ++l) {
    relu_backward(t.dec_a2[l], g);
    g = dec_[l].b.backward(t.dec_a1[l], g);
    relu_backward(t.dec_a1[l], g);
    g = dec_[l].a.backward(t.dec_cat[l], g);
    Tensor gs, gu;
    split_channels(g, spec_.channels(l), gs, gu);
    dskip[l] = std::move(gs);
    g = up_[l].backward(t.dec_in[l], gu);
  }
  // g is now the gradient w.r.t. the deepest encoder output.
  for (std::size_t l = depth; l-- > 0;) {
    if (l + 1 < depth) {
      Tensor gp = MaxPool3d(spec_.pools[l]).backward(t.enc_a2[l], g, t.pool_arg[l]);
      add_inplace(gp, dskip[l]);
      g = std::move(gp);
    }
    relu_backward(t.enc_a2[l], g);
    g = enc_[l].b.backward(t.enc_a1[l], g);
    relu_backward(t.enc_a1[l], g);
    g = enc_[l].a.backward(t.enc_in[l], g, l > 0);
  }
}

void UNet3d::collect(ParamRefs& out) {
  for (auto& e : enc_) {
    e.a.collect(out);
    e.b.collect(out);
  }
  for (std::size_t l = 0; l < up_.size(); ++l) {
    up_[l].collect(out);
    dec_[l].a.collect(out);
    dec_[l].b.collect(out);
  }
  head_.collect(out);
}

void UNet3d::collect(ConstParamRefs& out) const {
  for (const auto& e : enc_) {
    e.a.collect(out);
    e.b.collect(out);
  }
  for (std::size_t l = 0; l < up_.size(); ++l) {
    up_[l].collect(out);
    dec_[l].a.collect(out);
    dec_[l].b.collect(out);
  }
  head_.collect(out);
}

}  // namespace ichseg::nn
