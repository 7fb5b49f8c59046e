#include "ichseg/nn/resnet.hpp"

#include "ichseg/volume.hpp"

namespace ichseg::nn {

std::size_t ResNetSpec::total_stride() const {
  std::size_t s = 2 * (stem_pool ? 2 : 1);
  for (std::size_t v : strides) s *= v;
  return s;
}

ResNetSpec resnet_spec(const std::string& id) {
  ResNetSpec s;
  if (id == "resnet-tiny") {
    s.stem_channels = 16;
    s.stem_kernel = 3;
    s.blocks = {1, 1};
    s.channels = {16, 32};
    s.strides = {1, 2};
    return s;
  }
  s.stem_channels = 64;
  s.stem_kernel = 7;
  s.stem_pool = true;
  s.channels = {64, 128, 256, 512};
  s.strides = {1, 2, 2, 2};
  if (id == "resnet18") {
    s.blocks = {2, 2, 2, 2};
  } else if (id == "resnet34") {
    s.blocks = {3, 4, 6, 3};
  } else if (id == "resnet101") {
    s.blocks = {3, 4, 23, 3};
    s.bottleneck = true;
  } else {
    throw Error("unknown architecture_id '" + id + "' (expected resnet-tiny, resnet18, resnet34 or resnet101)");
  }
  return s;
}

ResNet::ResNet(const ResNetSpec& spec, std::size_t input_channels, std::mt19937_64& rng) : spec_(spec) {
  if (spec.blocks.empty() || spec.blocks.size() != spec.channels.size() || spec.blocks.size() != spec.strides.size())
    throw Error("inconsistent backbone stage description");
  const std::size_t k = spec.stem_kernel;
  stem_ = Conv3d("stem", input_channels, spec.stem_channels, {1, k, k}, {1, 2, 2}, {0, k / 2, k / 2}, false, rng);
  std::size_t in = spec.stem_channels;
  for (std::size_t s = 0; s < spec.blocks.size(); ++s)
    for (std::size_t i = 0; i < spec.blocks[s]; ++i) {
      const std::size_t stride = i == 0 ? spec.strides[s] : 1;
      const std::size_t mid = spec.channels[s];
      const std::size_t out = spec.bottleneck ? mid * 4 : mid;
      const std::string name = "layer" + std::to_string(s + 1) + "." + std::to_string(i);
      Block b;
      if (spec.bottleneck) {
        b.branch.emplace_back(name + ".conv1", in, mid, Dim3{1, 1, 1}, Dim3{1, 1, 1}, Dim3{0, 0, 0}, false, rng);
        b.branch.emplace_back(name + ".conv2", mid, mid, Dim3{1, 3, 3}, Dim3{1, stride, stride}, Dim3{0, 1, 1}, false,
                              rng);
        b.branch.emplace_back(name + ".conv3", mid, out, Dim3{1, 1, 1}, Dim3{1, 1, 1}, Dim3{0, 0, 0}, false, rng);
      } else {
        b.branch.emplace_back(name + ".conv1", in, out, Dim3{1, 3, 3}, Dim3{1, stride, stride}, Dim3{0, 1, 1}, false,
                              rng);
        b.branch.emplace_back(name + ".conv2", out, out, Dim3{1, 3, 3}, Dim3{1, 1, 1}, Dim3{0, 1, 1}, false, rng);
      }
      std::fill(b.branch.back().weight.value.begin(), b.branch.back().weight.value.end(), 0.0f);
      if (stride != 1 || in != out)
        b.shortcut.emplace(name + ".shortcut", in, out, Dim3{1, 1, 1}, Dim3{1, stride, stride},
                                              Dim3{0, 0, 0}, false, rng);
      blocks_.push_back(std::move(b));
      in = out;
    }
}

Tensor ResNet::block_forward(const Block& b, const Tensor& x, BlockTrace* t) const {
  Tensor a = x;
  for (std::size_t i = 0; i + 1 < b.branch.size(); ++i) {
    a = b.branch[i].forward(a);
    relu_inplace(a);
    if (t) t->acts.push_back(a);
  }
  Tensor y = b.branch.back().forward(a);
  if (b.shortcut)
    add_inplace(y, b.shortcut->forward(x));
  else
    add_inplace(y, x);
  relu_inplace(y);
  if (t) {
    t->x = x;
    t->out = y;
  }
  return y;
}

Tensor ResNet::block_backward(Block& b, const BlockTrace& t, Tensor dy) {
  relu_backward(t.out, dy);
  Tensor dx = b.shortcut ? b.shortcut->backward(t.x, dy) : dy;
  Tensor g = dy;
  for (std::size_t i = b.branch.size(); i-- > 0;) {
    const Tensor& in = i == 0 ? t.x : t.acts[i - 1];
    g = b.branch[i].backward(in, g);
    if (i > 0) relu_backward(t.acts[i - 1], g);
  }
  add_inplace(dx, g);
  return dx;
}

Tensor ResNet::forward(const Tensor& x, Trace* trace) const {
  Tensor a = stem_.forward(x);
  relu_inplace(a);
  if (trace) {
    trace->input = x;
    trace->stem_act = a;
    trace->blocks.clear();
  }
  if (spec_.stem_pool) {
    MaxPool3d pool({1, 2, 2});
    a = pool.forward(a, trace ? &trace->pool_arg : nullptr);
    if (trace) trace->pooled = a;
  }
  for (const Block& b : blocks_) {
    if (trace) {
      trace->blocks.emplace_back();
      a = block_forward(b, a, &trace->blocks.back());
    } else {
      a = block_forward(b, a, nullptr);
    }
  }
  return a;
}

void ResNet::backward(const Trace& trace, const Tensor& dfeat) {
  Tensor g = dfeat;
  for (std::size_t i = blocks_.size(); i-- > 0;) g = block_backward(blocks_[i], trace.blocks[i], std::move(g));
  if (spec_.stem_pool) g = MaxPool3d({1, 2, 2}).backward(trace.stem_act, g, trace.pool_arg);
  relu_backward(trace.stem_act, g);
  stem_.backward(trace.input, g, false);
}

void ResNet::collect(ParamRefs& out) {
  stem_.collect(out);
  for (Block& b : blocks_) {
    for (Conv3d& c : b.branch) c.collect(out);
    if (b.shortcut) b.shortcut->collect(out);
  }
}

void ResNet::collect(ConstParamRefs& out) const {
  stem_.collect(out);
  for (const Block& b : blocks_) {
    for (const Conv3d& c : b.branch) c.collect(out);
    if (b.shortcut) b.shortcut->collect(out);
  }
}

}  // namespace ichseg::nn
