#pragma once
// Residual image backbones for 2D slices stored as {N, C, 1, H, W} tensors.
// Convolutions carry no bias and there is no normalization layer, so a zero
// input gives a zero feature map. The last convolution of every residual
// branch starts at zero, making each block the identity at initialization.

#include <optional>
#include <string>
#include <vector>

#include "ichseg/nn/layers.hpp"

namespace ichseg::nn {

struct ResNetSpec {
  std::size_t stem_channels = 16;
  std::size_t stem_kernel = 3;
  bool stem_pool = false;
  bool bottleneck = false;
  std::vector<std::size_t> blocks;    // per stage
  std::vector<std::size_t> channels;  // per stage (bottleneck: inner width)
  std::vector<std::size_t> strides;   // per stage

  std::size_t feature_dim() const { return bottleneck ? channels.back() * 4 : channels.back(); }
  std::size_t total_stride() const;
};

/// resnet-tiny, resnet18, resnet34, resnet101. Unknown ids throw.
ResNetSpec resnet_spec(const std::string& architecture_id);

class ResNet {
 public:
  struct BlockTrace {
    Tensor x;
    std::vector<Tensor> acts;  // post-ReLU activations inside the branch
    Tensor out;                // post-ReLU block output
  };
  struct Trace {
    Tensor input;
    Tensor stem_act;
    Tensor pooled;
    std::vector<std::uint32_t> pool_arg;
    std::vector<BlockTrace> blocks;
  };

  ResNet() = default;
  ResNet(const ResNetSpec& spec, std::size_t input_channels, std::mt19937_64& rng);

  /// Returns the final feature map {N, feature_dim, 1, h, w}.
  Tensor forward(const Tensor& x, Trace* trace = nullptr) const;
  /// Accumulates parameter gradients from dL/d(feature map).
  void backward(const Trace& trace, const Tensor& dfeat);

  void collect(ParamRefs& out);
  void collect(ConstParamRefs& out) const;

  const ResNetSpec& spec() const { return spec_; }
  std::size_t feature_dim() const { return spec_.feature_dim(); }

 private:
  struct Block {
    std::vector<Conv3d> branch;
    std::optional<Conv3d> shortcut;
  };
  Tensor block_forward(const Block& b, const Tensor& x, BlockTrace* t) const;
  Tensor block_backward(Block& b, const BlockTrace& t, Tensor dy);

  ResNetSpec spec_;
  Conv3d stem_;
  std::vector<Block> blocks_;
};

}  // namespace ichseg::nn
