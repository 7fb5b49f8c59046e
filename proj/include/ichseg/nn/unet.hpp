#pragma once
// 3D encoder-decoder with skip connections on {N, C, D, H, W} patches.

#include <vector>

#include "ichseg/nn/layers.hpp"

namespace ichseg::nn {

struct UNetSpec {
  std::size_t depth = 3;          // encoder levels
  std::size_t base_channels = 8;  // doubled per level
  std::size_t in_channels = 1;
  std::vector<Dim3> pools;        // depth - 1 pooling kernels

  std::size_t channels(std::size_t level) const { return base_channels << level; }
};

/// In-plane pooling is always 2; axial pooling is 2 while the patch depth at
/// that level is even and at least 4, else 1. Throws when the in-plane patch
/// size is not divisible by 2^(depth - 1).
std::vector<Dim3> unet_pools(Dim3 patch, std::size_t depth);

class UNet3d {
 public:
  struct Trace {
    std::vector<Tensor> enc_in, enc_a1, enc_a2;
    std::vector<std::vector<std::uint32_t>> pool_arg;
    std::vector<Tensor> dec_in, dec_cat, dec_a1, dec_a2;
    Tensor head_in;
  };

  UNet3d() = default;
  UNet3d(const UNetSpec& spec, std::mt19937_64& rng);

  /// Returns per-voxel logits {N, 1, D, H, W}.
  Tensor forward(const Tensor& x, Trace* trace = nullptr) const;
  void backward(const Trace& trace, const Tensor& dlogits);

  void collect(ParamRefs& out);
  void collect(ConstParamRefs& out) const;
  const UNetSpec& spec() const { return spec_; }

 private:
  struct DoubleConv {
    Conv3d a, b;
  };
  UNetSpec spec_;
  std::vector<DoubleConv> enc_;
  std::vector<ConvTranspose3d> up_;
  std::vector<DoubleConv> dec_;
  Conv3d head_;
};

}  // namespace ichseg::nn
