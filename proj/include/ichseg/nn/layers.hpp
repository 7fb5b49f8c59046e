#pragma once
// Layers with explicit forward and backward passes. Forward passes are const
// so a trained network can be shared by concurrent inference callers; the
// backward pass takes the forward input again and accumulates into grad.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ichseg/nn/tensor.hpp"

namespace ichseg::nn {

struct Dim3 {
  std::size_t d = 1, h = 1, w = 1;
  std::size_t volume() const { return d * h * w; }
};

using ParamRefs = std::vector<Parameter*>;
using ConstParamRefs = std::vector<const Parameter*>;

class Conv3d {
 public:
  Conv3d() = default;
  Conv3d(const std::string& name, std::size_t in, std::size_t out, Dim3 kernel, Dim3 stride, Dim3 pad, bool bias,
         std::mt19937_64& rng);

  Tensor forward(const Tensor& x) const;
  /// Accumulates weight/bias gradients; returns dL/dx when need_dx.
  Tensor backward(const Tensor& x, const Tensor& dy, bool need_dx = true);

  void collect(ParamRefs& out);
  void collect(ConstParamRefs& out) const;

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  Dim3 output_dims(const Tensor& x) const;

  Parameter weight;  // [out, in, kd, kh, kw]
  Parameter bias;    // [out], empty when disabled

 private:
  void im2col(const float* x, Dim3 in, Dim3 outd, float* col) const;
  void col2im(const float* col, Dim3 in, Dim3 outd, float* dx) const;

  std::size_t in_ = 0, out_ = 0;
  Dim3 k_, s_, p_;
  bool has_bias_ = false;
};

/// Transposed convolution with kernel equal to stride (non-overlapping).
class ConvTranspose3d {
 public:
  ConvTranspose3d() = default;
  ConvTranspose3d(const std::string& name, std::size_t in, std::size_t out, Dim3 kernel, std::mt19937_64& rng);

  Tensor forward(const Tensor& x) const;
  Tensor backward(const Tensor& x, const Tensor& dy, bool need_dx = true);
  void collect(ParamRefs& out);
  void collect(ConstParamRefs& out) const;

  Parameter weight;  // [in, out, kd, kh, kw]
  Parameter bias;    // [out]

 private:
  std::size_t in_ = 0, out_ = 0;
  Dim3 k_;
};

/// Max pooling with kernel equal to stride; trailing partial windows are dropped.
class MaxPool3d {
 public:
  explicit MaxPool3d(Dim3 kernel = {}) : k_(kernel) {}
  Tensor forward(const Tensor& x, std::vector<std::uint32_t>* argmax = nullptr) const;
  Tensor backward(const Tensor& x, const Tensor& dy, const std::vector<std::uint32_t>& argmax) const;
  Dim3 kernel() const { return k_; }

 private:
  Dim3 k_;
};

class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng);

  /// x is {N, in, 1, 1, 1}; returns {N, out, 1, 1, 1}.
  Tensor forward(const Tensor& x) const;
  Tensor backward(const Tensor& x, const Tensor& dy, bool need_dx = true);
  void collect(ParamRefs& out);
  void collect(ConstParamRefs& out) const;

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

  Parameter weight;  // [out, in]
  Parameter bias;    // [out]

 private:
  std::size_t in_ = 0, out_ = 0;
};

/// Unidirectional LSTM over {B, T, F, 1, 1} sequences, returning {B, T, H, 1, 1}.
class Lstm {
 public:
  struct Trace {
    std::size_t batch = 0, steps = 0;
    std::vector<float> gates;  // [T, B, 4H] post-activation i, f, g, o
    std::vector<float> cells;  // [T + 1, B, H], cells[0] is the initial state
    std::vector<float> hidden; // [T + 1, B, H]
  };

  Lstm() = default;
  Lstm(const std::string& name, std::size_t input, std::size_t hidden, std::mt19937_64& rng);

  Tensor forward(const Tensor& x, Trace* trace = nullptr) const;
  Tensor backward(const Tensor& x, const Trace& trace, const Tensor& dy, bool need_dx = true);
  void collect(ParamRefs& out);
  void collect(ConstParamRefs& out) const;

  std::size_t hidden_size() const { return hidden_; }
  std::size_t input_size() const { return input_; }

  Parameter w_ih;  // [4H, F]
  Parameter w_hh;  // [4H, H]
  Parameter b;     // [4H]

 private:
  std::size_t input_ = 0, hidden_ = 0;
};

/// Reverses the time axis of a {B, T, F, 1, 1} tensor.
Tensor reverse_time(const Tensor& x);

void relu_inplace(Tensor& x);
/// Masks dy where the forward output y was not positive.
void relu_backward(const Tensor& y, Tensor& dy);

Tensor global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const Tensor& x, const Tensor& dy);

/// Channel-wise concatenation of tensors with equal N, D, H, W.
Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& g, std::size_t ca, Tensor& ga, Tensor& gb);

void add_inplace(Tensor& dst, const Tensor& src);

}  // namespace ichseg::nn
