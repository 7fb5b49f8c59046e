#pragma once
// Dense float tensors and trainable parameters for the small CPU networks.

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace ichseg::nn {

/// Five-axis tensor, N x C x D x H x W. Vectors use {N, F, 1, 1, 1}.
struct Tensor {
  std::array<std::size_t, 5> shape{0, 0, 0, 0, 0};
  std::vector<float> data;

  Tensor() = default;
  Tensor(std::size_t n, std::size_t c, std::size_t d, std::size_t h, std::size_t w, float fill = 0.0f)
      : shape{n, c, d, h, w}, data(n * c * d * h * w, fill) {}

  static Tensor matrix(std::size_t rows, std::size_t cols, float fill = 0.0f) { return {rows, cols, 1, 1, 1, fill}; }

  std::size_t n() const { return shape[0]; }
  std::size_t c() const { return shape[1]; }
  std::size_t d() const { return shape[2]; }
  std::size_t h() const { return shape[3]; }
  std::size_t w() const { return shape[4]; }
  std::size_t spatial() const { return shape[2] * shape[3] * shape[4]; }
  std::size_t sample_size() const { return shape[1] * spatial(); }
  std::size_t size() const { return data.size(); }

  float* sample(std::size_t i) { return data.data() + i * sample_size(); }
  const float* sample(std::size_t i) const { return data.data() + i * sample_size(); }
};

struct Parameter {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> value;
  std::vector<float> grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, std::vector<std::size_t> s);
  std::size_t size() const { return value.size(); }
  void zero_grad();
};

/// He-normal initialization with the given fan-in.
void he_normal(Parameter& p, std::size_t fan_in, std::mt19937_64& rng);
void uniform_init(Parameter& p, float bound, std::mt19937_64& rng);

enum class Trans { kNo, kYes };

/// C = (accumulate ? C : 0) + op(A) * op(B), row-major, op(X) is X or X^T.
/// op(A) is M x K, op(B) is K x N.
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
          bool accumulate);

/// FNV-1a over the raw bytes of every value; used to assert bit-identity.
std::uint64_t checksum(const std::vector<const Parameter*>& params);

}  // namespace ichseg::nn
