#pragma once
// Volume containers shared by every stage. Layout is x fastest, z (axial
// slice axis) slowest, so one axial slice is a contiguous block.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ichseg {

/// Error raised for violated contracts and malformed inputs.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dims {
  std::size_t nx = 0;
  std::size_t ny = 0;
  std::size_t nz = 0;

  std::size_t voxels() const { return nx * ny * nz; }
  std::size_t slice_voxels() const { return nx * ny; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

std::string to_string(const Dims& d);

/// Physical voxel size in mm.
struct Spacing {
  double dx = 1.0;
  double dy = 1.0;
  double dz = 1.0;

  bool valid() const { return dx > 0.0 && dy > 0.0 && dz > 0.0; }
  friend bool operator==(const Spacing&, const Spacing&) = default;
};

/// Raw NIfTI-1 header bytes carried through unchanged (orientation, units,
/// description). Empty when the volume was created in memory.
struct ImageMeta {
  std::optional<std::array<std::uint8_t, 348>> nifti_header;
};

template <class T>
class Grid3 {
 public:
  Grid3() = default;
  explicit Grid3(Dims dims, T fill = T{}) : dims_(dims), data_(dims.voxels(), fill) {}
  Grid3(Dims dims, std::vector<T> data) : dims_(dims), data_(std::move(data)) {
    if (data_.size() != dims_.voxels()) throw Error("grid data size does not match dims " + to_string(dims_));
  }

  const Dims& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return x + dims_.nx * (y + dims_.ny * z);
  }
  T& operator()(std::size_t x, std::size_t y, std::size_t z) { return data_[index(x, y, z)]; }
  const T& operator()(std::size_t x, std::size_t y, std::size_t z) const { return data_[index(x, y, z)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> slice(std::size_t z) { return {data_.data() + z * dims_.slice_voxels(), dims_.slice_voxels()}; }
  std::span<const T> slice(std::size_t z) const {
    return {data_.data() + z * dims_.slice_voxels(), dims_.slice_voxels()};
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  friend bool operator==(const Grid3&, const Grid3&) = default;

 private:
  Dims dims_;
  std::vector<T> data_;
};

/// Scalar CT volume in Hounsfield-like units (or a derived intensity).
struct CTVolume {
  std::string id;
  Grid3<float> voxels;
  Spacing spacing;
  ImageMeta meta;

  const Dims& dims() const { return voxels.dims(); }
};

/// Binary 3D mask aligned with a CTVolume; values are 0 or 1.
struct BinaryMask {
  std::string id;
  Grid3<std::uint8_t> voxels;
  Spacing spacing;
  ImageMeta meta;

  const Dims& dims() const { return voxels.dims(); }
  std::size_t count() const;
};

using LesionMask = BinaryMask;
using BrainMask = BinaryMask;

/// Empty mask sharing geometry and metadata with a volume.
BinaryMask mask_like(const CTVolume& v, std::string id = {});
BinaryMask mask_like(const BinaryMask& m, std::string id = {});

/// Throws unless the volume satisfies the CTVolume invariants.
void validate(const CTVolume& v);

/// Throws unless every value is 0 or 1.
void validate_binary(const BinaryMask& m, std::string_view what);

/// Plain 2D scalar image, row-major (x fastest).
struct Image2D {
  std::size_t nx = 0;
  std::size_t ny = 0;
  std::vector<float> data;

  Image2D() = default;
  Image2D(std::size_t w, std::size_t h, float fill = 0.0f) : nx(w), ny(h), data(w * h, fill) {}
  float& operator()(std::size_t x, std::size_t y) { return data[x + nx * y]; }
  float operator()(std::size_t x, std::size_t y) const { return data[x + nx * y]; }
};

Image2D slice_image(const CTVolume& v, std::size_t z);

}  // namespace ichseg
