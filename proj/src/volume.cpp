#include "ichseg/volume.hpp"

#include <algorithm>
#include <cmath>

namespace ichseg {

std::string to_string(const Dims& d) {
  return std::to_string(d.nx) + "x" + std::to_string(d.ny) + "x" + std::to_string(d.nz);
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count_if(voxels.data().begin(), voxels.data().end(),
                                                [](std::uint8_t v) { return v != 0; }));
}

BinaryMask mask_like(const CTVolume& v, std::string id) {
  return BinaryMask{id.empty() ? v.id : std::move(id), Grid3<std::uint8_t>(v.dims(), 0), v.spacing, v.meta};
}

BinaryMask mask_like(const BinaryMask& m, std::string id) {
  return BinaryMask{id.empty() ? m.id : std::move(id), Grid3<std::uint8_t>(m.dims(), 0), m.spacing, m.meta};
}

void validate(const CTVolume& v) {
  if (!v.spacing.valid()) throw Error("volume '" + v.id + "': spacing must be strictly positive");
  const Dims& d = v.dims();
  if (d.nx == 0 || d.ny == 0 || d.nz == 0) throw Error("volume '" + v.id + "': empty dimensions " + to_string(d));
  if (v.voxels.size() != d.voxels()) throw Error("volume '" + v.id + "': voxel count mismatch");
}

void validate_binary(const BinaryMask& m, std::string_view what) {
  for (std::uint8_t v : m.voxels.data())
    if (v > 1) throw Error(std::string(what) + " '" + m.id + "' is not binary (value " + std::to_string(v) + ")");
}

Image2D slice_image(const CTVolume& v, std::size_t z) {
  Image2D img(v.dims().nx, v.dims().ny);
  auto s = v.voxels.slice(z);
  std::copy(s.begin(), s.end(), img.data.begin());
  return img;
}

}  // namespace ichseg
