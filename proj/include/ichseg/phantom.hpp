#pragma once
// Synthetic head phantoms: air, an optional bright skull ring, noisy brain
// tissue and hyperdense blobs that persist over a few contiguous slices.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ichseg/volume.hpp"

namespace ichseg::phantom {

struct PhantomSpec {
  std::size_t nx = 64, ny = 64, nz = 12;
  Spacing spacing{0.9, 0.9, 5.0};
  std::size_t blob_count = 1;
  double blob_radius_min = 6.0, blob_radius_max = 10.0;  // voxels, in-plane
  double blob_hu_min = 65.0, blob_hu_max = 85.0;
  double tissue_hu = 35.0;
  double noise_sd = 4.0;  // tissue and blob only
  bool skull_ring = true;
  std::size_t persistence_min = 3, persistence_max = 5;  // slices per blob
  std::size_t count = 20;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Phantom {
  CTVolume volume;
  LesionMask lesion;
};

/// Volume `index` of the cohort; deterministic in (spec, index).
Phantom generate(const PhantomSpec& spec, std::size_t index);

std::string phantom_id(std::size_t index);

/// Writes <dir>/volumes/<id>.nii.gz and <dir>/masks/<id>.nii.gz for every
/// phantom and returns the ids in order.
std::vector<std::string> write_cohort(const PhantomSpec& spec, const std::filesystem::path& dir);

}  // namespace ichseg::phantom
