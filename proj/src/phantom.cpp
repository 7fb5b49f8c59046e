#include "ichseg/phantom.hpp"

#include <cmath>
#include <cstdio>
#include <random>

#include "ichseg/nifti.hpp"

namespace ichseg::phantom {

namespace {

double brain_radius(const PhantomSpec& s) { return 0.40 * static_cast<double>(std::min(s.nx, s.ny)); }

double ring_width(const PhantomSpec& s) { return std::max(3.0, 0.05 * static_cast<double>(std::min(s.nx, s.ny))); }

}  // namespace

void PhantomSpec::validate() const {
  if (nx < 8 || ny < 8 || nz < 1) throw Error("phantom dims must be at least 8 x 8 x 1");
  if (!spacing.valid()) throw Error("phantom spacing must be positive");
  if (!(blob_radius_min > 0.0 && blob_radius_min <= blob_radius_max)) throw Error("blob radius range is invalid");
  if (!(blob_hu_min <= blob_hu_max)) throw Error("blob intensity range is invalid");
  if (!(blob_hu_min > tissue_hu)) throw Error("blob intensity must exceed tissue intensity");
  if (!(noise_sd >= 0.0)) throw Error("noise_sd must be non-negative");
  if (persistence_min < 1 || persistence_min > persistence_max) throw Error("persistence range is invalid");
  if (persistence_max > nz) throw Error("blob persistence exceeds the slice count");
  if (2.0 * blob_radius_max + 4.0 > 2.0 * brain_radius(*this))
    throw Error("blob larger than the brain region of a " + std::to_string(nx) + " x " + std::to_string(ny) +
                " volume");
  if (count == 0) throw Error("phantom count must be positive");
}

std::string phantom_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "phantom_%03zu", index);
  return buf;
}

Phantom generate(const PhantomSpec& spec, std::size_t index) {
  spec.validate();
  std::mt19937_64 rng(spec.seed * 0x9e3779b97f4a7c15ull + index + 1);
  const Dims d{spec.nx, spec.ny, spec.nz};
  const std::string id = phantom_id(index);
  Phantom p{CTVolume{id, Grid3<float>(d, -1000.0f), spec.spacing, {}}, LesionMask{id, Grid3<std::uint8_t>(d, 0), spec.spacing, {}}};
  const double cx = spec.nx / 2.0, cy = spec.ny / 2.0;
  const double r_brain = brain_radius(spec);
  const double r_ring = r_brain + ring_width(spec);
  std::normal_distribution<double> noise(0.0, spec.noise_sd);

  for (std::size_t z = 0; z < d.nz; ++z)
    for (std::size_t y = 0; y < d.ny; ++y)
      for (std::size_t x = 0; x < d.nx; ++x) {
        const double r = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
        if (r < r_brain)
          p.volume.voxels(x, y, z) = static_cast<float>(spec.tissue_hu + noise(rng));
        else if (spec.skull_ring && r < r_ring)
          p.volume.voxels(x, y, z) = 1000.0f;
      }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t b = 0; b < spec.blob_count; ++b) {
    const std::size_t persist =
        std::uniform_int_distribution<std::size_t>(spec.persistence_min, spec.persistence_max)(rng);
    const std::size_t z0 = std::uniform_int_distribution<std::size_t>(0, d.nz - persist)(rng);
    const double radius = spec.blob_radius_min + (spec.blob_radius_max - spec.blob_radius_min) * unit(rng);
    const double reach = r_brain - radius - 2.0;
    const double rho = reach * std::sqrt(unit(rng));
    const double phi = 2.0 * M_PI * unit(rng);
    const double bx = cx + rho * std::cos(phi), by = cy + rho * std::sin(phi);
    const double hu = spec.blob_hu_min + (spec.blob_hu_max - spec.blob_hu_min) * unit(rng);
    const double half = (static_cast<double>(persist) - 1.0) / 2.0;
    for (std::size_t k = 0; k < persist; ++k) {
      const std::size_t z = z0 + k;
      const double t = std::fabs(static_cast<double>(k) - half) / (half + 1.0);
      const double rz = std::max(radius * std::sqrt(1.0 - t * t), 0.75);
      for (std::size_t y = 0; y < d.ny; ++y)
        for (std::size_t x = 0; x < d.nx; ++x) {
          if (std::hypot(x + 0.5 - bx, y + 0.5 - by) > rz) continue;
          p.volume.voxels(x, y, z) = static_cast<float>(hu + noise(rng));
          p.lesion.voxels(x, y, z) = 1;
        }
    }
  }
  return p;
}

std::vector<std::string> write_cohort(const PhantomSpec& spec, const std::filesystem::path& dir) {
  spec.validate();
  std::filesystem::create_directories(dir / "volumes");
  std::filesystem::create_directories(dir / "masks");
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < spec.count; ++i) {
    const Phantom p = generate(spec, i);
    save_volume(p.volume, dir / "volumes" / (p.volume.id + ".nii.gz"));
    save_mask(p.lesion, dir / "masks" / (p.lesion.id + ".nii.gz"));
    ids.push_back(p.volume.id);
  }
  return ids;
}

}  // namespace ichseg::phantom
