#pragma once
// Single-file NIfTI-1 (.nii / .nii.gz) reading and writing.

#include <filesystem>
#include <string>

#include "ichseg/volume.hpp"

namespace ichseg {

/// Loads a 3D scalar volume; any supported datatype is converted to float with
/// scl_slope/scl_inter applied. The id is the file name without extension.
CTVolume load_volume(const std::filesystem::path& path);

/// Loads an integer-valued label volume. Values must be integers in [0, 255];
/// callers validate binarity where they need it.
BinaryMask load_mask(const std::filesystem::path& path);

/// Writes float32 voxels, carrying the volume's header metadata when present.
void save_volume(const CTVolume& volume, const std::filesystem::path& path);

/// Writes uint8 voxels. Throws when the carried header disagrees with the
/// mask's shape or spacing.
void save_mask(const BinaryMask& mask, const std::filesystem::path& path);

/// "sub-001.nii.gz" -> "sub-001"
std::string volume_id_from_path(const std::filesystem::path& path);

}  // namespace ichseg
