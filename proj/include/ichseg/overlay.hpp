#pragma once
// Per-slice PNG composites for visual inspection: image, CAM, pseudo-mask
// and prediction panels side by side.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ichseg/volume.hpp"

namespace ichseg::overlay {

/// 8-bit RGB, rows top to bottom.
void write_png(const std::filesystem::path& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& rgb);

struct Panels {
  const CTVolume* image = nullptr;       // intensities in [0, 1]
  const Grid3<float>* cam = nullptr;     // saliency in [0, 1]
  const BinaryMask* pseudo = nullptr;
  const BinaryMask* prediction = nullptr;
  const BinaryMask* truth = nullptr;     // outlined on the prediction panel
};

/// Writes <dir>/<id>_zNNN.png for every slice; missing panels are black.
/// Returns the number of files written.
std::size_t write_slices(const Panels& panels, const std::filesystem::path& dir);

}  // namespace ichseg::overlay
