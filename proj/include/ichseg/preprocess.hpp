#pragma once
// CT windowing into classifier channels, bilateral smoothing, skull removal
// and in-brain histogram equalization.

#include <array>
#include <string>
#include <vector>

#include "ichseg/volume.hpp"

namespace ichseg {

/// HU window: maps [center - width/2, center + width/2] onto [0, 1].
struct WindowSpec {
  double center = 40.0;
  double width = 80.0;
};

using WindowSet = std::array<WindowSpec, 3>;

/// Brain, subdural and bone windows.
WindowSet default_windows();

struct SkullStripConfig {
  double bilateral_spatial_sigma = 2.0;  // pixels
  double bilateral_range_sigma = 30.0;   // intensity units
  double intensity_percentile = 95.0;

  void validate() const;
};

/// Channel-major (3 x ny x nx) image in [0, 1].
struct ThreeChannelImage {
  std::size_t nx = 0;
  std::size_t ny = 0;
  std::vector<float> data;

  float* channel(std::size_t c) { return data.data() + c * nx * ny; }
  const float* channel(std::size_t c) const { return data.data() + c * nx * ny; }
};

ThreeChannelImage to_three_channel(const Image2D& slice, const WindowSet& windows);

/// Edge-preserving smoothing with a Gaussian spatial kernel truncated at
/// ceil(3 sigma) and a Gaussian range kernel; weights renormalized at borders.
Image2D bilateral_smooth(const Image2D& slice, const SkullStripConfig& config);

/// Linear-interpolated percentile (numpy "linear" method) of a nonempty range.
double percentile(std::vector<float> values, double pct);

struct SkullStripResult {
  CTVolume stripped;
  BrainMask brain;
  std::vector<std::string> warnings;
  std::vector<std::size_t> slices_without_skull;
};

/// Per slice: smooth, mark pixels at or above the configured percentile (and
/// above the slice minimum) as skull, keep the convex-hull interior minus the
/// skull. Slices with no skull candidates keep an all-ones mask and a warning.
SkullStripResult strip_skull(const CTVolume& volume, const SkullStripConfig& config);

/// Per-slice histogram equalization over in-mask voxels: output is the
/// empirical CDF of the in-mask intensities; out-of-mask voxels are 0.
CTVolume equalize(const CTVolume& volume, const BrainMask& mask);

/// Stack of 3-channel classifier inputs, one per axial slice, with everything
/// outside the brain mask set to 0 in all channels.
struct SliceStack {
  std::string volume_id;
  std::size_t nx = 0;
  std::size_t ny = 0;
  std::size_t nz = 0;
  std::vector<float> data;  // nz x 3 x ny x nx

  static constexpr std::size_t kChannels = 3;
  std::size_t slice_floats() const { return kChannels * nx * ny; }
  float* slice(std::size_t z) { return data.data() + z * slice_floats(); }
  const float* slice(std::size_t z) const { return data.data() + z * slice_floats(); }
};

SliceStack classifier_input(const CTVolume& stripped, const BrainMask& brain, const WindowSet& windows);

/// Full preprocessing chain for one volume.
struct Preprocessed {
  SkullStripResult strip;
  CTVolume equalized;
};

Preprocessed preprocess_volume(const CTVolume& volume, const SkullStripConfig& config);

}  // namespace ichseg
