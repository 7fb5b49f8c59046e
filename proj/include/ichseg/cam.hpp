#pragma once
// Class activation maps from the pooled-feature/FC classifier structure.

#include <span>
#include <string>

#include "ichseg/classifier.hpp"
#include "ichseg/volume.hpp"

namespace ichseg::cam {

enum class Normalization { kPerVolume, kPerSlice };
std::string to_string(Normalization n);
Normalization parse_normalization(const std::string& s);

struct CAMConfig {
  double threshold = 0.7;
  Normalization normalization = Normalization::kPerVolume;
  /// Zero the CAM of slices the classifier scores below probability 0.5.
  bool gate_by_probability = false;

  void validate() const;
};

/// Saliency in [0, 1] on the source volume grid.
struct CAMVolume {
  std::string volume_id;
  Grid3<float> saliency;
  Spacing spacing;
  ImageMeta meta;
};

/// ReLU(sum_c w[c] * F[c]) for a {1, C, 1, h, w} feature map.
Image2D cam_from_features(const nn::Tensor& features, std::span<const float> weights);

/// CAM of one {1, 3, 1, H, W} slice at feature-map resolution. Needs the
/// pooled FC head, so sequence-stage models are rejected.
Image2D slice_cam(const classifier::ClassifierModel& model, const nn::Tensor& slice);

/// Bilinear resampling with pixel-centre alignment and edge clamping.
Image2D upsample_bilinear(const Image2D& src, std::size_t nx, std::size_t ny);

/// Min-max normalization of a stack of slice maps; constant stacks map to zero.
void normalize(Grid3<float>& saliency, Normalization scope);

/// Per-slice CAMs upsampled to the slice grid, stacked and normalized.
/// `reference` supplies the id, spacing and header of the output.
CAMVolume assemble_cam(const classifier::ClassifierModel& model, const SliceStack& stack, const CTVolume& reference,
                       const CAMConfig& config);

/// saliency >= threshold.
BinaryMask threshold_cam(const CAMVolume& cam, double threshold);

}  // namespace ichseg::cam
