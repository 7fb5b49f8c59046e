#pragma once
// Lesion segmenter: a 3D U-Net trained on (pseudo-)masks with a Dice plus
// BCE objective, and sliding-window inference over whole volumes.

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ichseg/nn/unet.hpp"
#include "ichseg/preprocess.hpp"
#include "ichseg/volume.hpp"

namespace ichseg::segmenter {

struct UNetConfig {
  std::size_t depth = 3;
  std::size_t base_channels = 16;
  std::size_t patch_x = 128, patch_y = 128, patch_z = 16;
  double patch_overlap = 0.5;
  double epsilon = 1e-6;

  nn::Dim3 patch() const { return {patch_z, patch_y, patch_x}; }
  void validate() const;
};

struct LossTerms {
  double dice = 0.0;  // 1 - soft Dice
  double bce = 0.0;   // mean over voxels
  double total() const { return dice + bce; }
};

/// Soft Dice term with smoothing `epsilon` plus mean BCE. The BCE term uses
/// probabilities clamped to [1e-7, 1 - 1e-7]; the Dice term uses y_hat as is.
LossTerms combined_loss(std::span<const float> y, std::span<const float> y_hat, double epsilon);
/// d combined_loss / d y_hat per element.
std::vector<double> combined_loss_grad(std::span<const float> y, std::span<const float> y_hat, double epsilon);
/// Loss at y_hat = sigmoid(z) with the gradient with respect to the logits z.
LossTerms combined_loss_logits(std::span<const float> y, std::span<const float> z, double epsilon,
                               std::span<float> dz);

struct Patch {
  Grid3<float> image;
  Grid3<std::uint8_t> mask;
  bool lesion_centred = false;
};

/// Copies the box starting at (x0, y0, z0); coordinates outside the volume
/// take the nearest edge value in both image and mask.
Patch extract_patch(const CTVolume& image, const BinaryMask& mask, long x0, long y0, long z0, nn::Dim3 size);

/// Seeded patch stream. Even draws are centred near a random mask voxel when
/// the mask is nonempty, odd draws are uniform over the volume.
class PatchSampler {
 public:
  PatchSampler(const CTVolume& image, const BinaryMask& mask, nn::Dim3 size, std::uint64_t seed);
  Patch next();

 private:
  long uniform_start(std::size_t extent, std::size_t patch);
  const CTVolume* image_;
  const BinaryMask* mask_;
  nn::Dim3 size_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> lesion_;
  std::size_t draws_ = 0;
};

std::vector<Patch> sample_patches(const CTVolume& image, const BinaryMask& mask, const UNetConfig& config,
                                  std::uint64_t seed, std::size_t count);

struct SegTrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 4;
  int max_epochs = 100;
  int patience = 25;
  std::size_t patches_per_epoch = 64;
  std::size_t val_patches_per_volume = 4;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SegEpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_dice_term = 0.0;
};

struct SegTrainLog {
  std::vector<SegEpochRecord> epochs;
  int best_epoch = 0;
  bool stopped_early = false;

  void write_csv(const std::filesystem::path& path) const;
};

/// Equalized single-channel volume with its training target.
struct TrainingVolume {
  CTVolume image;
  BinaryMask target;
};

/// Maps {N, 1, D, H, W} patches to voxel probabilities of the same shape.
class PatchPredictor {
 public:
  virtual ~PatchPredictor() = default;
  virtual nn::Dim3 patch() const = 0;
  virtual nn::Tensor probabilities(const nn::Tensor& patches) const = 0;
};

class SegmenterModel final : public PatchPredictor {
 public:
  SegmenterModel(const UNetConfig& config, std::uint64_t seed);

  const UNetConfig& config() const { return config_; }
  nn::Dim3 patch() const override { return config_.patch(); }
  nn::Tensor probabilities(const nn::Tensor& patches) const override;
  nn::Tensor logits(const nn::Tensor& patches, nn::UNet3d::Trace* trace = nullptr) const;
  void backward(const nn::UNet3d::Trace& trace, const nn::Tensor& dlogits) { net_.backward(trace, dlogits); }

  nn::ParamRefs parameters();
  nn::ConstParamRefs parameters() const;
  std::uint64_t checksum() const;

  void save(const std::filesystem::path& path) const;
  static SegmenterModel load(const std::filesystem::path& path);

 private:
  UNetConfig config_;
  nn::UNet3d net_;
};

/// Adam on sampled patches with early stopping on a fixed validation patch
/// set (the training patches when no validation volume is given). Throws
/// "no positive supervision" when every training target is empty.
SegmenterModel train_unet(const std::vector<TrainingVolume>& train, const std::vector<TrainingVolume>& val,
                          const UNetConfig& config, const SegTrainConfig& train_config, SegTrainLog* log = nullptr);

struct PredictConfig {
  double patch_overlap = 0.5;
  double threshold = 0.5;
  std::size_t min_component_size = 0;  // 0 keeps every component
  double air_hu = -500.0;               // predict_volume: raw voxels at or below are not brain
};

struct SegMask {
  std::string volume_id;
  Grid3<float> probabilities;
  BinaryMask binarized;
  double threshold = 0.5;
};

/// Window start offsets along one axis; the last window ends at the extent.
std::vector<std::size_t> window_starts(std::size_t extent, std::size_t patch, double overlap);

/// Sliding-window inference on an already equalized volume. Overlapping
/// windows are averaged; voxels outside `brain` are forced to 0.
SegMask predict_equalized(const PatchPredictor& model, const CTVolume& equalized, const BrainMask& brain,
                          const PredictConfig& config);

/// Skull strip and equalize a raw volume, then predict. Voxels at or below
/// `air_hu` in the raw volume are removed from the brain mask, so slices where
/// skull stripping falls back to an all-ones mask cannot light up in air.
SegMask predict_volume(const SegmenterModel& model, const CTVolume& raw, const SkullStripConfig& strip,
                       const PredictConfig& config);

/// Clears 26-connected components with fewer than `min_size` voxels.
void remove_small_components(BinaryMask& mask, std::size_t min_size);

}  // namespace ichseg::segmenter
