#pragma once
// Per-slice hemorrhage classifier trained in three stages: residual backbone
// with a pooled FC head, backbone plus a recurrent head over slice windows,
// and the final model with the FC head restored on the trained backbone.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ichseg/nn/layers.hpp"
#include "ichseg/nn/optim.hpp"
#include "ichseg/nn/resnet.hpp"
#include "ichseg/preprocess.hpp"
#include "ichseg/volume_io.hpp"

namespace ichseg::classifier {

/// Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7].
/// Targets must be 0 or 1; probabilities outside [0, 1] throw.
double bce_loss(double y, double y_hat);
double bce_loss(std::span<const float> y, std::span<const float> y_hat);
/// d bce_loss(y, y_hat) / d y_hat for a single element, on the clamped value.
double bce_grad(double y, double y_hat);

inline constexpr double kBceEps = 1e-7;

enum class Stage { kBackbone, kBackboneSequence, kFinal };
std::string to_string(Stage s);
Stage parse_stage(const std::string& s);

enum class Direction { kForward, kBidirectional };
std::string to_string(Direction d);
Direction parse_direction(const std::string& s);

struct BackboneConfig {
  std::string architecture_id = "resnet-tiny";
  std::size_t input_channels = 3;

  std::size_t feature_dim() const;
  void validate() const;
};

struct SequenceHeadConfig {
  std::size_t hidden_dim = 32;
  std::size_t window_length = 5;
  Direction direction = Direction::kForward;

  void validate() const;
};

struct TrainConfig {
  nn::OptimizerKind optimizer = nn::OptimizerKind::kSgd;
  double momentum = 0.9;
  std::size_t batch_size = 32;  // slices, or windows in the sequence stage
  double learning_rate = 1e-4;
  double weight_decay = 0.0;
  int max_epochs = 100;
  int patience = 25;
  std::uint64_t seed = 0;
  bool rebalance = false;

  void validate() const;
};

struct FinalizeConfig {
  int epochs = 200;
  double learning_rate = 0.01;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  bool stopped_early = false;

  void write_csv(const std::filesystem::path& path) const;
};

struct LabeledStack {
  SliceStack stack;
  SliceLabelSet labels;
};
using SliceDataset = std::vector<LabeledStack>;

/// Packs `count` slices starting at `first` into a {count, 3, 1, ny, nx} tensor.
nn::Tensor slice_tensor(const SliceStack& stack, std::size_t first, std::size_t count);

/// Anything that maps a batch of 3-channel slices to per-slice logits.
class SliceScorer {
 public:
  virtual ~SliceScorer() = default;
  virtual std::vector<float> slice_logits(const nn::Tensor& slices) const = 0;
};

class ClassifierModel final : public SliceScorer {
 public:
  ClassifierModel(const BackboneConfig& config, std::uint64_t seed);

  Stage stage() const { return stage_; }
  const BackboneConfig& backbone_config() const { return config_; }
  const std::optional<SequenceHeadConfig>& sequence_config() const { return seq_config_; }

  /// Per-slice logits through the pooled FC head (stages backbone and final).
  std::vector<float> slice_logits(const nn::Tensor& slices) const override;
  float predict_logit(const nn::Tensor& slice) const;
  /// Per-slice logits for one contiguous window (stage backbone+sequence).
  std::vector<float> window_logits(const nn::Tensor& window) const;
  /// Per-slice logits for a whole stack using the head of the current stage.
  std::vector<float> stack_logits(const SliceStack& stack) const;

  /// Final convolutional feature map {N, C, 1, h, w}.
  nn::Tensor feature_map(const nn::Tensor& slices) const;
  /// Pooled FC head; throws when detached (stage backbone+sequence).
  const nn::Linear& fc() const;
  nn::Linear& mutable_fc();

  std::uint64_t backbone_checksum() const;
  nn::ConstParamRefs parameters() const;

  void save(const std::filesystem::path& path) const;
  static ClassifierModel load(const std::filesystem::path& path);

 private:
  struct SequenceHead {
    nn::Lstm forward_lstm;
    std::optional<nn::Lstm> backward_lstm;
    nn::Linear out;
  };
  struct SeqTrace;

  void check_slices(const nn::Tensor& slices) const;
  nn::Tensor sequence_forward(const nn::Tensor& pooled, std::size_t batch, std::size_t steps, SeqTrace* trace) const;
  nn::Tensor sequence_backward(const nn::Tensor& pooled, std::size_t batch, std::size_t steps, const SeqTrace& trace,
                               const nn::Tensor& dlogits);
  nn::ParamRefs trainable_params();

  BackboneConfig config_;
  Stage stage_ = Stage::kBackbone;
  nn::ResNet backbone_;
  nn::Linear fc_;
  std::optional<SequenceHeadConfig> seq_config_;
  std::optional<SequenceHead> seq_;

  friend ClassifierModel train_backbone(const SliceDataset&, const SliceDataset&, const BackboneConfig&,
                                        const TrainConfig&, TrainLog*);
  friend ClassifierModel attach_sequence_head(ClassifierModel, const SequenceHeadConfig&, std::uint64_t);
  friend ClassifierModel train_sequence(ClassifierModel, const SliceDataset&, const SliceDataset&, const TrainConfig&,
                                        TrainLog*);
  friend ClassifierModel finalize(ClassifierModel, const SliceDataset&, const FinalizeConfig&);
};

/// Stage 1. Requires both classes among the training slices.
ClassifierModel train_backbone(const SliceDataset& train, const SliceDataset& val, const BackboneConfig& config,
                               const TrainConfig& train_config, TrainLog* log = nullptr);

/// Detaches the FC head and adds a recurrent head over pooled slice features.
ClassifierModel attach_sequence_head(ClassifierModel model, const SequenceHeadConfig& config, std::uint64_t seed);

/// Stage 2. Backbone and sequence head are trained jointly on slice windows.
ClassifierModel train_sequence(ClassifierModel model, const SliceDataset& train, const SliceDataset& val,
                               const TrainConfig& train_config, TrainLog* log = nullptr);

/// Stage 3. Drops the sequence head and recalibrates the FC head on frozen
/// pooled features of the training slices.
ClassifierModel finalize(ClassifierModel model, const SliceDataset& train, const FinalizeConfig& config);

/// Window start offsets covering `slices` with non-overlapping windows; the
/// last window may run past the end and is padded by edge replication.
std::vector<std::size_t> window_starts(std::size_t slices, std::size_t window_length);

}  // namespace ichseg::classifier
