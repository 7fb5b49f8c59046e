#pragma once
// Weak-label derivation and cohort splitting.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ichseg/volume.hpp"

namespace ichseg {

/// One binary presence label per axial slice.
struct SliceLabelSet {
  std::string volume_id;
  std::vector<std::uint8_t> labels;

  std::size_t positives() const;
};

/// labels[k] = 1 iff slice k holds more than `min_voxels` lesion voxels
/// (default 0: any lesion voxel marks the slice positive).
SliceLabelSet derive_slice_labels(const LesionMask& mask, std::size_t min_voxels = 0);

struct DatasetSplit {
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  std::vector<std::string> test_ids;
  int fold_index = 0;
};

/// Seeded shuffle, then fold f takes the f-th test block, the following
/// validation block (cyclically) and the remainder for training. Test blocks
/// are disjoint across folds; sizes follow a 70/10/20 split by rounding.
std::vector<DatasetSplit> make_splits(const std::vector<std::string>& ids, int fold_count, std::uint64_t seed);

void write_split_manifest(const std::vector<DatasetSplit>& splits, std::uint64_t seed,
                          const std::filesystem::path& path);
std::vector<DatasetSplit> read_split_manifest(const std::filesystem::path& path);

}  // namespace ichseg
