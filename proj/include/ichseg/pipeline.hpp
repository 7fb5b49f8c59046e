#pragma once
// Staged training and evaluation pipeline over a cohort directory:
//   <data_dir>/volumes/<id>.nii.gz   raw CT volumes
//   <data_dir>/masks/<id>.nii.gz     lesion masks (slice labels for training,
//                                    voxel truth for evaluation only)
// Each stage writes <work_dir>/<stage>/ with a manifest.json that records the
// stage fingerprint, its config entries and input/output artifact hashes.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ichseg/config.hpp"
#include "ichseg/metrics.hpp"

namespace ichseg::pipeline {

enum class StageId { kPreprocess, kClassifier, kSequence, kCam, kPseudolabels, kUnet, kPredict, kEvaluate, kOverlays };
std::string stage_name(StageId s);

/// Stages executed for a config, in order.
std::vector<StageId> stages_for(const RunConfig& config);

struct RunOptions {
  bool force = false;                // rerun stages whose fingerprint changed
  std::optional<StageId> only;       // run just this stage; upstream must be complete
};

struct StageOutcome {
  StageId stage;
  bool skipped = false;
  std::string fingerprint;
  double seconds = 0.0;
};

struct RunResult {
  std::filesystem::path run_dir;
  std::vector<StageOutcome> stages;
};

RunResult run_pipeline(const RunConfig& config, const RunOptions& options = {});

/// Cohort ids: file stems under <data_dir>/volumes, sorted.
std::vector<std::string> cohort_ids(const std::filesystem::path& data_dir);

/// Scores every mask in pred_dir against the same id in gt_dir and writes
/// metrics.json and metrics.csv to out_dir. A prediction without a ground
/// truth file is an error naming the id.
metrics::MetricsReport evaluate_dirs(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                                     const metrics::ReportConfig& config, const std::filesystem::path& out_dir);

/// Loads masks (*.nii, *.nii.gz) keyed by volume id.
std::map<std::string, BinaryMask> load_mask_dir(const std::filesystem::path& dir);

}  // namespace ichseg::pipeline
