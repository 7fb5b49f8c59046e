#pragma once
// Volumetric overlap and surface-distance metrics, paired t-test and the
// per-cohort report.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ichseg/volume.hpp"

namespace ichseg::metrics {

/// 2|P n G| / (|P| + |G|); 1.0 when both masks are empty.
double dice(const BinaryMask& pred, const BinaryMask& gt);

/// |V_pred - V_gt| / V_gt with volumes as voxel counts. Throws on empty gt.
double rvd(const BinaryMask& pred, const BinaryMask& gt);

/// |P n G| / |G|. Throws on empty gt.
double tpr(const BinaryMask& pred, const BinaryMask& gt);

/// Boundary voxels under 6-connectivity: foreground voxels with at least one
/// face neighbour that is background or outside the grid.
Grid3<std::uint8_t> boundary(const Grid3<std::uint8_t>& mask);

/// Exact Euclidean distance (mm) from every voxel to the nearest nonzero
/// voxel of `features`. Infinity everywhere when `features` is empty.
std::vector<double> distance_to(const Grid3<std::uint8_t>& features, const Spacing& spacing);

/// Symmetric Hausdorff distance between the boundaries, in mm. Throws when
/// either mask is empty.
double hausdorff(const BinaryMask& pred, const BinaryMask& gt, const Spacing& spacing);

/// 95th percentile of the pooled directed boundary distances.
double hausdorff95(const BinaryMask& pred, const BinaryMask& gt, const Spacing& spacing);

/// Boundary elements of both surfaces lying within tau mm of the other
/// surface, over the total number of boundary elements. 1.0 when both masks
/// are empty, 0.0 when exactly one is.
double surface_dice(const BinaryMask& pred, const BinaryMask& gt, const Spacing& spacing, double tau_mm);

struct TTest {
  double t = 0.0;
  double p = 1.0;
  std::size_t dof = 0;
};

/// Two-tailed paired t-test on per-volume scores.
TTest paired_ttest(const std::vector<double>& a, const std::vector<double>& b);

struct VolumeScores {
  std::optional<double> dice;
  std::optional<double> rvd;
  std::optional<double> tpr;
  std::optional<double> hd_mm;
  std::optional<double> hd95_mm;
  std::optional<double> surface_dice;
  std::map<std::string, std::string> undefined;  // metric -> reason
};

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::size_t n = 0;
};

struct ReportConfig {
  double tolerance_mm = 1.0;
  double threshold = 0.5;  // echo of the binarization threshold used upstream
};

struct MetricsReport {
  std::map<std::string, VolumeScores> per_volume;
  std::map<std::string, Aggregate> aggregate;
  ReportConfig config;
};

VolumeScores score_volume(const BinaryMask& pred, const BinaryMask& gt, const ReportConfig& config);

/// Scores every id present in both maps. Ids present in only one are ignored;
/// throws when no id overlaps.
MetricsReport report(const std::map<std::string, BinaryMask>& preds, const std::map<std::string, BinaryMask>& gts,
                     const ReportConfig& config);

std::string report_json(const MetricsReport& r);
std::string report_csv(const MetricsReport& r);
void write_report(const MetricsReport& r, const std::filesystem::path& json_path, const std::filesystem::path& csv_path);

}  // namespace ichseg::metrics
