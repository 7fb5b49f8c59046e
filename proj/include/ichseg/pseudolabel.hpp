#pragma once
// Pseudo-lesion masks: K-means over the thresholded CAM region, then pick the
// cluster whose removal lowers the classifier logit the most.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ichseg/classifier.hpp"
#include "ichseg/volume.hpp"

namespace ichseg::pseudolabel {

enum class FeatureSpace { kIntensity, kIntensityXY };
std::string to_string(FeatureSpace f);
FeatureSpace parse_feature_space(const std::string& s);

struct ClusterConfig {
  int k = 4;
  FeatureSpace feature_space = FeatureSpace::kIntensity;
  int max_iters = 100;
  double tol = 1e-9;  // stop when no centroid moves further than this
  std::uint64_t seed = 0;

  void validate() const;
};

struct ClusterAssignment {
  std::string volume_id;
  BinaryMask region;
  std::vector<std::size_t> voxels;  // linear indices of region voxels, ascending
  std::vector<int> labels;          // one per entry of `voxels`
  std::vector<std::vector<double>> centroids;
  std::vector<double> wcss_history;  // after every assignment step
  int iterations = 0;
  bool converged = false;

  int k() const { return static_cast<int>(centroids.size()); }
  std::vector<std::size_t> cluster_sizes() const;
};

/// Feature vectors for the region voxels (intensity, optionally x/nx and y/ny).
std::vector<std::vector<double>> region_features(const CTVolume& volume, const std::vector<std::size_t>& voxels,
                                                 FeatureSpace space);

/// Within-cluster sum of squares for given features, labels and centroids.
double wcss(const std::vector<std::vector<double>>& features, const std::vector<int>& labels,
            const std::vector<std::vector<double>>& centroids);

/// Seeded k-means++ initialization followed by Lloyd iterations. Empty
/// clusters are re-seeded at the point farthest from its centroid.
ClusterAssignment kmeans_region(const CTVolume& volume, const BinaryMask& region, const ClusterConfig& config);

struct Selection {
  int selected = -1;
  std::vector<double> scores;  // +inf when a cluster touches no positive slice
  std::vector<std::size_t> sizes;
  std::vector<std::uint8_t> positive_slices;
};

/// For each cluster, zero its voxels in every channel of the slices it touches
/// and average the scorer's logits over those slices that score positive
/// (logit >= 0) unmodified. Returns the lowest mean; ties go to the larger
/// cluster, then the lower index. Throws when every score is +inf.
Selection differential_select(const ClusterAssignment& assignment, const SliceStack& input,
                              const classifier::SliceScorer& scorer);

struct PseudoMask {
  BinaryMask mask;
  int source_cluster = -1;
};

PseudoMask build_pseudomask(const ClusterAssignment& assignment, int selected);

/// Audit record: k, seed, feature space, per-cluster sizes and scores, selection.
nlohmann::json sidecar(const ClusterConfig& config, const ClusterAssignment& assignment, const Selection& selection);

}  // namespace ichseg::pseudolabel
